// Independent reference implementations used only by tests. They share no
// code with the library beyond reading parameter values and vocabularies.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mcst/decode.hpp"
#include "mcst/model.hpp"

namespace oracle {

// ------------------------------------------------------------------ strings

/// Longest common subsequence length by enumerating every subset of `a`.
template <class T>
std::size_t brute_force_lcs(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t best = 0;
  const std::size_t subsets = std::size_t{1} << a.size();
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    std::size_t len = 0, j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (j < b.size() && !(b[j] == a[i])) ++j;
      if (j == b.size()) ok = false;
      else {
        ++j;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

/// Full-table Levenshtein distance.
template <class T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

/// Nearest centroid by scanning all rows; ties keep the first.
inline int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) d += (centroids(k, j) - x(j)) * (centroids(k, j) - x(j));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

// ------------------------------------------------------- straight-line model

using M = std::vector<std::vector<double>>;

inline M zeros(std::size_t r, std::size_t c) { return M(r, std::vector<double>(c, 0.0)); }

inline M affine(const M& x, const Eigen::MatrixXd& w, const Eigen::RowVectorXd& b) {
  M y = zeros(x.size(), static_cast<std::size_t>(w.cols()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(j);
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][static_cast<std::size_t>(k)] * w(k, j);
      y[i][static_cast<std::size_t>(j)] = s;
    }
  return y;
}

inline M norm(const M& x, const mcst::LayerNormParams& p) {
  M y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * p.gain(static_cast<Eigen::Index>(j)) +
                p.bias(static_cast<Eigen::Index>(j));
  }
  return y;
}

inline void add_into(M& y, const M& d) {
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += d[i][j];
}

inline M attend(const mcst::AttentionParams& p, const M& xq, const M& xkv, int heads, bool causal,
                const std::vector<bool>* hide) {
  const M q = affine(xq, p.wq, p.bq), k = affine(xkv, p.wk, p.bk), v = affine(xkv, p.wv, p.bv);
  const std::size_t d = q[0].size(), dh = d / static_cast<std::size_t>(heads);
  M ctx = zeros(xq.size(), d);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < xq.size(); ++i) {
      std::vector<double> w(xkv.size(), 0.0);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < xkv.size(); ++j) {
        const bool hidden = (causal && j > i) || (hide && (*hide)[j]);
        if (hidden) {
          w[j] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][off + c] * k[j][off + c];
        w[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (auto& x : w) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < xkv.size(); ++j)
        for (std::size_t c = 0; c < dh; ++c) ctx[i][off + c] += w[j] / z * v[j][off + c];
    }
  }
  return affine(ctx, p.wo, p.bo);
}

inline M ffn(const mcst::FeedForwardParams& p, const M& x) {
  M h = affine(x, p.w1, p.b1);
  for (auto& row : h)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  return affine(h, p.w2, p.b2);
}

inline M embed(const Eigen::MatrixXd& table, const std::vector<int>& ids, bool positional) {
  const auto d = static_cast<std::size_t>(table.cols());
  M x = zeros(ids.size(), d);
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t j = 0; j < d; ++j) {
      x[t][j] = table(ids[t], static_cast<Eigen::Index>(j));
      if (positional) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j - j % 2) / static_cast<double>(d));
        x[t][j] += j % 2 ? std::cos(static_cast<double>(t) * freq) : std::sin(static_cast<double>(t) * freq);
      }
    }
  return x;
}

inline M encoder(const mcst::EncoderParams& p, M x, int heads, const std::vector<bool>* hide) {
  for (const auto& l : p.layers) {
    add_into(x, attend(l.attn, norm(x, l.ln_attn), norm(x, l.ln_attn), heads, false, hide));
    add_into(x, ffn(l.ffn, norm(x, l.ln_ffn)));
  }
  return norm(x, p.norm);
}

inline M decoder_stream(const mcst::SeqModel& m, const std::vector<int>& prefix, const M& text, const M* units) {
  const int h = m.dims.n_heads;
  M y = embed(m.params.tgt_embed, prefix, m.dims.positional);
  for (const auto& l : m.params.decoder) {
    const M a = norm(y, l.ln_self);
    add_into(y, attend(l.self_attn, a, a, h, true, nullptr));
    add_into(y, attend(l.cross_text, norm(y, l.ln_text), text, h, false, nullptr));
    if (units) add_into(y, attend(l.cross_units, norm(y, l.ln_units), *units, h, false, nullptr));
    add_into(y, ffn(l.ffn, norm(y, l.ln_ffn)));
  }
  return y;
}

struct Forward {
  std::vector<M> streams;
  M averaged;
  M logits;
};

/// Candidate-averaged forward pass without masks. Unit ids are raw [0, K).
inline Forward forward(const mcst::SeqModel& m, const std::vector<std::vector<int>>& rows,
                       const std::vector<int>* unit_ids, const std::vector<int>& prefix) {
  const int h = m.dims.n_heads;
  M unit_mem;
  if (unit_ids) {
    std::vector<int> ids;
    for (int u : *unit_ids) ids.push_back(u + 4);
    unit_mem = encoder(m.params.unit_encoder, embed(m.params.unit_embed, ids, m.dims.positional), h, nullptr);
  }
  Forward f;
  for (const auto& r : rows) {
    const M mem = encoder(m.params.text_encoder, embed(m.params.src_embed, r, m.dims.positional), h, nullptr);
    f.streams.push_back(decoder_stream(m, prefix, mem, unit_ids ? &unit_mem : nullptr));
  }
  f.averaged = zeros(prefix.size(), static_cast<std::size_t>(m.dims.d_model));
  for (const auto& s : f.streams)
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s[i].size(); ++j) f.averaged[i][j] += s[i][j] / static_cast<double>(rows.size());
  f.logits = affine(norm(f.averaged, m.params.final_norm), m.params.out_w, m.params.out_b);
  return f;
}

inline double loss(const mcst::SeqModel& m, const std::vector<std::vector<int>>& rows,
                   const std::vector<int>* unit_ids, const std::vector<int>& target) {
  const std::vector<int> prefix(target.begin(), target.end() - 1);
  const auto f = forward(m, rows, unit_ids, prefix);
  double total = 0.0;
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    const auto& z = f.logits[t];
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    total -= z[static_cast<std::size_t>(target[t + 1])] - mx - std::log(s);
  }
  return total / static_cast<double>(prefix.size());
}

// ------------------------------------------------------------ search oracle

struct Scored {
  std::vector<int> tokens;
  double score;
  double normalized;
};

/// Every output a decoder of length <= max_len could return: sequences that
/// end in eos, and eos-free sequences of exactly max_len. Pad and bos are
/// never emitted. Each sequence is scored token by token from fresh
/// decode_averaged calls on its own prefix; the top m by normalized score
/// (ties by token sequence) are returned.
inline std::vector<Scored> exhaustive_top(const mcst::SeqModel& m, const mcst::EncodedSources& enc, std::size_t beam,
                                          std::size_t max_len, double alpha) {
  const int vocab = static_cast<int>(m.tgt_vocab.size());
  std::vector<Scored> all;
  std::map<std::vector<int>, std::vector<double>> cache;  // prefix -> next-token log-probs
  auto logprobs = [&](const std::vector<int>& seq) -> const std::vector<double>& {
    auto it = cache.find(seq);
    if (it != cache.end()) return it->second;
    std::vector<int> prefix{mcst::kBos};
    prefix.insert(prefix.end(), seq.begin(), seq.end());
    const auto out = mcst::decode_averaged(m, enc, prefix);
    const auto& z = out.logits;
    const Eigen::Index last = z.rows() - 1;
    const double mx = z.row(last).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) s += std::exp(z(last, j) - mx);
    std::vector<double> lp(static_cast<std::size_t>(z.cols()));
    for (Eigen::Index j = 0; j < z.cols(); ++j) lp[static_cast<std::size_t>(j)] = z(last, j) - mx - std::log(s);
    return cache.emplace(seq, std::move(lp)).first->second;
  };
  std::vector<std::pair<std::vector<int>, double>> frontier{{{}, 0.0}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::pair<std::vector<int>, double>> next;
    for (const auto& [seq, score] : frontier) {
      const auto lp = logprobs(seq);
      for (int t = 0; t < vocab; ++t) {
        if (t == mcst::kPad || t == mcst::kBos) continue;
        auto s = seq;
        s.push_back(t);
        const double sc = score + lp[static_cast<std::size_t>(t)];
        if (t == mcst::kEos || len == max_len)
          all.push_back({s, sc, sc / std::pow(static_cast<double>(len), alpha)});
        else
          next.emplace_back(std::move(s), sc);
      }
    }
    frontier = std::move(next);
  }
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.normalized != b.normalized) return a.normalized > b.normalized;
    return a.tokens < b.tokens;
  });
  if (all.size() > beam) all.resize(beam);
  return all;
}

}  // namespace oracle
