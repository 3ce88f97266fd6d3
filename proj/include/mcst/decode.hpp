// Candidate-pooled beam search. For every live beam, all candidate streams
// advance over the same prefix, their final states are averaged once per
// generated token, and the pooled distribution extends the beam.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mcst/model.hpp"

namespace mcst {

struct Hypothesis {
  TokenSeq tokens;  // generated tokens, eos included when finished
  double score = 0.0;
  std::vector<Row> per_candidate_states;  // last-position pre-norm state per stream
  bool alive = true;
};

struct BeamConfig {
  std::size_t beam = 4;
  std::size_t max_len = 16;
  double alpha = 1.0;
};

inline double length_normalized_score(const Hypothesis& h, double alpha) {
  if (h.tokens.empty()) throw Error("length_normalized_score: empty hypothesis");
  return h.score / std::pow(static_cast<double>(h.tokens.size()), alpha);
}

/// Tokens a decoder may emit: everything except pad and bos.
inline bool generatable(TokenId t) { return t != kPad && t != kBos; }

/// Ranking of finished hypotheses: normalized score, then token sequence.
inline void sort_hypotheses(std::vector<Hypothesis>& hs, double alpha) {
  std::stable_sort(hs.begin(), hs.end(), [alpha](const Hypothesis& a, const Hypothesis& b) {
    const double sa = length_normalized_score(a, alpha), sb = length_normalized_score(b, alpha);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
}

/// Pooled beam search over pre-encoded candidate memories. Finished
/// hypotheses are returned best first. Search ends at max_len, when no beam
/// is alive, or once m hypotheses have finished and no live beam can still
/// score above the m-th best of them.
inline std::vector<Hypothesis> beam_search(const SeqModel& m, const EncodedSources& enc, const BeamConfig& cfg) {
  if (cfg.beam < 1 || cfg.max_len < 1) throw Error("beam_search: beam and max_len must be positive");
  if (enc.text.empty()) throw Error("beam_search: empty source");

  struct Extension {
    double score;
    TokenId token;
    std::size_t beam;
  };
  const auto vocab = static_cast<TokenId>(m.tgt_vocab.size());
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (std::size_t step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Extension> ext;
    std::vector<std::vector<Row>> states(live.size());
    for (std::size_t b = 0; b < live.size(); ++b) {
      TokenSeq prefix{kBos};
      prefix.insert(prefix.end(), live[b].tokens.begin(), live[b].tokens.end());
      const DecodeOutput out = decode_averaged(m, enc, prefix);
      const Eigen::Index last = out.logits.rows() - 1;
      const Mat logp = log_softmax(out.logits.bottomRows(1));
      for (const auto& s : out.stream_states) states[b].push_back(s.row(last));
      for (TokenId t = 0; t < vocab; ++t)
        if (generatable(t)) ext.push_back({live[b].score + logp(0, t), t, b});
    }
    const std::size_t keep = std::min(cfg.beam, ext.size());
    std::partial_sort(ext.begin(), ext.begin() + static_cast<std::ptrdiff_t>(keep), ext.end(),
                      [](const Extension& a, const Extension& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.beam < b.beam;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      Hypothesis h;
      h.tokens = live[ext[k].beam].tokens;
      h.tokens.push_back(ext[k].token);
      h.score = ext[k].score;
      h.per_candidate_states = states[ext[k].beam];
      h.alive = ext[k].token != kEos;
      (h.alive ? next : finished).push_back(std::move(h));
    }
    live = std::move(next);

    if (finished.size() >= cfg.beam && !live.empty()) {
      sort_hypotheses(finished, cfg.alpha);
      const double bar = length_normalized_score(finished[cfg.beam - 1], cfg.alpha);
      // Scores only fall as a beam grows, so with alpha >= 0 a live beam can
      // reach at most score / max_len^alpha.
      const double reach = std::pow(static_cast<double>(cfg.max_len), std::max(cfg.alpha, 0.0));
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& h : live) best_live = std::max(best_live, h.score / reach);
      if (best_live <= bar) {
        live.clear();
        break;
      }
    }
  }
  for (auto& h : live) finished.push_back(std::move(h));
  sort_hypotheses(finished, cfg.alpha);
  return finished;
}

inline std::vector<Hypothesis> beam_search(const SeqModel& m, const SourceBatch& src, const BeamConfig& cfg) {
  return beam_search(m, encode_sources(m, src), cfg);
}

/// Best hypothesis without its eos.
inline TokenSeq best_tokens(const std::vector<Hypothesis>& hs) {
  if (hs.empty()) return {};
  TokenSeq t = hs.front().tokens;
  if (!t.empty() && t.back() == kEos) t.pop_back();
  return t;
}

}  // namespace mcst
