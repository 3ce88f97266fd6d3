// Toy pre-norm encoder-decoder with candidate-averaged decoding.
//
// Every candidate row is encoded separately and drives its own decoder
// stream; all streams share one set of parameters. After the last decoder
// layer the per-stream hidden states are averaged once, and the final layer
// norm plus output projection run on that average. An optional unit encoder
// feeds a second cross-attention in every decoder layer, placed after the
// text cross-attention.
#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mcst/core.hpp"
#include "mcst/nn.hpp"

namespace mcst {

struct ModelDims {
  int d_model = 64;
  int n_heads = 2;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int ffn_mult = 2;
  bool use_units = false;
  bool positional = true;
  bool mask_pad_in_encoder = false;
  bool mask_pad_in_cross = false;

  bool operator==(const ModelDims&) const = default;
};

/// How source rows are prepared for this model.
struct InputMode {
  std::size_t n_candidates = 1;
  bool aligned = false;

  bool operator==(const InputMode&) const = default;
};

struct EncoderLayerParams {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

struct EncoderParams {
  std::vector<EncoderLayerParams> layers;
  LayerNormParams norm;
};

struct DecoderLayerParams {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  LayerNormParams ln_text;
  AttentionParams cross_text;
  LayerNormParams ln_units;
  AttentionParams cross_units;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

struct ModelParams {
  Mat src_embed, tgt_embed, unit_embed;
  EncoderParams text_encoder, unit_encoder;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams final_norm;
  Mat out_w;
  Row out_b;
};

namespace detail {

template <class First, class... Rest>
First& first_of(First& f, Rest&...) {
  return f;
}

template <class F, class... P>
void visit_encoder(F& f, const std::string& prefix, P&... e) {
  const std::size_t n = first_of(e...).layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    visit_ln(f, p + ".ln_attn", e.layers[i].ln_attn...);
    visit_attn(f, p + ".attn", e.layers[i].attn...);
    visit_ln(f, p + ".ln_ffn", e.layers[i].ln_ffn...);
    visit_ffn(f, p + ".ffn", e.layers[i].ffn...);
  }
  visit_ln(f, prefix + ".norm", e.norm...);
}

}  // namespace detail

/// Walks every parameter tensor in checkpoint order:
/// src_embed, tgt_embed, [unit_embed], text_encoder.*, [unit_encoder.*],
/// decoder.layer{i}.{ln_self, self_attn, ln_text, cross_text,
/// [ln_units, cross_units], ln_ffn, ffn}, final_norm, out_w, out_b.
/// Bracketed groups exist only when the model uses units.
template <class F, class... P>
void visit_params(const ModelDims& dims, F&& f, P&... ps) {
  f(std::string("src_embed"), ps.src_embed...);
  f(std::string("tgt_embed"), ps.tgt_embed...);
  if (dims.use_units) f(std::string("unit_embed"), ps.unit_embed...);
  detail::visit_encoder(f, "text_encoder", ps.text_encoder...);
  if (dims.use_units) detail::visit_encoder(f, "unit_encoder", ps.unit_encoder...);
  const std::size_t n = detail::first_of(ps...).decoder.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    visit_ln(f, p + ".ln_self", ps.decoder[i].ln_self...);
    visit_attn(f, p + ".self_attn", ps.decoder[i].self_attn...);
    visit_ln(f, p + ".ln_text", ps.decoder[i].ln_text...);
    visit_attn(f, p + ".cross_text", ps.decoder[i].cross_text...);
    if (dims.use_units) {
      visit_ln(f, p + ".ln_units", ps.decoder[i].ln_units...);
      visit_attn(f, p + ".cross_units", ps.decoder[i].cross_units...);
    }
    visit_ln(f, p + ".ln_ffn", ps.decoder[i].ln_ffn...);
    visit_ffn(f, p + ".ffn", ps.decoder[i].ffn...);
  }
  visit_ln(f, "final_norm", ps.final_norm...);
  f(std::string("out_w"), ps.out_w...);
  f(std::string("out_b"), ps.out_b...);
}

struct SeqModel {
  ModelDims dims;
  InputMode input;
  Vocabulary src_vocab{VocabKind::SourceText};
  Vocabulary tgt_vocab{VocabKind::TargetText};
  Vocabulary unit_vocab{VocabKind::SpeechUnit};
  ModelParams params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit_params(dims, [&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); },
                 params);
    return n;
  }
};

namespace detail {

inline AttentionParams make_attention(int d) {
  return {Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d),
          Row::Zero(d),    Row::Zero(d),    Row::Zero(d),    Row::Zero(d)};
}

inline FeedForwardParams make_ffn(int d, int hidden) {
  return {Mat::Zero(d, hidden), Row::Zero(hidden), Mat::Zero(hidden, d), Row::Zero(d)};
}

inline EncoderParams make_encoder(int d, int layers, int hidden) {
  EncoderParams e;
  for (int i = 0; i < layers; ++i)
    e.layers.push_back({make_layer_norm(d), make_attention(d), make_layer_norm(d), make_ffn(d, hidden)});
  e.norm = make_layer_norm(d);
  return e;
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline bool is_unit_param(const std::string& name) {
  return name.rfind("unit_", 0) == 0 || name.find(".cross_units.") != std::string::npos ||
         name.find(".ln_units.") != std::string::npos;
}

}  // namespace detail

/// Parameters with every tensor zero (layer-norm gains included).
inline ModelParams zero_params(const ModelDims& dims, std::size_t src_vocab, std::size_t tgt_vocab,
                               std::size_t unit_vocab) {
  const int d = dims.d_model, hidden = dims.d_model * dims.ffn_mult;
  ModelParams p;
  p.src_embed = Mat::Zero(static_cast<Eigen::Index>(src_vocab), d);
  p.tgt_embed = Mat::Zero(static_cast<Eigen::Index>(tgt_vocab), d);
  p.unit_embed = Mat::Zero(dims.use_units ? static_cast<Eigen::Index>(unit_vocab) : 0, d);
  p.text_encoder = detail::make_encoder(d, dims.n_enc_layers, hidden);
  if (dims.use_units) p.unit_encoder = detail::make_encoder(d, dims.n_enc_layers, hidden);
  for (int i = 0; i < dims.n_dec_layers; ++i)
    p.decoder.push_back({make_layer_norm(d), detail::make_attention(d), make_layer_norm(d),
                         detail::make_attention(d), make_layer_norm(d), detail::make_attention(d),
                         make_layer_norm(d), detail::make_ffn(d, hidden)});
  p.final_norm = make_layer_norm(d);
  p.out_w = Mat::Zero(d, static_cast<Eigen::Index>(tgt_vocab));
  p.out_b = Row::Zero(static_cast<Eigen::Index>(tgt_vocab));
  visit_params(dims, [](const std::string&, auto& t) { t.setZero(); }, p);
  return p;
}

inline ModelParams zeros_like(const ModelDims& dims, const ModelParams& p) {
  ModelParams g = p;
  visit_params(dims, [](const std::string&, auto& t) { t.setZero(); }, g);
  return g;
}

/// Builds a model and draws its initial parameters. Text-path tensors and
/// unit-path tensors come from two separate streams derived from `seed`, so
/// a model with units starts with exactly the text parameters of the same
/// model without units. The unit cross-attention output projection starts
/// at zero, which makes a fresh unit path an exact no-op.
inline SeqModel make_model(const ModelDims& dims, Vocabulary src, Vocabulary tgt, std::size_t unit_k,
                           std::uint64_t seed) {
  if (dims.d_model <= 0 || dims.n_heads <= 0 || dims.d_model % dims.n_heads != 0)
    throw Error("model: d_model must be a positive multiple of n_heads");
  if (dims.n_enc_layers < 1 || dims.n_dec_layers < 1 || dims.ffn_mult < 1)
    throw Error("model: layer counts and ffn_mult must be positive");
  SeqModel m;
  m.dims = dims;
  m.src_vocab = std::move(src);
  m.tgt_vocab = std::move(tgt);
  m.unit_vocab = Vocabulary::speech_units(dims.use_units ? unit_k : 0);
  m.params = zero_params(dims, m.src_vocab.size(), m.tgt_vocab.size(), m.unit_vocab.size());

  Rng text_rng(derive_seed(seed, "model/text"));
  Rng unit_rng(derive_seed(seed, "model/units"));
  visit_params(
      dims,
      [&](const std::string& name, auto& t) {
        Rng& rng = detail::is_unit_param(name) ? unit_rng : text_rng;
        if (detail::ends_with(name, ".gain")) {
          t.setOnes();
        } else if (detail::ends_with(name, "_embed")) {
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
        } else if (t.rows() > 1 && t.cols() > 1) {
          if (name.find(".cross_units.wo") != std::string::npos) return;
          const double sd = 1.0 / std::sqrt(static_cast<double>(t.rows()));
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, sd);
        }
      },
      m.params);
  return m;
}

// ------------------------------------------------------------------ inputs

/// Model-ready source side: one token row per candidate stream with its
/// padding mask, plus optional raw unit ids in [0, K).
struct SourceBatch {
  std::vector<TokenSeq> rows;
  std::vector<std::vector<bool>> pad_mask;
  std::optional<std::vector<int>> units;
};

struct Example {
  SourceBatch source;
  TokenSeq target;  // framed as bos ... eos
};

inline TokenSeq frame_target(const Sentence& words, const Vocabulary& vocab) {
  TokenSeq t{kBos};
  for (TokenId id : tokenize_words(words, vocab)) t.push_back(id);
  t.push_back(kEos);
  return t;
}

/// Candidate-averaging instrumentation: number of times stream states have
/// been averaged since process start.
inline std::atomic<std::uint64_t>& candidate_mean_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// ------------------------------------------------------------------ encoder

struct EncoderLayerCache {
  LayerNormCache ln_attn, ln_ffn;
  AttentionCache attn;
  FeedForwardCache ffn;
};

struct EncoderCache {
  std::vector<EncoderLayerCache> layers;
  LayerNormCache norm;
  std::vector<bool> mask;
  bool masked = false;
};

namespace detail {

inline Mat embed(const Mat& table, const std::vector<TokenId>& ids, bool positional) {
  Mat x(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw Error("token id " + std::to_string(ids[i]) + " outside embedding table of " +
                  std::to_string(table.rows()));
    x.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  if (positional) x += sinusoidal_positions(x.rows(), x.cols());
  return x;
}

inline void embed_backward(Mat& grad_table, const std::vector<TokenId>& ids, const Mat& dx) {
  for (std::size_t i = 0; i < ids.size(); ++i) grad_table.row(ids[i]) += dx.row(static_cast<Eigen::Index>(i));
}

/// A mask is only applied when it hides some but not all keys.
inline bool usable_mask(const std::vector<bool>& m) {
  const auto hidden = std::count(m.begin(), m.end(), true);
  return hidden > 0 && static_cast<std::size_t>(hidden) < m.size();
}

inline Mat encoder_forward(const EncoderParams& p, Mat x, int heads, const std::vector<bool>* mask,
                           EncoderCache& c) {
  c.layers.resize(p.layers.size());
  c.masked = mask && usable_mask(*mask);
  if (c.masked) c.mask = *mask;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& lc = c.layers[i];
    const auto& lp = p.layers[i];
    const Mat a = layer_norm(lp.ln_attn, x, lc.ln_attn);
    x += attention(lp.attn, a, a, heads, false, c.masked ? &c.mask : nullptr, lc.attn);
    const Mat b = layer_norm(lp.ln_ffn, x, lc.ln_ffn);
    x += feed_forward(lp.ffn, b, lc.ffn);
  }
  return layer_norm(p.norm, x, c.norm);
}

inline Mat encoder_backward(const EncoderParams& p, const EncoderCache& c, const Mat& dmem, int heads,
                            EncoderParams& g) {
  Mat dx = layer_norm_backward(p.norm, c.norm, dmem, g.norm);
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    const auto& lp = p.layers[i];
    const auto& lc = c.layers[i];
    auto& lg = g.layers[i];
    dx += layer_norm_backward(lp.ln_ffn, lc.ln_ffn, feed_forward_backward(lp.ffn, lc.ffn, dx, lg.ffn),
                              lg.ln_ffn);
    Mat dq, dkv;
    attention_backward(lp.attn, lc.attn, dx, heads, lg.attn, dq, dkv);
    dx += layer_norm_backward(lp.ln_attn, lc.ln_attn, dq + dkv, lg.ln_attn);
  }
  return dx;
}

}  // namespace detail

/// Encodes one candidate row into a length x d_model memory.
inline Mat encode_text(const SeqModel& m, const TokenSeq& row, const std::vector<bool>* pad_mask = nullptr) {
  if (row.empty()) throw Error("encode_text: empty source row");
  EncoderCache c;
  return detail::encoder_forward(m.params.text_encoder,
                                 detail::embed(m.params.src_embed, row, m.dims.positional), m.dims.n_heads,
                                 m.dims.mask_pad_in_encoder ? pad_mask : nullptr, c);
}

inline TokenSeq unit_tokens(const SeqModel& m, const std::vector<int>& units) {
  TokenSeq ids;
  ids.reserve(units.size());
  for (int u : units) {
    if (u < 0 || static_cast<std::size_t>(u) >= m.unit_vocab.unit_count())
      throw Error("unit id " + std::to_string(u) + " outside unit vocabulary of " +
                  std::to_string(m.unit_vocab.unit_count()));
    ids.push_back(static_cast<TokenId>(u) + kNumReserved);
  }
  return ids;
}

inline Mat encode_units(const SeqModel& m, const UnitSequence& units) {
  if (!m.dims.use_units) throw Error("encode_units: model has no unit encoder");
  if (units.ids.empty()) throw Error("encode_units: empty unit sequence");
  EncoderCache c;
  return detail::encoder_forward(m.params.unit_encoder,
                                 detail::embed(m.params.unit_embed, unit_tokens(m, units.ids), m.dims.positional),
                                 m.dims.n_heads, nullptr, c);
}

// ------------------------------------------------------------------ decoder

struct DecoderLayerCache {
  LayerNormCache ln_self, ln_text, ln_units, ln_ffn;
  AttentionCache self_attn, cross_text, cross_units;
  FeedForwardCache ffn;
};

struct DecoderCache {
  std::vector<DecoderLayerCache> layers;
};

namespace detail {

/// One decoder stream up to, not including, the final layer norm.
inline Mat decoder_forward(const SeqModel& m, const TokenSeq& prefix, const Mat& text_mem,
                           const std::vector<bool>* cross_mask, const Mat* unit_mem, DecoderCache& c) {
  const int heads = m.dims.n_heads;
  Mat y = embed(m.params.tgt_embed, prefix, m.dims.positional);
  c.layers.resize(m.params.decoder.size());
  for (std::size_t i = 0; i < m.params.decoder.size(); ++i) {
    const auto& lp = m.params.decoder[i];
    auto& lc = c.layers[i];
    const Mat a = layer_norm(lp.ln_self, y, lc.ln_self);
    y += attention(lp.self_attn, a, a, heads, true, nullptr, lc.self_attn);
    const Mat b = layer_norm(lp.ln_text, y, lc.ln_text);
    y += attention(lp.cross_text, b, text_mem, heads, false, cross_mask, lc.cross_text);
    if (unit_mem) {
      const Mat u = layer_norm(lp.ln_units, y, lc.ln_units);
      y += attention(lp.cross_units, u, *unit_mem, heads, false, nullptr, lc.cross_units);
    }
    const Mat e = layer_norm(lp.ln_ffn, y, lc.ln_ffn);
    y += feed_forward(lp.ffn, e, lc.ffn);
  }
  return y;
}

/// Returns the gradient w.r.t. the embedded prefix; accumulates memory
/// gradients into `dtext_mem` and, when units are used, `dunit_mem`.
inline Mat decoder_backward(const SeqModel& m, const DecoderCache& c, Mat dy, bool with_units, ModelParams& g,
                            Mat& dtext_mem, Mat* dunit_mem) {
  const int heads = m.dims.n_heads;
  for (std::size_t i = m.params.decoder.size(); i-- > 0;) {
    const auto& lp = m.params.decoder[i];
    const auto& lc = c.layers[i];
    auto& lg = g.decoder[i];
    dy += layer_norm_backward(lp.ln_ffn, lc.ln_ffn, feed_forward_backward(lp.ffn, lc.ffn, dy, lg.ffn),
                              lg.ln_ffn);
    Mat dq, dkv;
    if (with_units) {
      attention_backward(lp.cross_units, lc.cross_units, dy, heads, lg.cross_units, dq, dkv);
      *dunit_mem += dkv;
      dy += layer_norm_backward(lp.ln_units, lc.ln_units, dq, lg.ln_units);
    }
    attention_backward(lp.cross_text, lc.cross_text, dy, heads, lg.cross_text, dq, dkv);
    dtext_mem += dkv;
    dy += layer_norm_backward(lp.ln_text, lc.ln_text, dq, lg.ln_text);
    attention_backward(lp.self_attn, lc.self_attn, dy, heads, lg.self_attn, dq, dkv);
    dy += layer_norm_backward(lp.ln_self, lc.ln_self, dq + dkv, lg.ln_self);
  }
  return dy;
}

inline Mat project(const SeqModel& m, const Mat& state, LayerNormCache& norm_cache, Mat* normed = nullptr) {
  Mat z = layer_norm(m.params.final_norm, state, norm_cache);
  Mat logits = z * m.params.out_w;
  logits.rowwise() += m.params.out_b;
  if (normed) *normed = std::move(z);
  return logits;
}

/// Mean over streams, computed as a left-to-right sum divided by the count.
inline Mat average_streams(const std::vector<Mat>& states) {
  candidate_mean_counter().fetch_add(1, std::memory_order_relaxed);
  Mat sum = states.front();
  for (std::size_t i = 1; i < states.size(); ++i) sum += states[i];
  return sum / static_cast<double>(states.size());
}

}  // namespace detail

/// Encoder outputs for every candidate stream, reusable across decode steps.
struct EncodedSources {
  std::vector<Mat> text;
  std::vector<std::vector<bool>> cross_masks;  // empty entry: unmasked
  std::optional<Mat> units;

  std::size_t streams() const { return text.size(); }
};

inline void check_source(const SeqModel& m, const SourceBatch& src) {
  if (src.rows.empty()) throw Error("empty source: no candidate rows");
  if (src.pad_mask.size() != src.rows.size()) throw Error("source pad mask does not match rows");
  for (std::size_t i = 0; i < src.rows.size(); ++i) {
    if (src.rows[i].empty()) throw Error("empty source row " + std::to_string(i));
    if (src.pad_mask[i].size() != src.rows[i].size()) throw Error("pad mask length mismatch in row " + std::to_string(i));
  }
  if (m.dims.use_units && (!src.units || src.units->empty()))
    throw Error("model uses speech units but the source has none");
}

inline EncodedSources encode_sources(const SeqModel& m, const SourceBatch& src) {
  check_source(m, src);
  EncodedSources out;
  for (std::size_t i = 0; i < src.rows.size(); ++i) {
    out.text.push_back(encode_text(m, src.rows[i], &src.pad_mask[i]));
    out.cross_masks.push_back(m.dims.mask_pad_in_cross && detail::usable_mask(src.pad_mask[i])
                                  ? src.pad_mask[i]
                                  : std::vector<bool>{});
  }
  if (m.dims.use_units) out.units = encode_units(m, UnitSequence{*src.units, true});
  return out;
}

struct DecodeOutput {
  std::vector<Mat> stream_states;  // per candidate, pre-final-norm, T x d
  Mat averaged_state;              // T x d
  Mat normalized;                  // final-norm output before the affine map
  Mat logits;                      // T x |target vocab|
};

/// Runs every candidate stream over `prefix`, averages their pre-norm
/// states once and projects the average.
inline DecodeOutput decode_averaged(const SeqModel& m, const EncodedSources& enc, const TokenSeq& prefix) {
  if (enc.text.empty()) throw Error("decode_averaged: no candidate memories");
  if (prefix.empty()) throw Error("decode_averaged: empty target prefix");
  DecodeOutput out;
  const Mat* unit_mem = enc.units ? &*enc.units : nullptr;
  for (std::size_t i = 0; i < enc.text.size(); ++i) {
    DecoderCache c;
    const auto* mask = enc.cross_masks[i].empty() ? nullptr : &enc.cross_masks[i];
    out.stream_states.push_back(detail::decoder_forward(m, prefix, enc.text[i], mask, unit_mem, c));
  }
  out.averaged_state = detail::average_streams(out.stream_states);
  LayerNormCache nc;
  out.logits = detail::project(m, out.averaged_state, nc);
  out.normalized = nc.xhat;
  return out;
}

/// Plain single-source decoder: no averaging step at all.
inline Mat decode_single(const SeqModel& m, const Mat& text_mem, const Mat* unit_mem, const TokenSeq& prefix) {
  DecoderCache c;
  const Mat state = detail::decoder_forward(m, prefix, text_mem, nullptr, unit_mem, c);
  LayerNormCache nc;
  return detail::project(m, state, nc);
}

/// Row-wise log-softmax.
inline Mat log_softmax(const Mat& logits) {
  Mat out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

// ---------------------------------------------------------- loss / gradient

struct LossAndGradient {
  double loss = 0.0;
  ModelParams grad;
};

namespace detail {

inline void check_target(const SeqModel& m, const TokenSeq& target) {
  if (target.size() < 2) throw Error("target must hold at least bos and eos");
  for (TokenId t : target)
    if (t < 0 || static_cast<std::size_t>(t) >= m.tgt_vocab.size())
      throw Error("invalid target id " + std::to_string(t));
}

/// Teacher-forced forward pass; fills `grad` when non-null.
inline double forward_backward(const SeqModel& m, const Example& ex, ModelParams* grad) {
  check_source(m, ex.source);
  check_target(m, ex.target);
  const int heads = m.dims.n_heads;
  const std::size_t n = ex.source.rows.size();
  const TokenSeq prefix(ex.target.begin(), ex.target.end() - 1);
  const TokenSeq labels(ex.target.begin() + 1, ex.target.end());

  std::vector<EncoderCache> enc_cache(n);
  std::vector<Mat> memories(n);
  std::vector<std::vector<bool>> cross_masks(n);
  for (std::size_t i = 0; i < n; ++i) {
    memories[i] = encoder_forward(m.params.text_encoder, embed(m.params.src_embed, ex.source.rows[i], m.dims.positional),
                                  heads, m.dims.mask_pad_in_encoder ? &ex.source.pad_mask[i] : nullptr, enc_cache[i]);
    if (m.dims.mask_pad_in_cross && usable_mask(ex.source.pad_mask[i])) cross_masks[i] = ex.source.pad_mask[i];
  }
  EncoderCache unit_cache;
  TokenSeq unit_ids;
  Mat unit_mem;
  if (m.dims.use_units) {
    unit_ids = unit_tokens(m, *ex.source.units);
    unit_mem = encoder_forward(m.params.unit_encoder, embed(m.params.unit_embed, unit_ids, m.dims.positional), heads,
                               nullptr, unit_cache);
  }

  std::vector<DecoderCache> dec_cache(n);
  std::vector<Mat> states(n);
  for (std::size_t i = 0; i < n; ++i)
    states[i] = decoder_forward(m, prefix, memories[i], cross_masks[i].empty() ? nullptr : &cross_masks[i],
                                m.dims.use_units ? &unit_mem : nullptr, dec_cache[i]);
  const Mat avg = average_streams(states);
  LayerNormCache norm_cache;
  Mat normed;
  const Mat logits = project(m, avg, norm_cache, &normed);
  const Mat logp = log_softmax(logits);

  const auto T = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) loss -= logp(static_cast<Eigen::Index>(t), labels[t]);
  loss /= T;
  if (!grad) return loss;

  Mat dlogits = logp.array().exp();
  for (std::size_t t = 0; t < labels.size(); ++t) dlogits(static_cast<Eigen::Index>(t), labels[t]) -= 1.0;
  dlogits /= T;
  ModelParams& g = *grad;
  g.out_w += normed.transpose() * dlogits;
  g.out_b += dlogits.colwise().sum();
  const Mat davg = layer_norm_backward(m.params.final_norm, norm_cache, dlogits * m.params.out_w.transpose(),
                                       g.final_norm);
  // The average hands 1/n of its gradient to every stream.
  const Mat dstate = davg / static_cast<double>(n);

  Mat dunit_mem = Mat::Zero(unit_mem.rows(), unit_mem.cols());
  for (std::size_t i = 0; i < n; ++i) {
    Mat dmem = Mat::Zero(memories[i].rows(), memories[i].cols());
    const Mat dy0 = decoder_backward(m, dec_cache[i], dstate, m.dims.use_units, g, dmem, &dunit_mem);
    embed_backward(g.tgt_embed, prefix, dy0);
    const Mat dx0 = encoder_backward(m.params.text_encoder, enc_cache[i], dmem, heads, g.text_encoder);
    embed_backward(g.src_embed, ex.source.rows[i], dx0);
  }
  if (m.dims.use_units) {
    const Mat dx0 = encoder_backward(m.params.unit_encoder, unit_cache, dunit_mem, heads, g.unit_encoder);
    embed_backward(g.unit_embed, unit_ids, dx0);
  }
  return loss;
}

}  // namespace detail

/// Mean token-level negative log-likelihood under teacher forcing.
inline double forward_loss(const SeqModel& m, const Example& ex) {
  return detail::forward_backward(m, ex, nullptr);
}

inline LossAndGradient loss_and_gradient(const SeqModel& m, const Example& ex) {
  LossAndGradient r{0.0, zeros_like(m.dims, m.params)};
  r.loss = detail::forward_backward(m, ex, &r.grad);
  return r;
}

inline ModelParams backward(const SeqModel& m, const Example& ex) { return loss_and_gradient(m, ex).grad; }

}  // namespace mcst
