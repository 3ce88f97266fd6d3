// Shared domain types: tokens, vocabularies, candidate sets and the seeded
// random stream every stochastic component draws from.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mcst {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
/// A sentence as a list of lowercase words.
using Sentence = std::vector<std::string>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumReserved = 4;

inline constexpr std::string_view kPadSurface = "<pad>";
inline constexpr std::string_view kUnkSurface = "unk";
inline constexpr std::string_view kBosSurface = "<s>";
inline constexpr std::string_view kEosSurface = "</s>";

inline bool is_reserved_surface(std::string_view w) {
  return w == kPadSurface || w == kUnkSurface || w == kBosSurface || w == kEosSurface;
}

enum class VocabKind { SourceText, TargetText, SpeechUnit };

inline std::string_view to_string(VocabKind k) {
  switch (k) {
    case VocabKind::SourceText: return "source-text";
    case VocabKind::TargetText: return "target-text";
    case VocabKind::SpeechUnit: return "speech-unit";
  }
  return "?";
}

inline VocabKind vocab_kind_from_string(std::string_view s) {
  if (s == "source-text") return VocabKind::SourceText;
  if (s == "target-text") return VocabKind::TargetText;
  if (s == "speech-unit") return VocabKind::SpeechUnit;
  throw Error("unknown vocabulary kind: " + std::string(s));
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Whitespace split followed by ASCII lowercasing.
inline Sentence split_words(std::string_view text) {
  Sentence out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(lowercase(w));
  return out;
}

inline std::string join_words(const Sentence& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

/// Bijection between surfaces and ids. Ids 0..3 are always pad, unk, bos, eos.
class Vocabulary {
 public:
  explicit Vocabulary(VocabKind kind = VocabKind::SourceText) : kind_(kind) {
    for (auto s : {kPadSurface, kUnkSurface, kBosSurface, kEosSurface}) push(std::string(s));
  }

  /// Builds a vocabulary over `words` in first-seen order; reserved surfaces are skipped.
  template <class Range>
  static Vocabulary from_words(VocabKind kind, const Range& words) {
    Vocabulary v(kind);
    for (const auto& w : words) v.add(w);
    return v;
  }

  /// Speech-unit vocabulary with `k` unit symbols u0..u{k-1} at ids 4..k+3.
  static Vocabulary speech_units(std::size_t k) {
    Vocabulary v(VocabKind::SpeechUnit);
    for (std::size_t i = 0; i < k; ++i) v.push("u" + std::to_string(i));
    return v;
  }

  TokenId add(std::string_view surface) {
    if (surface.empty() || std::any_of(surface.begin(), surface.end(),
                                       [](unsigned char c) { return std::isspace(c); }))
      throw Error("vocabulary surface must be a nonempty word: '" + std::string(surface) + "'");
    std::string w = lowercase(surface);
    if (auto it = index_.find(w); it != index_.end()) return it->second;
    return push(std::move(w));
  }

  std::optional<TokenId> find(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId lookup(std::string_view surface) const { return find(surface).value_or(kUnk); }

  const std::string& surface(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= surfaces_.size())
      throw Error("corrupted token sequence: id " + std::to_string(id) +
                  " outside vocabulary of size " + std::to_string(surfaces_.size()));
    return surfaces_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return surfaces_.size(); }
  VocabKind kind() const { return kind_; }
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  /// Number of unit symbols in a speech-unit vocabulary.
  std::size_t unit_count() const { return surfaces_.size() - kNumReserved; }

  bool operator==(const Vocabulary& o) const { return kind_ == o.kind_ && surfaces_ == o.surfaces_; }

 private:
  TokenId push(std::string w) {
    auto id = static_cast<TokenId>(surfaces_.size());
    index_.emplace(w, id);
    surfaces_.push_back(std::move(w));
    return id;
  }

  VocabKind kind_;
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> index_;
};

inline TokenSeq tokenize_words(const Sentence& words, const Vocabulary& vocab) {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(vocab.lookup(w));
  return out;
}

/// Whitespace split, lowercase, out-of-vocabulary words become unk.
inline TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  if (vocab.kind() == VocabKind::SpeechUnit)
    throw Error("tokenize requires a text vocabulary");
  return tokenize_words(split_words(text), vocab);
}

/// Drops pad, bos and eos; keeps unk.
inline Sentence detokenize_words(const TokenSeq& tokens, const Vocabulary& vocab) {
  Sentence out;
  for (TokenId id : tokens) {
    const auto& s = vocab.surface(id);
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(s);
  }
  return out;
}

inline std::string detokenize(const TokenSeq& tokens, const Vocabulary& vocab) {
  return join_words(detokenize_words(tokens, vocab));
}

/// Deduplicated or raw discrete speech-unit ids in [0, K).
struct UnitSequence {
  std::vector<int> ids;
  bool deduplicated = false;

  bool operator==(const UnitSequence&) const = default;
};

/// One utterance's n-best list. Candidates are kept as words; models map them
/// to ids through their own source vocabulary.
struct CandidateSet {
  std::string utterance_id;
  std::vector<Sentence> candidates;
  std::vector<double> scores;
  Sentence transcript;
  Sentence reference;
  std::optional<UnitSequence> units;

  bool operator==(const CandidateSet&) const = default;
};

/// Returns a description of the first violated invariant, or nothing.
inline std::optional<std::string> check_candidate_set(const CandidateSet& c,
                                                      bool allow_unk_words = false) {
  if (c.candidates.empty()) return "candidates must be nonempty";
  if (c.scores.size() != c.candidates.size()) return "scores and candidates differ in length";
  for (std::size_t i = 1; i < c.scores.size(); ++i)
    if (c.scores[i] > c.scores[i - 1]) return "scores must be non-increasing";
  for (const auto& cand : c.candidates)
    for (const auto& w : cand) {
      if (allow_unk_words && w == kUnkSurface) continue;
      if (is_reserved_surface(w)) return "candidate contains reserved token '" + w + "'";
    }
  return std::nullopt;
}

/// Deterministic random stream: std::mt19937_64 with a fixed, portable mapping
/// from raw 64-bit draws to the distributions used in this project (the
/// standard library distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1).
  double uniform_open() {
    double u;
    do u = uniform(); while (u == 0.0);
    return u;
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do x = next(); while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Box-Muller; one normal per two uniforms.
  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gumbel() { return -std::log(-std::log(uniform_open())); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, 64 bit.
inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix64(seed ^ mix64(hash_string(tag)));
}

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace mcst
