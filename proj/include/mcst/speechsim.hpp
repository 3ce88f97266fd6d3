// Synthetic cascaded-ASR data: a toy parallel corpus generated by a sparse
// bigram grammar with word-for-word translation, homophone groups among the
// source words, and a noisy channel that turns a transcript into a scored
// n-best list by homophone substitutions and word elisions.
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcst/core.hpp"
#include "mcst/eval.hpp"

namespace mcst {

struct GrammarOptions {
  std::size_t min_len = 4;
  std::size_t max_len = 8;
  std::size_t branching = 3;         // successors allowed after each word
  double homophone_fraction = 0.5;   // share of source words placed in homophone groups
  std::size_t max_group = 3;
};

struct ToyParallelCorpus {
  std::vector<std::pair<Sentence, Sentence>> pairs;  // (source, target)
  std::map<std::string, std::string> lexicon;        // source word -> target word
  std::vector<Sentence> homophone_groups;
  Sentence source_words;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string make_word(Rng& rng, std::size_t syllables, std::string_view onsets, std::string_view nuclei) {
  std::string w;
  for (std::size_t s = 0; s < syllables; ++s) {
    w += onsets[rng.below(onsets.size())];
    w += nuclei[rng.below(nuclei.size())];
  }
  return w;
}

}  // namespace detail

/// Deterministic corpus of `n_sentences` pairs over `grammar_size` source
/// words. Each source word translates to its own target word, so target and
/// source lengths agree; homophone groups join source words with distinct
/// translations.
inline ToyParallelCorpus gen_corpus(std::size_t grammar_size, std::size_t n_sentences, std::uint64_t seed,
                                    const GrammarOptions& opt = {}) {
  if (grammar_size < 1 || n_sentences < 1) throw Error("gen_corpus: sizes must be at least 1");
  if (opt.min_len < 1 || opt.max_len < opt.min_len) throw Error("gen_corpus: bad sentence length range");
  ToyParallelCorpus c;
  c.seed = seed;
  Rng words_rng(derive_seed(seed, "grammar/words"));
  std::set<std::string> used;
  while (c.source_words.size() < grammar_size) {
    auto w = detail::make_word(words_rng, 2, "bdfgklmnprstvz", "aeiou");
    if (!is_reserved_surface(w) && used.insert(w).second) c.source_words.push_back(w);
  }
  for (const auto& w : c.source_words) {
    std::string t;
    do t = detail::make_word(words_rng, 3, "chjqwxy", "aeiouy"); while (!used.insert(t).second);
    c.lexicon[w] = t;
  }

  Rng groups_rng(derive_seed(seed, "grammar/homophones"));
  std::vector<std::size_t> idx(grammar_size);
  for (std::size_t i = 0; i < grammar_size; ++i) idx[i] = i;
  groups_rng.shuffle(idx);
  const auto in_groups = static_cast<std::size_t>(std::floor(opt.homophone_fraction * static_cast<double>(grammar_size)));
  for (std::size_t pos = 0; pos + 1 < in_groups;) {
    std::size_t size = 2 + (opt.max_group > 2 ? groups_rng.below(opt.max_group - 1) : 0);
    size = std::min(size, in_groups - pos);
    if (size < 2) break;
    Sentence g;
    for (std::size_t k = 0; k < size; ++k) g.push_back(c.source_words[idx[pos + k]]);
    c.homophone_groups.push_back(std::move(g));
    pos += size;
  }

  Rng grammar_rng(derive_seed(seed, "grammar/bigrams"));
  std::vector<std::vector<std::size_t>> successors(grammar_size);
  for (auto& s : successors) {
    std::vector<std::size_t> all(grammar_size);
    for (std::size_t i = 0; i < grammar_size; ++i) all[i] = i;
    grammar_rng.shuffle(all);
    s.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(opt.branching, grammar_size)));
  }

  Rng sent_rng(derive_seed(seed, "grammar/sentences"));
  for (std::size_t i = 0; i < n_sentences; ++i) {
    const std::size_t len = opt.min_len + sent_rng.below(opt.max_len - opt.min_len + 1);
    std::size_t w = sent_rng.below(grammar_size);
    Sentence src, tgt;
    for (std::size_t k = 0; k < len; ++k) {
      src.push_back(c.source_words[w]);
      tgt.push_back(c.lexicon.at(c.source_words[w]));
      w = successors[w][sent_rng.below(successors[w].size())];
    }
    c.pairs.emplace_back(std::move(src), std::move(tgt));
  }
  return c;
}

/// Word-for-word translation through the corpus lexicon; unknown words map to unk.
inline Sentence lexicon_translate(const std::map<std::string, std::string>& lexicon, const Sentence& s) {
  Sentence out;
  for (const auto& w : s) {
    auto it = lexicon.find(w);
    out.push_back(it == lexicon.end() ? std::string(kUnkSurface) : it->second);
  }
  return out;
}

struct ConfusionModel {
  std::vector<Sentence> homophone_groups;
  double p_confuse = 0.3;
  double p_elide = 0.05;
  double score_temperature = 1.0;
  /// Noisy variants drawn per utterance before ranking; 0 means 8 * n.
  std::size_t sample_attempts = 0;
};

inline void validate(const ConfusionModel& cm) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(cm.p_confuse) || !prob(cm.p_elide)) throw Error("confusion probabilities must lie in [0, 1]");
  if (cm.score_temperature < 0.0) throw Error("score_temperature must be non-negative");
  std::set<std::string> seen;
  for (const auto& g : cm.homophone_groups)
    for (const auto& w : g)
      if (!seen.insert(w).second) throw Error("homophone groups overlap on '" + w + "'");
}

struct SimulatedNbest {
  CandidateSet set;
  std::vector<std::string> warnings;
};

/// Draws noisy variants of `transcript` and ranks them together with the
/// transcript itself by score = -edit_distance + temperature * Gumbel noise.
/// The top n distinct variants form the n-best list; with temperature > 0
/// the transcript need not come first.
inline SimulatedNbest simulate_nbest(const Sentence& transcript, const ConfusionModel& cm, std::size_t n,
                                     std::uint64_t seed) {
  if (n < 1) throw Error("simulate_nbest: n must be positive");
  validate(cm);
  std::map<std::string, const Sentence*> group_of;
  for (const auto& g : cm.homophone_groups)
    for (const auto& w : g) group_of[w] = &g;

  Rng rng(seed);
  std::vector<Sentence> pool{transcript};
  std::set<Sentence> seen{transcript};
  const std::size_t attempts = cm.sample_attempts ? cm.sample_attempts : 8 * n;
  for (std::size_t a = 0; a < attempts; ++a) {
    Sentence v;
    for (const auto& w : transcript) {
      if (rng.bernoulli(cm.p_elide)) continue;
      auto it = group_of.find(w);
      if (it != group_of.end() && it->second->size() > 1 && rng.bernoulli(cm.p_confuse)) {
        const Sentence& g = *it->second;
        std::size_t pick = rng.below(g.size() - 1);
        if (g[pick] == w) pick = g.size() - 1;
        v.push_back(g[pick]);
      } else {
        v.push_back(w);
      }
    }
    if (v.empty() && !transcript.empty()) continue;
    if (seen.insert(v).second) pool.push_back(std::move(v));
  }

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double dist = static_cast<double>(edit_distance(pool[i], transcript));
    const double noise = cm.score_temperature > 0.0 ? cm.score_temperature * rng.gumbel() : 0.0;
    ranked.emplace_back(-dist + noise, i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  SimulatedNbest out;
  out.set.transcript = transcript;
  for (std::size_t k = 0; k < std::min(n, ranked.size()); ++k) {
    out.set.candidates.push_back(pool[ranked[k].second]);
    out.set.scores.push_back(ranked[k].first);
  }
  if (out.set.candidates.size() < n)
    out.warnings.push_back("only " + std::to_string(out.set.candidates.size()) + " distinct candidates (requested " +
                           std::to_string(n) + ")");
  return out;
}

/// Plain-text homophone groups: one group per line, words separated by
/// spaces; blank lines and lines starting with '#' are ignored.
inline std::vector<Sentence> read_homophone_groups(std::istream& in) {
  std::vector<Sentence> groups;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_words(line);
    if (words.empty() || words.front().rfind('#', 0) == 0) continue;
    groups.push_back(std::move(words));
  }
  return groups;
}

inline std::vector<Sentence> read_homophone_groups_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_homophone_groups(in);
}

inline void write_homophone_groups(std::ostream& out, const std::vector<Sentence>& groups) {
  for (const auto& g : groups) out << join_words(g) << '\n';
}

}  // namespace mcst
