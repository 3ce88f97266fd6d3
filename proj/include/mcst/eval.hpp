// Metrics and n-best analyses: lexical overlap against the transcript,
// BLEU-4, WER and the best-candidate index distribution.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcst/core.hpp"

namespace mcst {

struct Overlap {
  double average = 0.0;
  double cumulative = 0.0;
};

/// Word-type overlap of the first n candidates with the transcript.
/// cumulative = |(U_k words(c_k)) & words(gt)| / |words(gt)|
/// average    = mean_k |words(c_k) & words(gt)| / |words(gt)|
inline Overlap lexical_overlap(const CandidateSet& cands, std::size_t n) {
  if (cands.transcript.empty()) throw Error("lexical_overlap: empty transcript");
  if (n < 1 || n > cands.candidates.size()) throw Error("lexical_overlap: n out of range");
  const std::set<std::string> gt(cands.transcript.begin(), cands.transcript.end());
  std::set<std::string> seen;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t hit = 0;
    for (const auto& w : std::set<std::string>(cands.candidates[k].begin(), cands.candidates[k].end()))
      if (gt.count(w)) {
        ++hit;
        seen.insert(w);
      }
    sum += static_cast<double>(hit) / static_cast<double>(gt.size());
  }
  return {sum / static_cast<double>(n),
          static_cast<double>(seen.size()) / static_cast<double>(gt.size())};
}

struct OverlapRow {
  std::size_t n = 0;
  double average_overlap = 0.0;
  double cumulative_overlap = 0.0;
};

struct OverlapReport {
  std::vector<OverlapRow> rows;
};

/// Corpus means of lexical_overlap. Utterances with fewer than n candidates
/// contribute with all the candidates they have.
inline OverlapReport overlap_report(const std::vector<CandidateSet>& corpus,
                                    const std::vector<std::size_t>& ns) {
  OverlapReport rep;
  for (std::size_t n : ns) {
    OverlapRow row{n, 0.0, 0.0};
    std::size_t used = 0;
    for (const auto& c : corpus) {
      if (c.transcript.empty()) continue;
      auto o = lexical_overlap(c, std::min(n, c.candidates.size()));
      row.average_overlap += o.average;
      row.cumulative_overlap += o.cumulative;
      ++used;
    }
    if (used) {
      row.average_overlap /= static_cast<double>(used);
      row.cumulative_overlap /= static_cast<double>(used);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

struct NgramStats {
  std::array<double, 4> matches{};
  std::array<double, 4> totals{};
  double hyp_len = 0.0;
  double ref_len = 0.0;

  NgramStats& operator+=(const NgramStats& o) {
    for (int i = 0; i < 4; ++i) {
      matches[i] += o.matches[i];
      totals[i] += o.totals[i];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

/// Clipped 1..4-gram match counts.
template <class T>
NgramStats ngram_stats(const std::vector<T>& hyp, const std::vector<T>& ref) {
  NgramStats s;
  s.hyp_len = static_cast<double>(hyp.size());
  s.ref_len = static_cast<double>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<T>, int> ref_counts, hyp_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<T>(ref.begin() + i, ref.begin() + i + n)];
    for (std::size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<T>(hyp.begin() + i, hyp.begin() + i + n)];
    double m = 0.0;
    for (const auto& [g, c] : hyp_counts) {
      auto it = ref_counts.find(g);
      if (it != ref_counts.end()) m += std::min(c, it->second);
    }
    s.matches[n - 1] = m;
    s.totals[n - 1] = hyp.size() >= n ? static_cast<double>(hyp.size() - n + 1) : 0.0;
  }
  return s;
}

/// BLEU-4 on accumulated statistics, in [0, 100]. A higher-order precision
/// with zero matches is smoothed to 1 / (total + 1).
inline double bleu_from_stats(const NgramStats& s) {
  if (s.hyp_len == 0.0 || s.matches[0] == 0.0) return 0.0;
  double log_p = 0.0;
  for (int i = 0; i < 4; ++i) {
    double p;
    if (i > 0 && s.matches[i] == 0.0)
      p = 1.0 / (s.totals[i] + 1.0);
    else
      p = s.matches[i] / s.totals[i];
    log_p += std::log(p) / 4.0;
  }
  const double bp = s.hyp_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
  return 100.0 * bp * std::exp(log_p);
}

template <class T>
double bleu(const std::vector<T>& hyp, const std::vector<T>& ref) {
  if (ref.empty()) throw Error("bleu: empty reference");
  return bleu_from_stats(ngram_stats(hyp, ref));
}

/// Corpus-level BLEU: n-gram statistics summed before the precision ratios.
template <class T>
double corpus_bleu(const std::vector<std::vector<T>>& hyps, const std::vector<std::vector<T>>& refs) {
  if (hyps.size() != refs.size()) throw Error("corpus_bleu: size mismatch");
  NgramStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += ngram_stats(hyps[i], refs[i]);
  return bleu_from_stats(total);
}

template <class T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Word error rate: Levenshtein distance over |reference|.
template <class T>
double wer(const std::vector<T>& hyp, const std::vector<T>& ref) {
  if (ref.empty()) throw Error("wer: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

struct BestIndexReport {
  std::size_t n = 0;
  std::vector<std::size_t> counts;   // counts[i] = utterances whose best candidate is i+1
  std::vector<double> percentages;
  double first_candidate_bleu = 0.0;
  double oracle_candidate_bleu = 0.0;
  std::size_t utterances = 0;
};

using Translator = std::function<Sentence(const Sentence&)>;

/// Translates each of the first n candidates, scores them against the
/// reference and histograms the argmax index (ties go to the lower index).
/// Also returns the mean BLEU of candidate 1 and of the per-utterance best.
inline BestIndexReport best_index_analysis(const std::vector<CandidateSet>& corpus,
                                           const Translator& translate, std::size_t n,
                                           bool score_against_transcript = false) {
  if (n < 1) throw Error("best_index_analysis: n must be positive");
  BestIndexReport rep;
  rep.n = n;
  rep.counts.assign(n, 0);
  for (const auto& c : corpus) {
    const Sentence& ref = score_against_transcript ? c.transcript : c.reference;
    if (ref.empty()) continue;
    const std::size_t limit = std::min(n, c.candidates.size());
    std::size_t best = 0;
    double best_bleu = -1.0, first = 0.0;
    for (std::size_t k = 0; k < limit; ++k) {
      const double b = bleu(translate(c.candidates[k]), ref);
      if (k == 0) first = b;
      if (b > best_bleu) {
        best_bleu = b;
        best = k;
      }
    }
    ++rep.counts[best];
    rep.first_candidate_bleu += first;
    rep.oracle_candidate_bleu += best_bleu;
    ++rep.utterances;
  }
  rep.percentages.assign(n, 0.0);
  if (rep.utterances) {
    const auto u = static_cast<double>(rep.utterances);
    for (std::size_t i = 0; i < n; ++i) rep.percentages[i] = 100.0 * static_cast<double>(rep.counts[i]) / u;
    rep.first_candidate_bleu /= u;
    rep.oracle_candidate_bleu /= u;
  }
  return rep;
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

/// Three-column table: n candidates | Average | Cumulative.
inline std::string render_overlap_table(const OverlapReport& rep) {
  std::string out = "Lexical overlap between ASR candidates and GT\n";
  out += "+--------------+---------+------------+\n";
  out += "| n candidates | Average | Cumulative |\n";
  out += "+--------------+---------+------------+\n";
  for (const auto& r : rep.rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "| %12zu | %7s | %10s |\n", r.n,
                  format_percent(r.average_overlap).c_str(),
                  format_percent(r.cumulative_overlap).c_str());
    out += buf;
  }
  out += "+--------------+---------+------------+\n";
  return out;
}

inline std::string render_best_index_table(const BestIndexReport& rep) {
  std::string head = "| Best BLEU idx  |", body = "| percentage(%)  |";
  for (std::size_t i = 0; i < rep.n; ++i) {
    char h[24], b[24];
    std::snprintf(h, sizeof h, " %6zu |", i + 1);
    std::snprintf(b, sizeof b, " %6.2f |", rep.percentages[i]);
    head += h;
    body += b;
  }
  std::string rule(head.size(), '-');
  char tail[160];
  std::snprintf(tail, sizeof tail,
                "first-candidate BLEU %.2f, oracle-candidate BLEU %.2f over %zu utterances\n",
                rep.first_candidate_bleu, rep.oracle_candidate_bleu, rep.utterances);
  return "Index of the best candidate by translation BLEU\n" + rule + "\n" + head + "\n" + body +
         "\n" + rule + "\n" + tail;
}

}  // namespace mcst
