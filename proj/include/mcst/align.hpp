// Progressive n-best alignment: every candidate is aligned against the
// running first row by longest common subsequence, and gaps are padded with
// unk so that all rows end up with one common length.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcst/core.hpp"

namespace mcst {

/// Matched (index-in-a, index-in-b) pairs, strictly increasing in both.
struct LcsTrace {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t size() const { return pairs.size(); }
  bool operator==(const LcsTrace&) const = default;
};

/// Longest common subsequence by the O(|a||b|) suffix table. The traceback
/// walks forward from (0,0) and takes a match whenever the heads agree,
/// otherwise it consumes from `a` unless that loses length, which yields the
/// leftmost match in `a`, then in `b`.
template <class T>
LcsTrace lcs(std::span<const T> a, std::span<const T> b) {
  const std::size_t n = a.size(), m = b.size();
  // table[i][j] = LCS length of a[i:], b[j:]
  std::vector<std::size_t> table((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return table[i * (m + 1) + j]; };
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      at(i, j) = a[i] == b[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));

  LcsTrace trace;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (a[i] == b[j]) {
      trace.pairs.emplace_back(i, j);
      ++i;
      ++j;
    } else if (at(i + 1, j) >= at(i, j + 1)) {
      ++i;
    } else {
      ++j;
    }
  }
  return trace;
}

template <class T>
LcsTrace lcs(const std::vector<T>& a, const std::vector<T>& b) {
  return lcs(std::span<const T>(a), std::span<const T>(b));
}

template <class T>
struct PaddedPair {
  std::vector<T> a, b;
  std::vector<bool> a_padded, b_padded;  // true where an unk was inserted
};

/// Interleaves both sequences around the matched tokens. Inside each gap both
/// sides keep their own tokens left-aligned and are right-padded with `unk`
/// to the longer of the two gap lengths.
template <class T>
PaddedPair<T> pairwise_pad(const std::vector<T>& a, const std::vector<T>& b, const LcsTrace& trace,
                           const T& unk) {
  PaddedPair<T> out;
  auto emit_gap = [&](std::size_t a_from, std::size_t a_to, std::size_t b_from, std::size_t b_to) {
    const std::size_t ga = a_to - a_from, gb = b_to - b_from, width = std::max(ga, gb);
    for (std::size_t k = 0; k < width; ++k) {
      const bool pa = k >= ga, pb = k >= gb;
      out.a.push_back(pa ? unk : a[a_from + k]);
      out.a_padded.push_back(pa);
      out.b.push_back(pb ? unk : b[b_from + k]);
      out.b_padded.push_back(pb);
    }
  };

  std::size_t ia = 0, ib = 0;
  for (auto [ma, mb] : trace.pairs) {
    if (ma < ia || mb < ib || ma >= a.size() || mb >= b.size() || !(a[ma] == b[mb]))
      throw Error("pairwise_pad: trace is not a valid common subsequence");
    emit_gap(ia, ma, ib, mb);
    out.a.push_back(a[ma]);
    out.a_padded.push_back(false);
    out.b.push_back(b[mb]);
    out.b_padded.push_back(false);
    ia = ma + 1;
    ib = mb + 1;
  }
  emit_gap(ia, a.size(), ib, b.size());
  return out;
}

template <class T>
struct Alignment {
  std::vector<std::vector<T>> rows;
  std::vector<std::vector<bool>> pad_mask;
  std::vector<std::size_t> provenance;  // original candidate index of each row

  std::size_t length() const { return rows.empty() ? 0 : rows.front().size(); }
};

/// Aligns the first `n` sequences. Round m aligns the running first row
/// against sequence m+1; the columns where the first row received padding
/// are then inserted into every row aligned so far.
template <class T>
Alignment<T> align_sequences(const std::vector<std::vector<T>>& seqs, std::size_t n, const T& unk) {
  if (n < 1 || n > seqs.size())
    throw Error("align: n=" + std::to_string(n) + " outside [1, " + std::to_string(seqs.size()) +
                "]");
  Alignment<T> al;
  al.rows.push_back(seqs[0]);
  al.pad_mask.emplace_back(seqs[0].size(), false);
  al.provenance.push_back(0);

  for (std::size_t m = 1; m < n; ++m) {
    const auto& next = seqs[m];
    auto trace = lcs(al.rows[0], next);
    auto padded = pairwise_pad(al.rows[0], next, trace, unk);

    // Old row-0 columns map to the non-inserted positions of padded.a, in order.
    const std::size_t width = padded.a.size();
    std::vector<std::vector<T>> rows(al.rows.size());
    std::vector<std::vector<bool>> masks(al.rows.size());
    for (std::size_t r = 0; r < al.rows.size(); ++r) {
      rows[r].reserve(width);
      masks[r].reserve(width);
      std::size_t src = 0;
      for (std::size_t col = 0; col < width; ++col) {
        if (padded.a_padded[col]) {
          rows[r].push_back(unk);
          masks[r].push_back(true);
        } else {
          rows[r].push_back(al.rows[r][src]);
          masks[r].push_back(al.pad_mask[r][src]);
          ++src;
        }
      }
    }
    rows.push_back(std::move(padded.b));
    masks.push_back(std::move(padded.b_padded));
    al.rows = std::move(rows);
    al.pad_mask = std::move(masks);
    al.provenance.push_back(m);
  }
  return al;
}

/// Removes padded positions from a row.
template <class T>
std::vector<T> unpad(const std::vector<T>& row, const std::vector<bool>& mask) {
  std::vector<T> out;
  for (std::size_t i = 0; i < row.size(); ++i)
    if (!mask[i]) out.push_back(row[i]);
  return out;
}

struct AlignedCandidateSet {
  std::string utterance_id;
  std::vector<Sentence> rows;
  std::vector<std::vector<bool>> pad_mask;
  std::vector<std::size_t> provenance;

  std::size_t length() const { return rows.empty() ? 0 : rows.front().size(); }
};

inline AlignedCandidateSet align_candidates(const CandidateSet& cands, std::size_t n) {
  auto al = align_sequences(cands.candidates, n, std::string(kUnkSurface));
  return {cands.utterance_id, std::move(al.rows), std::move(al.pad_mask),
          std::move(al.provenance)};
}

}  // namespace mcst
