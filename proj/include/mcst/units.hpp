// Discrete speech units: synthetic frame features, k-means quantization and
// run-length deduplication.
#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mcst/core.hpp"

namespace mcst {

struct Quantizer {
  Eigen::MatrixXd centroids;  // K x d_feat

  std::size_t k() const { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t d_feat() const { return static_cast<std::size_t>(centroids.cols()); }
};

struct KMeansResult {
  Quantizer quantizer;
  std::vector<double> inertia;  // one entry per assignment step
  std::vector<int> assignment;
};

namespace detail {

/// Nearest centroid by squared Euclidean distance; ties go to the lower id.
inline std::pair<int, double> nearest(const Eigen::MatrixXd& centroids,
                                      const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Stops after `iters` assignment
/// steps or when assignments stop changing. A cluster that loses all its
/// points is re-seeded at the point farthest from its own centroid.
inline KMeansResult kmeans_fit(const Eigen::MatrixXd& features, std::size_t k, std::uint64_t seed,
                               std::size_t iters) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k < 1) throw Error("kmeans: K must be at least 1");
  if (k > n)
    throw Error("kmeans: K=" + std::to_string(k) + " exceeds number of points " +
                std::to_string(n));
  if (!features.allFinite()) throw Error("kmeans: non-finite features");

  Rng rng(seed);
  Eigen::MatrixXd centroids(static_cast<Eigen::Index>(k), features.cols());
  centroids.row(0) = features.row(static_cast<Eigen::Index>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = (features.row(static_cast<Eigen::Index>(i)) - centroids.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    if (total <= 0.0) throw Error("kmeans: fewer distinct points than K=" + std::to_string(k));
    const double r = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > r) {
        pick = i;
        break;
      }
    }
    if (pick == n)  // rounding at the tail: take the last point with mass
      for (std::size_t i = n; i-- > 0;)
        if (d2[i] > 0.0) {
          pick = i;
          break;
        }
    centroids.row(static_cast<Eigen::Index>(c)) = features.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(
          d2[i], (features.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(c)))
                     .squaredNorm());
  }

  KMeansResult res;
  std::vector<int> assign(n, -1);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < iters; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto [c, d] = detail::nearest(centroids, features.row(static_cast<Eigen::Index>(i)));
      changed |= c != assign[i];
      assign[i] = c;
      dist[i] = d;
      inertia += d;
    }
    res.inertia.push_back(inertia);
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += features.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (counts[c] > 0) {
        centroids.row(ci) = sums.row(ci) / static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      centroids.row(ci) = features.row(static_cast<Eigen::Index>(far));
      dist[far] = 0.0;
    }
  }
  res.quantizer.centroids = std::move(centroids);
  res.assignment = std::move(assign);
  return res;
}

/// Maps each frame (row) to its nearest centroid.
inline UnitSequence quantize(const Quantizer& q, const Eigen::MatrixXd& features) {
  if (static_cast<std::size_t>(features.cols()) != q.d_feat() && features.rows() > 0)
    throw Error("quantize: feature dimension " + std::to_string(features.cols()) +
                " does not match quantizer dimension " + std::to_string(q.d_feat()));
  UnitSequence u;
  u.ids.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    u.ids.push_back(detail::nearest(q.centroids, features.row(i)).first);
  return u;
}

/// Collapses runs of equal consecutive ids.
inline UnitSequence dedup(const UnitSequence& u) {
  UnitSequence out;
  out.deduplicated = true;
  for (int id : u.ids)
    if (out.ids.empty() || out.ids.back() != id) out.ids.push_back(id);
  return out;
}

/// Word to pronunciation key. Words of one homophone group share the key of
/// the group's first word; any other word is its own key.
class Pronunciation {
 public:
  Pronunciation() = default;
  explicit Pronunciation(const std::vector<Sentence>& homophone_groups) {
    for (const auto& g : homophone_groups)
      for (const auto& w : g)
        if (!g.empty()) key_[w] = g.front();
  }

  const std::string& key(const std::string& word) const {
    auto it = key_.find(word);
    return it == key_.end() ? word : it->second;
  }

 private:
  std::map<std::string, std::string> key_;
};

struct FeatureSpec {
  std::size_t d_feat = 16;
  std::size_t frames_per_word = 4;
  double noise = 0.05;
  /// Per-word offset around the shared anchor of a homophone group; 0 makes
  /// group members acoustically identical.
  double homophone_spread = 0.0;
};

/// Fixed anchor vector of a word: its pronunciation key's anchor plus the
/// word's own offset scaled by `spread`.
inline Eigen::RowVectorXd word_anchor(const std::string& word, const Pronunciation& pron,
                                      std::size_t d_feat, double spread) {
  Eigen::RowVectorXd a(static_cast<Eigen::Index>(d_feat));
  Rng base(derive_seed(0, "anchor:" + pron.key(word)));
  for (auto& x : a) x = base.normal();
  if (spread != 0.0) {
    Rng off(derive_seed(0, "offset:" + word));
    for (auto& x : a) x += spread * off.normal();
  }
  return a;
}

/// Frame features for an utterance: each word contributes frames_per_word
/// copies of its anchor with i.i.d. Gaussian noise.
inline Eigen::MatrixXd synth_features(const Sentence& utterance, const Pronunciation& pron,
                                      const FeatureSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const auto rows = static_cast<Eigen::Index>(utterance.size() * spec.frames_per_word);
  Eigen::MatrixXd f(rows, static_cast<Eigen::Index>(spec.d_feat));
  Eigen::Index r = 0;
  for (const auto& w : utterance) {
    const auto anchor = word_anchor(w, pron, spec.d_feat, spec.homophone_spread);
    for (std::size_t k = 0; k < spec.frames_per_word; ++k, ++r) {
      f.row(r) = anchor;
      if (spec.noise != 0.0)
        for (Eigen::Index c = 0; c < f.cols(); ++c) f(r, c) += rng.normal(0.0, spec.noise);
    }
  }
  return f;
}

inline void save_quantizer(const std::string& path, const Quantizer& q) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open " + path + " for writing");
  std::fprintf(f, "mcst-quantizer 1\n%zu %zu\n", q.k(), q.d_feat());
  for (Eigen::Index r = 0; r < q.centroids.rows(); ++r)
    for (Eigen::Index c = 0; c < q.centroids.cols(); ++c)
      std::fprintf(f, "%.17g%c", q.centroids(r, c), c + 1 == q.centroids.cols() ? '\n' : ' ');
  std::fclose(f);
}

inline Quantizer load_quantizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string magic;
  int version = 0;
  std::size_t k = 0, d = 0;
  if (!(in >> magic >> version >> k >> d) || magic != "mcst-quantizer" || version != 1)
    throw Error(path + ": not a quantizer file");
  Quantizer q;
  q.centroids.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < q.centroids.rows(); ++r)
    for (Eigen::Index c = 0; c < q.centroids.cols(); ++c)
      if (!(in >> q.centroids(r, c))) throw Error(path + ": truncated centroid table");
  return q;
}

}  // namespace mcst
