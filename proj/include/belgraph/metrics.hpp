// Evaluation statistics for belief trajectories: rank correlation, pairwise
// belief-structure agreement, action-conditioned belief change (Cohen's d),
// length-normalized DTW, and clustering of short rating trajectories.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"

namespace belgraph::metrics {

// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo + 1;
    while (hi < n && xs[idx[hi]] == xs[idx[lo]]) ++hi;
    const double r = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) ranks[idx[k]] = r;
    lo = hi;
  }
  return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  const std::size_t n = xs.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sxy += (xs[k] - mx) * (ys[k] - my);
    sxx += (xs[k] - mx) * (xs[k] - mx);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelationError("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DimensionError("spearman: sequences differ in length");
  if (xs.size() < 2) throw UndefinedCorrelationError("spearman: need at least two samples");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

//--------------------------------------------------------------------------
// Cohen's d with the pooled standard deviation over both groups.
inline double cohens_d_groups(std::span<const double> group1, std::span<const double> group0) {
  if (group1.size() < 2)
    throw InsufficientGroupError("cohens_d: action-change group (y=1) has fewer than 2 samples");
  if (group0.size() < 2)
    throw InsufficientGroupError("cohens_d: no-change group (y=0) has fewer than 2 samples");
  auto mean_var = [](std::span<const double> g) {
    double m = 0.0;
    for (double x : g) m += x;
    m /= static_cast<double>(g.size());
    double ss = 0.0;
    for (double x : g) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(g.size() - 1)};
  };
  const auto [mu1, var1] = mean_var(group1);
  const auto [mu0, var0] = mean_var(group0);
  const double n1 = static_cast<double>(group1.size()), n0 = static_cast<double>(group0.size());
  const double pooled = std::sqrt(((n1 - 1.0) * var1 + (n0 - 1.0) * var0) / (n1 + n0 - 2.0));
  if (pooled == 0.0) throw DivisionByZeroError("cohens_d: pooled standard deviation is zero");
  return (mu1 - mu0) / pooled;
}

// belief_marginals[n][t] is agent n's K-vector at step t. Samples are the
// L1 belief change at every t >= 1, split by whether the action changed.
inline double cohens_d(const std::vector<std::vector<Vec>>& belief_marginals,
                       const std::vector<std::vector<int>>& actions) {
  if (belief_marginals.size() != actions.size())
    throw DimensionError("cohens_d: agent counts differ");
  std::vector<double> g1, g0;
  for (std::size_t n = 0; n < actions.size(); ++n) {
    const auto& b = belief_marginals[n];
    const auto& a = actions[n];
    if (b.size() != a.size()) throw DimensionError("cohens_d: trajectory lengths differ");
    for (std::size_t t = 1; t < a.size(); ++t) {
      const double x = (b[t] - b[t - 1]).lpNorm<1>();
      (a[t] != a[t - 1] ? g1 : g0).push_back(x);
    }
  }
  return cohens_d_groups(g1, g0);
}

//--------------------------------------------------------------------------
// DTW with |x - y| cost, unconstrained window, both endpoints anchored.
inline double dtw(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw EmptySequenceError("dtw: empty sequence");
  const std::size_t n = x.size(), m = y.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = std::abs(x[i - 1] - y[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    std::swap(prev, cur);
  }
  return prev[m];
}

// pred[n][t] / gt[n][t] are K-vectors; only the first valid_lengths[n] steps
// count. Returns the mean over (agent, belief) of DTW / T_n.
inline double dtw_avg(const std::vector<std::vector<Vec>>& pred,
                      const std::vector<std::vector<Vec>>& gt,
                      const std::vector<int>& valid_lengths) {
  if (pred.size() != gt.size() || pred.size() != valid_lengths.size())
    throw DimensionError("dtw_avg: agent counts differ");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const int Tn = valid_lengths[n];
    if (Tn < 1) throw EmptySequenceError("dtw_avg: agent " + std::to_string(n) + " has no steps");
    if (static_cast<int>(pred[n].size()) < Tn || static_cast<int>(gt[n].size()) < Tn)
      throw DimensionError("dtw_avg: valid length exceeds trajectory");
    const auto K = pred[n][0].size();
    for (Eigen::Index i = 0; i < K; ++i) {
      std::vector<double> xs(Tn), ys(Tn);
      for (int t = 0; t < Tn; ++t) {
        xs[t] = pred[n][t][i];
        ys[t] = gt[n][t][i];
      }
      total += dtw(xs, ys) / Tn;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

//--------------------------------------------------------------------------
// Per-belief Spearman between predictions and ratings. When `step` is
// negative every (agent, step) sample is pooled; otherwise only that step.
inline std::vector<double> per_belief_spearman(const std::vector<std::vector<Vec>>& pred,
                                               const std::vector<std::vector<Vec>>& gt,
                                               int step = -1) {
  if (pred.empty()) throw UndefinedCorrelationError("per_belief_spearman: no agents");
  const auto K = pred[0][0].size();
  std::vector<double> out(K, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < K; ++i) {
    std::vector<double> xs, ys;
    for (std::size_t n = 0; n < pred.size(); ++n)
      for (std::size_t t = 0; t < pred[n].size(); ++t) {
        if (step >= 0 && static_cast<int>(t) != step) continue;
        if (std::isnan(pred[n][t][i]) || std::isnan(gt[n][t][i])) continue;
        xs.push_back(pred[n][t][i]);
        ys.push_back(gt[n][t][i]);
      }
    try {
      out[i] = spearman(xs, ys);
    } catch (const UndefinedCorrelationError&) {
      // leave NaN
    }
  }
  return out;
}

struct PairwiseStructure {
  std::vector<double> values;  // (i<j) lexicographic; NaN where undefined
};

// r_ij = Spearman between beliefs i and j across all (agent, step) samples.
inline PairwiseStructure pairwise_structure(const std::vector<std::vector<Vec>>& beliefs) {
  PairwiseStructure s;
  if (beliefs.empty() || beliefs[0].empty()) return s;
  const auto K = beliefs[0][0].size();
  std::vector<std::vector<double>> cols(K);
  for (const auto& agent : beliefs)
    for (const auto& v : agent)
      for (Eigen::Index i = 0; i < K; ++i) cols[i].push_back(v[i]);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = i + 1; j < K; ++j) {
      double r = std::numeric_limits<double>::quiet_NaN();
      try {
        r = spearman(cols[i], cols[j]);
      } catch (const UndefinedCorrelationError&) {
      }
      s.values.push_back(r);
    }
  return s;
}

struct StructureScore {
  double score = 0.0;
  int excluded_pairs = 0;
  int used_pairs = 0;
};

inline StructureScore pairwise_structure_score(const std::vector<std::vector<Vec>>& pred,
                                               const std::vector<std::vector<Vec>>& gt) {
  if (pred.size() < 3) throw UndefinedCorrelationError("pairwise_structure_score: need >= 3 agents");
  if (pred[0].empty() || pred[0][0].size() < 2)
    throw UndefinedCorrelationError("pairwise_structure_score: need K >= 2");
  const auto rp = pairwise_structure(pred);
  const auto rg = pairwise_structure(gt);
  StructureScore out;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < rp.values.size(); ++k) {
    if (std::isnan(rp.values[k]) || std::isnan(rg.values[k])) {
      ++out.excluded_pairs;
      continue;
    }
    xs.push_back(rg.values[k]);
    ys.push_back(rp.values[k]);
  }
  out.used_pairs = static_cast<int>(xs.size());
  if (xs.size() < 2)
    throw UndefinedCorrelationError("pairwise_structure_score: fewer than 2 defined pairs");
  out.score = spearman(xs, ys);
  return out;
}

//--------------------------------------------------------------------------
// Clustering of short rating trajectories.

inline constexpr double kZScoreEps = 1e-8;

// Within-trajectory z-score with population SD and an additive stability eps.
inline std::vector<double> z_normalize(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  const double sigma = std::sqrt(ss / n);
  std::vector<double> z(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) z[k] = (xs[k] - mu) / (sigma + kZScoreEps);
  return z;
}

struct Clustering {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  std::vector<std::vector<double>> normalized;
  int iterations = 0;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// k-means++ seeding then Lloyd iterations until assignments stop changing
// (at most max_iter rounds).
inline Clustering kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                         int max_iter = 100) {
  const std::size_t n = points.size();
  if (k <= 0 || n < static_cast<std::size_t>(k))
    throw ConfigError("kmeans: need at least k=" + std::to_string(k) + " points, got " +
                      std::to_string(n));
  std::mt19937_64 rng(seed);
  Clustering c;
  c.centroids.push_back(points[rng() % n]);
  std::vector<double> d2(n);
  while (static_cast<int>(c.centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& ctr : c.centroids) best = std::min(best, squared_distance(points[p], ctr));
      d2[p] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = detail::uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t p = 0; p < n; ++p) {
        acc += d2[p];
        if (u < acc) {
          pick = p;
          break;
        }
      }
    } else {
      pick = rng() % n;
    }
    c.centroids.push_back(points[pick]);
  }
  c.labels.assign(n, -1);
  const std::size_t dim = points[0].size();
  for (c.iterations = 0; c.iterations < max_iter; ++c.iterations) {
    bool changed = false;
    for (std::size_t p = 0; p < n; ++p) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double dd = squared_distance(points[p], c.centroids[j]);
        if (dd < best_d) {
          best_d = dd;
          best = j;
        }
      }
      if (c.labels[p] != best) {
        c.labels[p] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      ++counts[c.labels[p]];
      for (std::size_t e = 0; e < dim; ++e) sums[c.labels[p]][e] += points[p][e];
    }
    for (int j = 0; j < k; ++j)
      if (counts[j] > 0)
        for (std::size_t e = 0; e < dim; ++e) c.centroids[j][e] = sums[j][e] / counts[j];
  }
  return c;
}

inline Clustering cluster_trajectories(const std::vector<std::vector<double>>& ratings, int k = 3,
                                       std::uint64_t seed = 0) {
  if (ratings.size() < static_cast<std::size_t>(std::max(k, 1)))
    throw ConfigError("cluster_trajectories: fewer agents (" + std::to_string(ratings.size()) +
                      ") than clusters (" + std::to_string(k) + ")");
  std::vector<std::vector<double>> z;
  z.reserve(ratings.size());
  for (const auto& r : ratings) {
    if (r.size() != 3) throw DimensionError("cluster_trajectories: each trajectory needs 3 points");
    z.push_back(z_normalize(r));
  }
  auto c = kmeans(z, k, seed);
  c.normalized = std::move(z);
  return c;
}

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: label counts differ");
  std::map<std::pair<int, int>, long> joint;
  std::map<int, long> ca, cb;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ++joint[{a[k], b[k]}];
    ++ca[a[k]];
    ++cb[b[k]];
  }
  auto c2 = [](long n) { return 0.5 * static_cast<double>(n) * static_cast<double>(n - 1); };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, n] : joint) sum_joint += c2(n);
  for (const auto& [key, n] : ca) sum_a += c2(n);
  for (const auto& [key, n] : cb) sum_b += c2(n);
  const double total = c2(static_cast<long>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

}  // namespace belgraph::metrics
