// Brute-force reference computations used only by the tests. They share no
// code paths with the library beyond plain data types.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "belgraph/core.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

// Energy of the configuration with the given index, from explicit bit loops.
inline double energy(const std::vector<double>& u, const Grid& psi, std::uint32_t s) {
  const int K = static_cast<int>(u.size());
  std::vector<int> b(K);
  for (int i = 0; i < K; ++i) b[i] = (s >> i) & 1;
  double e = 0.0;
  for (int i = 0; i < K; ++i) e += u[i] * b[i];
  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j) e += psi[i][j] * b[i] * b[j];
  return e;
}

// Unshifted sum; fine for the small, moderate instances the tests use.
inline std::vector<double> joint(const std::vector<double>& u, const Grid& psi) {
  const int K = static_cast<int>(u.size());
  std::vector<double> w(1U << K);
  double z = 0.0;
  for (std::uint32_t s = 0; s < w.size(); ++s) {
    w[s] = std::exp(energy(u, psi, s));
    z += w[s];
  }
  for (auto& x : w) x /= z;
  return w;
}

inline double log_partition(const std::vector<double>& u, const Grid& psi) {
  double z = 0.0;
  for (std::uint32_t s = 0; s < (1U << u.size()); ++s) z += std::exp(energy(u, psi, s));
  return std::log(z);
}

inline std::vector<double> marginals(const std::vector<double>& u, const Grid& psi) {
  const auto p = joint(u, psi);
  std::vector<double> m(u.size(), 0.0);
  for (std::uint32_t s = 0; s < p.size(); ++s)
    for (std::size_t i = 0; i < u.size(); ++i)
      if ((s >> i) & 1U) m[i] += p[s];
  return m;
}

inline double product_prob(const std::vector<double>& q, std::uint32_t s) {
  double p = 1.0;
  for (std::size_t i = 0; i < q.size(); ++i) p *= ((s >> i) & 1U) ? q[i] : 1.0 - q[i];
  return p;
}

inline double kl(const std::vector<double>& q, const std::vector<double>& u, const Grid& psi) {
  const auto p = joint(u, psi);
  double total = 0.0;
  for (std::uint32_t s = 0; s < p.size(); ++s) {
    const double qs = product_prob(q, s);
    if (qs > 0.0) total += qs * (std::log(qs) - std::log(p[s]));
  }
  return total;
}

// Plain-loop single-head attention: returns (A, Z).
struct AttentionOut {
  Grid A, Z;
};

inline AttentionOut attention(const Grid& X, const Grid& WQ, const Grid& WK, const Grid& WV) {
  const std::size_t K = X.size(), d = X[0].size(), dk = WQ[0].size();
  auto project = [&](const Grid& W) {
    Grid out(K, std::vector<double>(dk, 0.0));
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t c = 0; c < dk; ++c)
        for (std::size_t r = 0; r < d; ++r) out[i][c] += X[i][r] * W[r][c];
    return out;
  };
  const Grid Q = project(WQ), Kx = project(WK), V = project(WV);
  AttentionOut o;
  o.A.assign(K, std::vector<double>(K, 0.0));
  o.Z.assign(K, std::vector<double>(dk, 0.0));
  for (std::size_t i = 0; i < K; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += Q[i][c] * Kx[k][c];
      o.A[i][k] = std::exp(s / std::sqrt(static_cast<double>(dk)));
      norm += o.A[i][k];
    }
    for (std::size_t k = 0; k < K; ++k) o.A[i][k] /= norm;
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < dk; ++c) o.Z[i][c] += o.A[i][k] * V[k][c];
  }
  return o;
}

inline Grid to_grid(const belgraph::Mat& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline std::vector<double> to_std(const belgraph::Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

// Random potentials with entries in [-scale, scale].
struct RandomPotentials {
  std::vector<double> u;
  Grid psi;
};

inline RandomPotentials random_potentials(int K, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> U(-scale, scale);
  RandomPotentials r;
  r.u.resize(K);
  r.psi.assign(K, std::vector<double>(K, 0.0));
  for (int i = 0; i < K; ++i) r.u[i] = U(rng);
  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j) r.psi[i][j] = r.psi[j][i] = U(rng);
  return r;
}

}  // namespace oracle
