// Energy-based belief transition prior over K binary beliefs.
//
// Energies use the sign convention p(b) = exp(E(b)) / Z with the gauge
// log phi_i(0) = 0, so E(b) = sum_i u_i b_i + sum_{i<j} psi_ij b_i b_j and a
// positive psi_ij favours co-activation of beliefs i and j.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"

namespace belgraph {

// Marginals fed into a KL or a log are kept away from {0,1} by this margin.
inline constexpr double kMarginalClamp = 1e-6;

inline double clamp_marginal(double q) {
  return std::min(std::max(q, kMarginalClamp), 1.0 - kMarginalClamp);
}

struct UnaryHead {
  Vec w_u;
  double beta_u = 0.0;
  double tau = 1.0;
};

struct PairwiseHead {
  Vec w_p;
  double beta_p = 0.0;
};

struct TransitionPotentials {
  Vec unary;     // u_i: log-potential of belief i being active
  Mat pairwise;  // psi_ij, symmetric with zero diagonal

  TransitionPotentials() = default;
  explicit TransitionPotentials(int K) : unary(Vec::Zero(K)), pairwise(Mat::Zero(K, K)) {}
  TransitionPotentials(Vec u, Mat psi) : unary(std::move(u)), pairwise(std::move(psi)) {
    validate();
  }

  int K() const { return static_cast<int>(unary.size()); }

  void set_pair(int i, int j, double v) {
    pairwise(i, j) = v;
    pairwise(j, i) = v;
  }

  void validate() const {
    const int K = this->K();
    if (pairwise.rows() != K || pairwise.cols() != K)
      throw DimensionError("pairwise potentials must be K x K");
    for (int i = 0; i < K; ++i) {
      if (!std::isfinite(unary[i])) throw RangeError("non-finite unary potential");
      if (pairwise(i, i) != 0.0) throw RangeError("pairwise diagonal must be zero");
      for (int j = i + 1; j < K; ++j)
        if (pairwise(i, j) != pairwise(j, i) || !std::isfinite(pairwise(i, j)))
          throw RangeError("pairwise potentials must be finite and symmetric");
    }
  }
};

//--------------------------------------------------------------------------
namespace detail {

inline double cosine(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// d cos(h, r) / d h; zero when h vanishes.
inline Vec cosine_grad(const Vec& h, const Vec& r) {
  const double nh = h.norm(), nr = r.norm();
  if (nh == 0.0 || nr == 0.0) return Vec::Zero(h.size());
  const double c = h.dot(r) / (nh * nr);
  return r / (nh * nr) - c * h / (nh * nh);
}

}  // namespace detail

inline double base_unary_score(const Vec& h, const Vec& h_yes, const Vec& h_no, double tau) {
  if (h.size() != h_yes.size() || h.size() != h_no.size())
    throw DimensionError("base_unary_score: dimension mismatch");
  if (h_yes.norm() == 0.0 || h_no.norm() == 0.0)
    throw DegenerateEmbeddingError("base_unary_score: zero-norm reference embedding");
  return tau * (detail::cosine(h, h_yes) - detail::cosine(h, h_no));
}

// History probability each belief's evidence is mixed with.
inline double history_weight(const BeliefMarginals& prev, int i, const ModelConfig& cfg) {
  return cfg.ablation == Ablation::no_temporal ? 0.5 : prev.p[i];
}

inline TransitionPotentials build_potentials(const BeliefMarginals& prev, ObservationId obs,
                                             const EmbeddingTable& table, const UnaryHead& unary,
                                             const PairwiseHead& pairwise,
                                             const ModelConfig& cfg) {
  const int K = cfg.K;
  if (prev.K() != K) throw DimensionError("previous marginals have wrong length");
  TransitionPotentials pot(K);
  for (int i = 0; i < K; ++i) {
    const Vec hy = table.at(EmbeddingKey::bel_obs(true, obs, i));
    const Vec hn = table.at(EmbeddingKey::bel_obs(false, obs, i));
    const Vec h = mix_history(hy, hn, history_weight(prev, i, cfg));
    pot.unary[i] = base_unary_score(h, hy, hn, unary.tau) + unary.w_u.dot(relu(h)) + unary.beta_u;
  }
  if (cfg.ablation != Ablation::no_pairwise)
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j)
        pot.set_pair(i, j,
                     pairwise.w_p.dot(relu(table.at(EmbeddingKey::pair(i, j)))) + pairwise.beta_p);
  return pot;
}

struct PotentialGrads {
  Vec w_u;
  double beta_u = 0.0;
  Vec w_p;
  double beta_p = 0.0;
};

// Reverse pass of build_potentials. Accumulates head gradients given adjoints
// on u and on the upper triangle of psi, and returns the adjoint on the
// previous marginals (zero under no_temporal).
inline Vec build_potentials_backward(const BeliefMarginals& prev, ObservationId obs,
                                     const EmbeddingTable& table, const UnaryHead& unary,
                                     const Vec& d_unary, const Mat& d_pairwise,
                                     const ModelConfig& cfg, PotentialGrads& grads) {
  const int K = cfg.K;
  Vec d_prev = Vec::Zero(K);
  for (int i = 0; i < K; ++i) {
    const double du = d_unary[i];
    if (du == 0.0) continue;
    const Vec hy = table.at(EmbeddingKey::bel_obs(true, obs, i));
    const Vec hn = table.at(EmbeddingKey::bel_obs(false, obs, i));
    const Vec h = mix_history(hy, hn, history_weight(prev, i, cfg));
    grads.w_u += du * relu(h);
    grads.beta_u += du;
    if (cfg.ablation == Ablation::no_temporal) continue;
    Vec dh = unary.tau * (detail::cosine_grad(h, hy) - detail::cosine_grad(h, hn));
    for (Eigen::Index k = 0; k < h.size(); ++k)
      if (h[k] > 0.0) dh[k] += unary.w_u[k];
    d_prev[i] = du * dh.dot(hy - hn);
  }
  if (cfg.ablation != Ablation::no_pairwise)
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j) {
        const double dp = d_pairwise(i, j);
        if (dp == 0.0) continue;
        grads.w_p += dp * relu(table.at(EmbeddingKey::pair(i, j)));
        grads.beta_p += dp;
      }
  return d_prev;
}

//--------------------------------------------------------------------------
inline double energy(const TransitionPotentials& pot, const BeliefConfig& b) {
  const int K = pot.K();
  if (b.K() != K) throw DimensionError("configuration length differs from K");
  double e = 0.0;
  for (int i = 0; i < K; ++i) {
    if (!b.active(i)) continue;
    e += pot.unary[i];
    for (int j = i + 1; j < K; ++j)
      if (b.active(j)) e += pot.pairwise(i, j);
  }
  return e;
}

namespace detail {

inline double energy_of_index(const TransitionPotentials& pot, std::uint32_t s) {
  const int K = pot.K();
  double e = 0.0;
  for (int i = 0; i < K; ++i) {
    if (!((s >> i) & 1U)) continue;
    e += pot.unary[i];
    for (int j = i + 1; j < K; ++j)
      if ((s >> j) & 1U) e += pot.pairwise(i, j);
  }
  return e;
}

}  // namespace detail

// The full Gibbs distribution, tabulated over all 2^K configurations.
struct GibbsTable {
  int K = 0;
  double log_z = 0.0;
  std::vector<double> prob;  // indexed by configuration index
  Vec marginal;              // E[b_i]
  Mat pair_moment;           // E[b_i b_j], diagonal = marginal

  std::size_t size() const { return prob.size(); }
};

inline GibbsTable gibbs_table(const TransitionPotentials& pot, const ModelConfig& cfg) {
  const int K = pot.K();
  check_enumerable(K, cfg.max_enum_K);
  const std::uint32_t n = 1U << K;
  GibbsTable g;
  g.K = K;
  g.prob.resize(n);
  double emax = -std::numeric_limits<double>::infinity();
  for (std::uint32_t s = 0; s < n; ++s) {
    g.prob[s] = detail::energy_of_index(pot, s);
    emax = std::max(emax, g.prob[s]);
  }
  double total = 0.0;
  for (auto& p : g.prob) {
    p = std::exp(p - emax);
    total += p;
  }
  g.log_z = emax + std::log(total);
  g.marginal = Vec::Zero(K);
  g.pair_moment = Mat::Zero(K, K);
  for (std::uint32_t s = 0; s < n; ++s) {
    const double p = g.prob[s] / total;
    g.prob[s] = p;
    for (int i = 0; i < K; ++i) {
      if (!((s >> i) & 1U)) continue;
      g.marginal[i] += p;
      for (int j = i + 1; j < K; ++j)
        if ((s >> j) & 1U) g.pair_moment(i, j) += p;
    }
  }
  for (int i = 0; i < K; ++i) {
    g.pair_moment(i, i) = g.marginal[i];
    for (int j = i + 1; j < K; ++j) g.pair_moment(j, i) = g.pair_moment(i, j);
  }
  return g;
}

inline double log_partition(const TransitionPotentials& pot, const ModelConfig& cfg) {
  return gibbs_table(pot, cfg).log_z;
}

inline BeliefMarginals marginals(const TransitionPotentials& pot, const ModelConfig& cfg) {
  Vec p = gibbs_table(pot, cfg).marginal.cwiseMax(0.0).cwiseMin(1.0);
  return BeliefMarginals(std::move(p));
}

// Reverse pass through the Gibbs table: adjoints on log Z and on the marginal
// vector become adjoints on the potentials. The per-configuration adjoint on
// E(b) is p(b) (g_logz + g_marg . (b - mu)).
inline void gibbs_backward(const GibbsTable& g, double g_logz, const Vec& g_marg, Vec& d_unary,
                           Mat& d_pairwise) {
  const int K = g.K;
  const double g_dot_mu = g_marg.dot(g.marginal);
  for (std::uint32_t s = 0; s < g.size(); ++s) {
    double gb = 0.0;
    for (int i = 0; i < K; ++i)
      if ((s >> i) & 1U) gb += g_marg[i];
    const double delta = g.prob[s] * (g_logz + gb - g_dot_mu);
    if (delta == 0.0) continue;
    for (int i = 0; i < K; ++i) {
      if (!((s >> i) & 1U)) continue;
      d_unary[i] += delta;
      for (int j = i + 1; j < K; ++j)
        if ((s >> j) & 1U) d_pairwise(i, j) += delta;
    }
  }
}

//--------------------------------------------------------------------------
// KL(q || p) for factorized Bernoulli q against the Gibbs prior. With q
// factorized, E_q[E(b)] = sum u_i q_i + sum_{i<j} psi_ij q_i q_j, so
// KL = -H(q) - E_q[E] + log Z.
inline double kl_factorized_to_joint(const BeliefMarginals& q, const TransitionPotentials& pot,
                                     const ModelConfig& cfg) {
  const int K = pot.K();
  if (q.K() != K) throw DimensionError("q has wrong length");
  const double log_z = log_partition(pot, cfg);
  double neg_entropy = 0.0, expected_energy = 0.0;
  for (int i = 0; i < K; ++i) {
    const double qi = clamp_marginal(q[i]);
    neg_entropy += qi * std::log(qi) + (1.0 - qi) * std::log1p(-qi);
    expected_energy += pot.unary[i] * qi;
    for (int j = i + 1; j < K; ++j) expected_energy += pot.pairwise(i, j) * qi * clamp_marginal(q[j]);
  }
  return neg_entropy - expected_energy + log_z;
}

// Gradient of the KL above w.r.t. the (already clamped) q_i, holding the
// potentials fixed.
inline Vec kl_grad_q(const Vec& q_clamped, const TransitionPotentials& pot) {
  const int K = pot.K();
  Vec g(K);
  for (int i = 0; i < K; ++i) {
    const double qi = q_clamped[i];
    double field = pot.unary[i];
    for (int j = 0; j < K; ++j)
      if (j != i) field += pot.pairwise(i, j) * q_clamped[j];
    g[i] = std::log(qi) - std::log1p(-qi) - field;
  }
  return g;
}

//--------------------------------------------------------------------------
inline BeliefConfig sample_config(const GibbsTable& g, std::mt19937_64& rng) {
  const double u = detail::uniform01(rng);
  double acc = 0.0;
  std::uint32_t pick = static_cast<std::uint32_t>(g.size() - 1);
  for (std::uint32_t s = 0; s < g.size(); ++s) {
    acc += g.prob[s];
    if (u < acc) {
      pick = s;
      break;
    }
  }
  return BeliefConfig::from_index(pick, g.K);
}

inline BeliefConfig sample_config(const TransitionPotentials& pot, const ModelConfig& cfg,
                                  std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  return sample_config(gibbs_table(pot, cfg), rng);
}

}  // namespace belgraph
