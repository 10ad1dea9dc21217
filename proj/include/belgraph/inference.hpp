// Amortized factorized posterior q(b_t | o_t, a_t), used only for training.
#pragma once

#include "belgraph/belief_graph.hpp"
#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"

namespace belgraph {

struct InferenceParams {
  Vec W1;  // shared across beliefs
  double b1 = 0.0;
};

struct InferenceOutput {
  Vec logits;
  Vec q;                      // clamped marginals
  std::vector<bool> clamped;  // true where the clamp was active (zero gradient)
};

inline InferenceOutput posterior_forward(ObservationId obs, int action,
                                         const EmbeddingTable& table,
                                         const InferenceParams& params, const ModelConfig& cfg) {
  InferenceOutput out;
  out.logits.resize(cfg.K);
  out.q.resize(cfg.K);
  out.clamped.assign(cfg.K, false);
  for (int i = 0; i < cfg.K; ++i) {
    const Vec u = table.at(EmbeddingKey::inf(obs, action, i));
    out.logits[i] = params.W1.dot(relu(u)) + params.b1;
    const double q = logistic(out.logits[i]);
    out.q[i] = clamp_marginal(q);
    out.clamped[i] = out.q[i] != q;
  }
  return out;
}

inline BeliefMarginals posterior_marginals(ObservationId obs, int action,
                                           const EmbeddingTable& table,
                                           const InferenceParams& params, const ModelConfig& cfg) {
  return BeliefMarginals(posterior_forward(obs, action, table, params, cfg).q);
}

// Probability of configuration b under the factorized posterior.
inline double factorized_prob(const Vec& q, std::uint32_t index) {
  double p = 1.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) p *= ((index >> i) & 1U) ? q[i] : 1.0 - q[i];
  return p;
}

// Reverse pass: adjoint on q becomes gradients on (W1, b1).
inline void posterior_backward(const InferenceOutput& out, const Vec& d_q, ObservationId obs,
                               int action, const EmbeddingTable& table, const ModelConfig& cfg,
                               Vec& d_W1, double& d_b1) {
  for (int i = 0; i < cfg.K; ++i) {
    if (out.clamped[i] || d_q[i] == 0.0) continue;
    const double q = out.q[i];
    const double d_logit = d_q[i] * q * (1.0 - q);
    d_W1 += d_logit * relu(table.at(EmbeddingKey::inf(obs, action, i)));
    d_b1 += d_logit;
  }
}

}  // namespace belgraph
