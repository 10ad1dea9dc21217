// Belief-conditioned action likelihood. For each permitted action the K
// belief tokens are mixed from the active/inactive action embeddings, passed
// through one self-attention layer, mean-pooled, and scored by a linear head.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"

namespace belgraph {

struct AttentionParams {
  Mat W_Q, W_K, W_V;  // d x d_k, shared across actions
  Vec w_a;            // d_k
  double beta_a = 0.0;

  static AttentionParams zeros(int d, int dk) {
    return {Mat::Zero(d, dk), Mat::Zero(d, dk), Mat::Zero(d, dk), Vec::Zero(dk), 0.0};
  }
};

struct AttentionGrads {
  Mat W_Q, W_K, W_V;
  Vec w_a;
  double beta_a = 0.0;

  static AttentionGrads zeros(int d, int dk) {
    return {Mat::Zero(d, dk), Mat::Zero(d, dk), Mat::Zero(d, dk), Vec::Zero(dk), 0.0};
  }
};

// Row i = m_i e1(j,i) + (1 - m_i) e0(j,i).
inline Mat belief_tokens(const Vec& m, int action, const EmbeddingTable& table) {
  const int K = static_cast<int>(m.size());
  Mat X(K, table.dim());
  for (int i = 0; i < K; ++i) {
    const auto e1 = table.raw(EmbeddingKey::act_bel(true, action, i));
    const auto e0 = table.raw(EmbeddingKey::act_bel(false, action, i));
    for (int k = 0; k < table.dim(); ++k) X(i, k) = m[i] * e1[k] + (1.0 - m[i]) * e0[k];
  }
  return X;
}

inline Mat belief_tokens(const BeliefMarginals& m, int action, const EmbeddingTable& table) {
  return belief_tokens(m.p, action, table);
}

struct Attention {
  Mat Q, Kx, V;
  Mat A;  // row-stochastic; A(i,k) weighs belief k when forming row i
  Mat Z;  // A V
};

inline Attention attend(const Mat& X, const AttentionParams& params) {
  if (X.cols() != params.W_Q.rows() || X.cols() != params.W_K.rows() ||
      X.cols() != params.W_V.rows())
    throw DimensionError("attend: token width does not match projection rows");
  Attention out;
  out.Q = X * params.W_Q;
  out.Kx = X * params.W_K;
  out.V = X * params.W_V;
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.W_Q.cols()));
  out.A = (out.Q * out.Kx.transpose()) * scale;
  for (Eigen::Index i = 0; i < out.A.rows(); ++i) {
    const double mx = out.A.row(i).maxCoeff();
    out.A.row(i) = (out.A.row(i).array() - mx).exp();
    out.A.row(i) /= out.A.row(i).sum();
  }
  out.Z = out.A * out.V;
  return out;
}

//--------------------------------------------------------------------------
// Forward state for every permitted action at one step.
struct ActionForward {
  std::vector<int> actions;  // the step's mask
  std::vector<Mat> tokens;
  std::vector<Attention> attention;
  Vec logits;
  Vec log_probs;  // aligned with `actions`

  int position(int action) const {
    for (std::size_t k = 0; k < actions.size(); ++k)
      if (actions[k] == action) return static_cast<int>(k);
    return -1;
  }
};

inline ActionForward action_forward(const Vec& m, const ActionMask& mask,
                                    const EmbeddingTable& table, const AttentionParams& params) {
  if (mask.empty()) throw ConfigError("empty action mask");
  ActionForward f;
  f.actions = mask;
  const auto n = static_cast<Eigen::Index>(mask.size());
  f.logits.resize(n);
  f.tokens.reserve(mask.size());
  f.attention.reserve(mask.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    f.tokens.push_back(belief_tokens(m, mask[k], table));
    f.attention.push_back(attend(f.tokens.back(), params));
    const Vec pooled = f.attention.back().Z.colwise().mean().transpose();
    f.logits[k] = params.w_a.dot(pooled) + params.beta_a;
  }
  const double mx = f.logits.maxCoeff();
  const double lse = mx + std::log((f.logits.array() - mx).exp().sum());
  f.log_probs = f.logits.array() - lse;
  return f;
}

// Log-probabilities over the permitted actions at step t, in mask order.
// Actions outside the mask have probability zero and are not listed.
inline Vec action_log_probs(const BeliefMarginals& m, int t, const EmbeddingTable& table,
                            const AttentionParams& params, const ModelConfig& cfg) {
  return action_forward(m.p, cfg.mask(t), table, params).log_probs;
}

// Reverse pass from adjoints on the logits (aligned with f.actions).
// Accumulates parameter gradients into `grads` and returns d/dm.
inline Vec action_backward_logits(const ActionForward& f, const Vec& m, const Vec& d_logits,
                                  const EmbeddingTable& table, const AttentionParams& params,
                                  AttentionGrads& grads) {
  const int K = static_cast<int>(m.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.W_Q.cols()));
  Vec d_m = Vec::Zero(K);
  for (std::size_t k = 0; k < f.actions.size(); ++k) {
    const double d_logit = d_logits[static_cast<Eigen::Index>(k)];
    if (d_logit == 0.0) continue;
    const Attention& at = f.attention[k];
    const Mat& X = f.tokens[k];
    const Vec pooled = at.Z.colwise().mean().transpose();
    grads.w_a += d_logit * pooled;
    grads.beta_a += d_logit;
    // dZ: every row receives d_logit * w_a / K.
    Mat dZ = (d_logit / K) * Vec::Ones(K) * params.w_a.transpose();
    Mat dA = dZ * at.V.transpose();
    Mat dV = at.A.transpose() * dZ;
    Mat dS(K, K);
    for (int i = 0; i < K; ++i) {
      const double row_dot = dA.row(i).dot(at.A.row(i));
      dS.row(i) = at.A.row(i).array() * (dA.row(i).array() - row_dot);
    }
    dS *= scale;
    Mat dQ = dS * at.Kx;
    Mat dKx = dS.transpose() * at.Q;
    grads.W_Q += X.transpose() * dQ;
    grads.W_K += X.transpose() * dKx;
    grads.W_V += X.transpose() * dV;
    Mat dX = dQ * params.W_Q.transpose() + dKx * params.W_K.transpose() +
             dV * params.W_V.transpose();
    const int a = f.actions[k];
    for (int i = 0; i < K; ++i) {
      const auto e1 = table.raw(EmbeddingKey::act_bel(true, a, i));
      const auto e0 = table.raw(EmbeddingKey::act_bel(false, a, i));
      double s = 0.0;
      for (int c = 0; c < table.dim(); ++c) s += dX(i, c) * (static_cast<double>(e1[c]) - e0[c]);
      d_m[i] += s;
    }
  }
  return d_m;
}

// Logit adjoints of weight * log p(action | m).
inline Vec log_prob_logit_adjoint(const ActionForward& f, int action, double weight) {
  const int pos = f.position(action);
  if (pos < 0) throw ValidationError("action " + std::to_string(action) + " is not permitted");
  Vec d = -weight * f.log_probs.array().exp();
  d[pos] += weight;
  return d;
}

// Reverse pass for weight * log p(action | m). Accumulates parameter
// gradients into `grads` and returns d/dm.
inline Vec action_backward(const ActionForward& f, const Vec& m, int action,
                           const EmbeddingTable& table, const AttentionParams& params,
                           double weight, AttentionGrads& grads) {
  return action_backward_logits(f, m, log_prob_logit_adjoint(f, action, weight), table, params,
                                grads);
}

}  // namespace belgraph
