// Variational training of the belief-graph model: per-step ELBO terms,
// reverse-mode gradients through the full chain of prior marginals, Adam,
// test-time rollout and checkpoint files.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <exception>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "belgraph/action_model.hpp"
#include "belgraph/belief_graph.hpp"
#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"
#include "belgraph/inference.hpp"

namespace belgraph {

//--------------------------------------------------------------------------
// Parameters

struct LayoutEntry {
  std::string name;
  std::size_t offset = 0;
  int rows = 1;
  int cols = 1;
  bool generative = true;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct ParamSet {
  UnaryHead unary;
  PairwiseHead pairwise;
  AttentionParams attention;
  InferenceParams inference;

  static std::vector<LayoutEntry> layout(const ModelConfig& cfg) {
    const int d = cfg.embed_dim, dk = cfg.attn_dim;
    std::vector<LayoutEntry> out{
        {"w_u", 0, d, 1, true},     {"beta_u", 0, 1, 1, true}, {"w_p", 0, d, 1, true},
        {"beta_p", 0, 1, 1, true},  {"W_Q", 0, d, dk, true},   {"W_K", 0, d, dk, true},
        {"W_V", 0, d, dk, true},    {"w_a", 0, dk, 1, true},   {"beta_a", 0, 1, 1, true},
        {"W1", 0, d, 1, false},     {"b1", 0, 1, 1, false},
    };
    std::size_t off = 0;
    for (auto& e : out) {
      e.offset = off;
      off += e.size();
    }
    return out;
  }

  static std::size_t flat_size(const ModelConfig& cfg) {
    const auto l = layout(cfg);
    return l.back().offset + l.back().size();
  }

  static ParamSet zeros(const ModelConfig& cfg) {
    const int d = cfg.embed_dim, dk = cfg.attn_dim;
    ParamSet p;
    p.unary = {Vec::Zero(d), 0.0, cfg.tau};
    p.pairwise = {Vec::Zero(d), 0.0};
    p.attention = AttentionParams::zeros(d, dk);
    p.inference = {Vec::Zero(d), 0.0};
    return p;
  }

  // Entries drawn i.i.d. N(0, scale^2) from a portable seeded stream.
  static ParamSet random(const ModelConfig& cfg, std::uint64_t seed, double scale) {
    const std::size_t n = flat_size(cfg);
    std::mt19937_64 rng(detail::splitmix64(seed ^ 0x5EEDULL));
    detail::PortableNormal normal;
    Vec flat(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < flat.size(); ++k) flat[k] = scale * normal(rng);
    return unflatten(cfg, flat);
  }

  Vec flatten() const {
    std::vector<double> v;
    auto push_vec = [&](const Vec& x) { v.insert(v.end(), x.data(), x.data() + x.size()); };
    auto push_mat = [&](const Mat& x) { v.insert(v.end(), x.data(), x.data() + x.size()); };
    push_vec(unary.w_u);
    v.push_back(unary.beta_u);
    push_vec(pairwise.w_p);
    v.push_back(pairwise.beta_p);
    push_mat(attention.W_Q);
    push_mat(attention.W_K);
    push_mat(attention.W_V);
    push_vec(attention.w_a);
    v.push_back(attention.beta_a);
    push_vec(inference.W1);
    v.push_back(inference.b1);
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  static ParamSet unflatten(const ModelConfig& cfg, const Vec& flat) {
    if (static_cast<std::size_t>(flat.size()) != flat_size(cfg))
      throw DimensionError("flat parameter vector has length " + std::to_string(flat.size()) +
                           ", layout expects " + std::to_string(flat_size(cfg)));
    const int d = cfg.embed_dim, dk = cfg.attn_dim;
    const double* src = flat.data();
    auto take_vec = [&](int n) {
      Vec x = Eigen::Map<const Vec>(src, n);
      src += n;
      return x;
    };
    auto take_mat = [&](int r, int c) {
      Mat x = Eigen::Map<const Mat>(src, r, c);
      src += static_cast<std::ptrdiff_t>(r) * c;
      return x;
    };
    auto take = [&]() { return *src++; };
    ParamSet p;
    p.unary.w_u = take_vec(d);
    p.unary.beta_u = take();
    p.unary.tau = cfg.tau;
    p.pairwise.w_p = take_vec(d);
    p.pairwise.beta_p = take();
    p.attention.W_Q = take_mat(d, dk);
    p.attention.W_K = take_mat(d, dk);
    p.attention.W_V = take_mat(d, dk);
    p.attention.w_a = take_vec(dk);
    p.attention.beta_a = take();
    p.inference.W1 = take_vec(d);
    p.inference.b1 = take();
    return p;
  }
};

// Gradient accumulator with the same layout as ParamSet.
struct ParamGrads {
  PotentialGrads potentials;
  AttentionGrads attention;
  Vec W1;
  double b1 = 0.0;

  static ParamGrads zeros(const ModelConfig& cfg) {
    const int d = cfg.embed_dim, dk = cfg.attn_dim;
    ParamGrads g;
    g.potentials = {Vec::Zero(d), 0.0, Vec::Zero(d), 0.0};
    g.attention = AttentionGrads::zeros(d, dk);
    g.W1 = Vec::Zero(d);
    return g;
  }

  Vec flatten(const ModelConfig& cfg) const {
    ParamSet p = ParamSet::zeros(cfg);
    p.unary.w_u = potentials.w_u;
    p.unary.beta_u = potentials.beta_u;
    p.pairwise.w_p = potentials.w_p;
    p.pairwise.beta_p = potentials.beta_p;
    p.attention = {attention.W_Q, attention.W_K, attention.W_V, attention.w_a, attention.beta_a};
    p.inference = {W1, b1};
    return p.flatten();
  }
};

//--------------------------------------------------------------------------
// Configuration fingerprint stored in checkpoints.

inline std::string canonical_config_string(const ModelConfig& cfg) {
  std::ostringstream os;
  os << std::hexfloat;
  os << "K=" << cfg.K << ";T=" << cfg.T << ";A=" << cfg.num_actions << ";d=" << cfg.embed_dim
     << ";dk=" << cfg.attn_dim << ";tau=" << cfg.tau << ";mode=" << to_string(cfg.expectation_mode)
     << ";ablation=" << to_string(cfg.ablation) << ";init=" << cfg.initial_marginal
     << ";maxK=" << cfg.max_enum_K << ";masks=";
  for (std::size_t t = 0; t < cfg.action_masks.size(); ++t) {
    if (t) os << '|';
    for (std::size_t k = 0; k < cfg.action_masks[t].size(); ++k)
      os << (k ? "," : "") << cfg.action_masks[t][k];
  }
  return os.str();
}

inline std::uint64_t config_fingerprint(const ModelConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical_config_string(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const ParamSet& params, const ModelConfig& cfg) {
  std::string out = "BGP1";
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, config_fingerprint(cfg));
  const Vec flat = params.flatten();
  for (Eigen::Index k = 0; k < flat.size(); ++k) detail::put_f64(out, flat[k]);
  return out;
}

inline ParamSet parse_checkpoint(std::string_view bytes, const ModelConfig& cfg) {
  detail::ByteReader in(bytes, "checkpoint");
  if (in.bytes(4) != "BGP1") throw FormatError("checkpoint: bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  if (in.get<std::uint64_t>() != config_fingerprint(cfg))
    throw FormatError("checkpoint: model configuration fingerprint mismatch");
  const std::size_t n = ParamSet::flat_size(cfg);
  if (in.remaining() != 8 * n)
    throw FormatError("checkpoint: expected " + std::to_string(n) + " parameters");
  Vec flat(static_cast<Eigen::Index>(n));
  for (auto& v : flat) v = in.get_f64();
  return ParamSet::unflatten(cfg, flat);
}

inline void write_checkpoint(const ParamSet& params, const ModelConfig& cfg,
                             const std::string& path) {
  detail::write_file(path, serialize_checkpoint(params, cfg));
}

inline ParamSet load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  return parse_checkpoint(detail::read_file(path), cfg);
}

//--------------------------------------------------------------------------
// Objective

struct ObjectiveOptions {
  bool teacher_forcing = false;
  double kl_weight = 1.0;
  // Seed the chain from an agent's pre-event ratings, (r-1)/4, when present.
  bool initial_from_ratings = false;
};

inline BeliefMarginals initial_marginals(const Trajectory& traj, const ModelConfig& cfg,
                                         bool from_ratings) {
  Vec p = Vec::Constant(cfg.K, cfg.initial_marginal);
  if (from_ratings && !traj.initial_ratings.empty())
    for (int i = 0; i < cfg.K; ++i)
      if (traj.initial_ratings[i] != 0) p[i] = rating_to_unit(traj.initial_ratings[i]);
  return BeliefMarginals(p);
}

struct StepResult {
  double action_term = 0.0;  // L_act_t
  double kl_term = 0.0;      // L_KL_t
  BeliefMarginals prior;     // prior marginals at t
  BeliefMarginals q;         // posterior marginals at t
  BeliefMarginals carried;   // marginals handed to t+1
};

// Action forwards for every binary configuration at every step. They depend
// only on the attention parameters, so one cache serves a whole batch.
struct EnumerationCache {
  std::vector<std::vector<ActionForward>> forward;  // [t][configuration index]

  static EnumerationCache build(const EmbeddingTable& table, const AttentionParams& attn,
                                const ModelConfig& cfg) {
    check_enumerable(cfg.K, cfg.max_enum_K);
    const std::uint32_t n = 1U << cfg.K;
    EnumerationCache c;
    c.forward.resize(cfg.T);
    for (int t = 0; t < cfg.T; ++t) {
      // Steps that share a mask share forwards.
      int same = -1;
      for (int u = 0; u < t && same < 0; ++u)
        if (cfg.mask(u) == cfg.mask(t)) same = u;
      if (same >= 0) {
        c.forward[t] = c.forward[same];
        continue;
      }
      c.forward[t].reserve(n);
      for (std::uint32_t s = 0; s < n; ++s)
        c.forward[t].push_back(
            action_forward(BeliefConfig::from_index(s, cfg.K).as_vector(), cfg.mask(t), table, attn));
    }
    return c;
  }

  double log_prob(int t, std::uint32_t s, int action) const {
    const auto& f = forward[t][s];
    return f.log_probs[f.position(action)];
  }
};

// Logit adjoints accumulated per (step, configuration); the attention
// backward runs once per entry instead of once per trajectory.
struct EnumerationAdjoint {
  std::vector<std::vector<Vec>> d_logits;  // [t][s], aligned with the step's mask

  static EnumerationAdjoint zeros(const ModelConfig& cfg) {
    EnumerationAdjoint a;
    a.d_logits.resize(cfg.T);
    for (int t = 0; t < cfg.T; ++t)
      a.d_logits[t].assign(1U << cfg.K, Vec::Zero(static_cast<Eigen::Index>(cfg.mask(t).size())));
    return a;
  }

  void add(const EnumerationAdjoint& other) {
    for (std::size_t t = 0; t < d_logits.size(); ++t)
      for (std::size_t s = 0; s < d_logits[t].size(); ++s) d_logits[t][s] += other.d_logits[t][s];
  }

  void backward(const EnumerationCache& cache, const EmbeddingTable& table,
                const AttentionParams& attn, const ModelConfig& cfg, AttentionGrads& grads) const {
    for (int t = 0; t < cfg.T; ++t)
      for (std::uint32_t s = 0; s < d_logits[t].size(); ++s) {
        if (d_logits[t][s].isZero(0.0)) continue;
        action_backward_logits(cache.forward[t][s], BeliefConfig::from_index(s, cfg.K).as_vector(),
                               d_logits[t][s], table, attn, grads);
      }
  }
};

namespace detail {

// E_q[log p(a | b)] by enumeration over configurations.
inline double enumerated_action_term(const Vec& q, int t, int action, const EnumerationCache& cache,
                                     const ModelConfig& cfg) {
  const std::uint32_t n = 1U << cfg.K;
  double total = 0.0;
  for (std::uint32_t s = 0; s < n; ++s) {
    const double w = factorized_prob(q, s);
    if (w != 0.0) total += w * cache.log_prob(t, s, action);
  }
  return total;
}

}  // namespace detail

inline StepResult forward_step(const Trajectory& traj, int t, const BeliefMarginals& prev,
                               const ParamSet& params, const EmbeddingTable& table,
                               const ModelConfig& cfg, bool teacher_forcing = false) {
  if (t < 0 || t >= cfg.T) throw RangeError("timestep out of range");
  const ObservationId obs = traj.observation_ids[t];
  const int action = traj.action_ids[t];
  if (!cfg.permits(t, action))
    throw ValidationError("action " + std::to_string(action) + " outside mask at t=" +
                          std::to_string(t));
  const auto pot = build_potentials(prev, obs, table, params.unary, params.pairwise, cfg);
  const auto gibbs = gibbs_table(pot, cfg);
  const auto inf = posterior_forward(obs, action, table, params.inference, cfg);
  StepResult r;
  r.prior = BeliefMarginals(gibbs.marginal.cwiseMax(0.0).cwiseMin(1.0));
  r.q = BeliefMarginals(inf.q);
  r.kl_term = kl_factorized_to_joint(r.q, pot, cfg);
  if (cfg.expectation_mode == ExpectationMode::mean_field) {
    const auto f = action_forward(inf.q, cfg.mask(t), table, params.attention);
    r.action_term = f.log_probs[f.position(action)];
  } else {
    // Only step t's forwards are needed here.
    ModelConfig one = cfg;
    one.T = 1;
    one.action_masks = {cfg.mask(t)};
    const auto cache = EnumerationCache::build(table, params.attention, one);
    r.action_term = detail::enumerated_action_term(inf.q, 0, action, cache, one);
  }
  r.carried = teacher_forcing ? r.q : r.prior;
  return r;
}

struct StepDiagnostics {
  std::vector<double> action_term;  // per timestep
  std::vector<double> kl_term;      // per timestep
  double elbo_total = 0.0;          // sum_t (action_term - kl_term)
  double action_accuracy = 0.0;     // prior-marginal argmax vs observed actions
};

struct LossResult {
  double loss = 0.0;  // sum_t (kl_weight * KL_t - L_act_t)
  StepDiagnostics diagnostics;
};

// Loss of one trajectory; when `grad` is non-null the analytic gradient
// w.r.t. the flat parameter vector is added to it, scaled by `grad_scale`.
// In enumerate mode a shared `cache` may be passed; when `adjoint` is also
// given, the configuration-level attention gradients are accumulated there
// (scaled) instead of into `grad`, and the caller runs the backward.
inline LossResult trajectory_loss_and_grad(const Trajectory& traj, const ParamSet& params,
                                           const EmbeddingTable& table, const ModelConfig& cfg,
                                           const ObjectiveOptions& opts, Vec* grad,
                                           double grad_scale = 1.0, bool with_accuracy = false,
                                           const EnumerationCache* cache = nullptr,
                                           EnumerationAdjoint* adjoint = nullptr) {
  const int T = cfg.T;
  if (traj.length() != T) throw ValidationError("trajectory length differs from T");
  const double w_kl = opts.kl_weight;

  struct Cache {
    BeliefMarginals prev;
    TransitionPotentials pot;
    GibbsTable gibbs;
    InferenceOutput inf;
    ActionForward act;  // mean-field only
  };
  const bool enumerate = cfg.expectation_mode == ExpectationMode::enumerate;
  std::optional<EnumerationCache> local_cache;
  if (enumerate && !cache) {
    local_cache = EnumerationCache::build(table, params.attention, cfg);
    cache = &*local_cache;
  }
  std::vector<Cache> steps(T);
  LossResult result;
  auto& diag = result.diagnostics;
  diag.action_term.resize(T);
  diag.kl_term.resize(T);
  int correct = 0;

  BeliefMarginals prev = initial_marginals(traj, cfg, opts.initial_from_ratings);
  for (int t = 0; t < T; ++t) {
    const ObservationId obs = traj.observation_ids[t];
    const int action = traj.action_ids[t];
    if (!cfg.permits(t, action))
      throw ValidationError("agent '" + traj.agent_id + "': action outside mask at t=" +
                            std::to_string(t));
    Cache& c = steps[t];
    c.prev = prev;
    c.pot = build_potentials(prev, obs, table, params.unary, params.pairwise, cfg);
    c.gibbs = gibbs_table(c.pot, cfg);
    c.inf = posterior_forward(obs, action, table, params.inference, cfg);
    const double kl = kl_factorized_to_joint(BeliefMarginals(c.inf.q), c.pot, cfg);
    double act = 0.0;
    if (cfg.expectation_mode == ExpectationMode::mean_field) {
      c.act = action_forward(c.inf.q, cfg.mask(t), table, params.attention);
      act = c.act.log_probs[c.act.position(action)];
    } else {
      act = detail::enumerated_action_term(c.inf.q, t, action, *cache, cfg);
    }
    if (!std::isfinite(kl) || !std::isfinite(act))
      throw NonFiniteLossError("non-finite loss for agent '" + traj.agent_id + "' at t=" +
                               std::to_string(t));
    diag.action_term[t] = act;
    diag.kl_term[t] = kl;
    diag.elbo_total += act - kl;
    result.loss += w_kl * kl - act;
    const Vec prior = c.gibbs.marginal.cwiseMax(0.0).cwiseMin(1.0);
    if (with_accuracy) {
      const auto f = action_forward(prior, cfg.mask(t), table, params.attention);
      Eigen::Index best = 0;
      f.log_probs.maxCoeff(&best);
      if (f.actions[best] == action) ++correct;
    }
    prev = BeliefMarginals(opts.teacher_forcing ? c.inf.q : prior);
  }
  diag.action_accuracy = static_cast<double>(correct) / T;
  if (!grad) return result;

  ParamGrads g = ParamGrads::zeros(cfg);
  std::optional<EnumerationAdjoint> local_adjoint;
  if (enumerate && !adjoint) {
    local_adjoint = EnumerationAdjoint::zeros(cfg);
    adjoint = &*local_adjoint;
  }
  // Adjoint-side weights are pre-scaled, since they bypass `g`.
  const double adj_scale = local_adjoint ? 1.0 : grad_scale;
  Vec g_mu = Vec::Zero(cfg.K);  // adjoint on the prior marginals carried out of step t
  for (int t = T - 1; t >= 0; --t) {
    const Cache& c = steps[t];
    const ObservationId obs = traj.observation_ids[t];
    const int action = traj.action_ids[t];
    const Vec& q = c.inf.q;

    Vec d_q = w_kl * kl_grad_q(q, c.pot);
    if (!enumerate) {
      d_q += action_backward(c.act, q, action, table, params.attention, -1.0, g.attention);
    } else {
      const std::uint32_t n = 1U << cfg.K;
      for (std::uint32_t s = 0; s < n; ++s) {
        const double w = factorized_prob(q, s);
        const auto& f = cache->forward[t][s];
        const double lp = f.log_probs[f.position(action)];
        if (w != 0.0) adjoint->d_logits[t][s] += log_prob_logit_adjoint(f, action, -w * adj_scale);
        for (int i = 0; i < cfg.K; ++i) {
          // d q(b) / d q_i = q(b) / q_i or -q(b) / (1 - q_i), written without division.
          double dw = (s >> i) & 1U ? 1.0 : -1.0;
          for (int k = 0; k < cfg.K; ++k)
            if (k != i) dw *= ((s >> k) & 1U) ? q[k] : 1.0 - q[k];
          d_q[i] -= lp * dw;
        }
      }
    }
    posterior_backward(c.inf, d_q, obs, action, table, cfg, g.W1, g.b1);

    Vec d_unary = -w_kl * q;
    Mat d_pair = Mat::Zero(cfg.K, cfg.K);
    for (int i = 0; i < cfg.K; ++i)
      for (int j = i + 1; j < cfg.K; ++j) d_pair(i, j) = -w_kl * q[i] * q[j];
    gibbs_backward(c.gibbs, w_kl, g_mu, d_unary, d_pair);
    const Vec d_prev =
        build_potentials_backward(c.prev, obs, table, params.unary, d_unary, d_pair, cfg,
                                  g.potentials);
    g_mu = opts.teacher_forcing ? Vec::Zero(cfg.K) : d_prev;
  }
  if (local_adjoint) local_adjoint->backward(*cache, table, params.attention, cfg, g.attention);
  *grad += grad_scale * g.flatten(cfg);
  return result;
}

inline double trajectory_loss(const Trajectory& traj, const ParamSet& params,
                              const EmbeddingTable& table, const ModelConfig& cfg,
                              const ObjectiveOptions& opts = {}) {
  return trajectory_loss_and_grad(traj, params, table, cfg, opts, nullptr).loss;
}

// -sum_t log sum_b p_t(b) p(a_t | b) along the chain of prior marginals.
inline double exact_negative_log_likelihood(const Trajectory& traj, const ParamSet& params,
                                            const EmbeddingTable& table, const ModelConfig& cfg,
                                            const ObjectiveOptions& opts = {}) {
  BeliefMarginals prev = initial_marginals(traj, cfg, opts.initial_from_ratings);
  double nll = 0.0;
  for (int t = 0; t < cfg.T; ++t) {
    const auto pot =
        build_potentials(prev, traj.observation_ids[t], table, params.unary, params.pairwise, cfg);
    const auto g = gibbs_table(pot, cfg);
    double lik = 0.0;
    for (std::uint32_t s = 0; s < g.size(); ++s) {
      const Vec b = BeliefConfig::from_index(s, cfg.K).as_vector();
      const auto f = action_forward(b, cfg.mask(t), table, params.attention);
      lik += g.prob[s] * std::exp(f.log_probs[f.position(traj.action_ids[t])]);
    }
    nll -= std::log(lik);
    prev = BeliefMarginals(g.marginal.cwiseMax(0.0).cwiseMin(1.0));
  }
  return nll;
}

//--------------------------------------------------------------------------
// Batch gradients

enum class GradMode { analytic, numeric };

inline GradMode parse_grad_mode(const std::string& s) {
  if (s == "analytic") return GradMode::analytic;
  if (s == "numeric") return GradMode::numeric;
  throw ConfigError("unknown gradient mode '" + s + "'");
}

// Runs fn(k) for k in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < n; k += workers) fn(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct BatchResult {
  double mean_loss = 0.0;
  double mean_action_term = 0.0;
  double mean_kl_term = 0.0;
  double accuracy = 0.0;
  Vec grad;
};

// Mean over trajectories of the per-trajectory loss, with its gradient.
// Per-trajectory gradients are reduced in index order, so the result does
// not depend on `workers`.
inline BatchResult batch_loss_and_grad(const std::vector<const Trajectory*>& batch,
                                       const ParamSet& params, const EmbeddingTable& table,
                                       const ModelConfig& cfg, const ObjectiveOptions& opts,
                                       bool want_grad, unsigned workers = 1,
                                       bool with_accuracy = false) {
  const std::size_t n = batch.size();
  if (n == 0) throw ValidationError("empty batch");
  const auto P = static_cast<Eigen::Index>(ParamSet::flat_size(cfg));
  const bool enumerate = cfg.expectation_mode == ExpectationMode::enumerate;
  std::optional<EnumerationCache> cache;
  if (enumerate) cache = EnumerationCache::build(table, params.attention, cfg);
  std::vector<LossResult> results(n);
  std::vector<Vec> grads(want_grad ? n : 0, Vec::Zero(P));
  std::vector<EnumerationAdjoint> adjoints(want_grad && enumerate ? n : 0);
  parallel_for(n, workers, [&](std::size_t k) {
    EnumerationAdjoint* adj = nullptr;
    if (!adjoints.empty()) {
      adjoints[k] = EnumerationAdjoint::zeros(cfg);
      adj = &adjoints[k];
    }
    results[k] = trajectory_loss_and_grad(*batch[k], params, table, cfg, opts,
                                          want_grad ? &grads[k] : nullptr, 1.0, with_accuracy,
                                          cache ? &*cache : nullptr, adj);
  });
  BatchResult out;
  out.grad = Vec::Zero(P);
  for (std::size_t k = 0; k < n; ++k) {
    out.mean_loss += results[k].loss;
    double act = 0.0, kl = 0.0;
    for (int t = 0; t < cfg.T; ++t) {
      act += results[k].diagnostics.action_term[t];
      kl += results[k].diagnostics.kl_term[t];
    }
    out.mean_action_term += act;
    out.mean_kl_term += kl;
    out.accuracy += results[k].diagnostics.action_accuracy;
    if (want_grad) out.grad += grads[k];
  }
  if (!adjoints.empty()) {
    for (std::size_t k = 1; k < n; ++k) adjoints[0].add(adjoints[k]);
    ParamGrads g = ParamGrads::zeros(cfg);
    adjoints[0].backward(*cache, table, params.attention, cfg, g.attention);
    out.grad += g.flatten(cfg);
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.mean_loss *= inv;
  out.mean_action_term *= inv;
  out.mean_kl_term *= inv;
  out.accuracy *= inv;
  out.grad *= inv;
  return out;
}

inline double batch_loss(const std::vector<const Trajectory*>& batch, const ParamSet& params,
                         const EmbeddingTable& table, const ModelConfig& cfg,
                         const ObjectiveOptions& opts) {
  std::optional<EnumerationCache> cache;
  if (cfg.expectation_mode == ExpectationMode::enumerate)
    cache = EnumerationCache::build(table, params.attention, cfg);
  double total = 0.0;
  for (const auto* tr : batch)
    total += trajectory_loss_and_grad(*tr, params, table, cfg, opts, nullptr, 1.0, false,
                                      cache ? &*cache : nullptr)
                 .loss;
  return total / static_cast<double>(batch.size());
}

// Central finite differences of the mean batch loss.
inline Vec numeric_gradient(const std::vector<const Trajectory*>& batch, const ParamSet& params,
                            const EmbeddingTable& table, const ModelConfig& cfg,
                            const ObjectiveOptions& opts, double h = 1e-4) {
  const Vec flat = params.flatten();
  Vec g(flat.size());
  for (Eigen::Index k = 0; k < flat.size(); ++k) {
    Vec plus = flat, minus = flat;
    plus[k] += h;
    minus[k] -= h;
    const double fp = batch_loss(batch, ParamSet::unflatten(cfg, plus), table, cfg, opts);
    const double fm = batch_loss(batch, ParamSet::unflatten(cfg, minus), table, cfg, opts);
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline Vec gradient(const ParamSet& params, const std::vector<const Trajectory*>& batch,
                    const EmbeddingTable& table, const ModelConfig& cfg,
                    const ObjectiveOptions& opts, GradMode mode, unsigned workers = 1) {
  if (mode == GradMode::numeric) return numeric_gradient(batch, params, table, cfg, opts);
  return batch_loss_and_grad(batch, params, table, cfg, opts, true, workers).grad;
}

// Largest elementwise |a - n| / max(|a|, 1e-6).
inline double max_relative_error(const Vec& analytic, const Vec& numeric) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < analytic.size(); ++k) {
    const double denom = std::max(std::abs(analytic[k]), 1e-6);
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

//--------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t rng_seed = 0;
  GradMode grad_mode = GradMode::analytic;
  bool teacher_forcing = false;
  double kl_weight = 1.0;
  bool initial_from_ratings = false;
  unsigned workers = 1;

  ObjectiveOptions objective() const { return {teacher_forcing, kl_weight, initial_from_ratings}; }

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
      throw ConfigError("Adam betas must lie in (0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
    if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be non-negative");
  }
};

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& tc)
      : m_(Vec::Zero(static_cast<Eigen::Index>(n))),
        v_(Vec::Zero(static_cast<Eigen::Index>(n))),
        lr_(tc.learning_rate),
        b1_(tc.adam_beta1),
        b2_(tc.adam_beta2),
        eps_(tc.adam_eps) {}

  void step(Vec& theta, const Vec& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (Eigen::Index k = 0; k < theta.size(); ++k)
      theta[k] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }

 private:
  Vec m_, v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

//--------------------------------------------------------------------------
// Rollout

enum class ActionSelection { argmax, sample };

struct RolloutOptions {
  ActionSelection selection = ActionSelection::argmax;
  std::uint64_t rng_seed = 0;
  bool record_attention = false;
  std::optional<BeliefMarginals> initial;
};

struct RolloutResult {
  std::vector<BeliefMarginals> marginals;  // prior marginals per step
  std::vector<int> actions;
  std::vector<Vec> log_probs;  // per step, aligned with the step's mask
  // attention[t][k] is the K x K matrix of the k-th permitted action at t.
  std::vector<std::vector<Mat>> attention;
};

inline RolloutResult rollout(const ParamSet& params, const EmbeddingTable& table,
                             const ModelConfig& cfg, const std::vector<ObservationId>& observations,
                             const RolloutOptions& opts = {}) {
  if (static_cast<int>(observations.size()) != cfg.T)
    throw ValidationError("observation sequence length must equal T");
  RolloutResult r;
  std::mt19937_64 rng(opts.rng_seed);
  BeliefMarginals prev = opts.initial ? *opts.initial
                                      : BeliefMarginals::constant(cfg.K, cfg.initial_marginal);
  for (int t = 0; t < cfg.T; ++t) {
    const auto pot =
        build_potentials(prev, observations[t], table, params.unary, params.pairwise, cfg);
    BeliefMarginals mu = marginals(pot, cfg);
    const auto f = action_forward(mu.p, cfg.mask(t), table, params.attention);
    int chosen = 0;
    if (opts.selection == ActionSelection::argmax) {
      Eigen::Index best = 0;
      f.log_probs.maxCoeff(&best);
      chosen = f.actions[best];
    } else {
      const double u = detail::uniform01(rng);
      double acc = 0.0;
      chosen = f.actions.back();
      for (std::size_t k = 0; k < f.actions.size(); ++k) {
        acc += std::exp(f.log_probs[static_cast<Eigen::Index>(k)]);
        if (u < acc) {
          chosen = f.actions[k];
          break;
        }
      }
    }
    r.marginals.push_back(mu);
    r.actions.push_back(chosen);
    r.log_probs.push_back(f.log_probs);
    if (opts.record_attention) {
      std::vector<Mat> mats;
      for (const auto& at : f.attention) mats.push_back(at.A);
      r.attention.push_back(std::move(mats));
    }
    prev = mu;
  }
  return r;
}

inline RolloutResult rollout(const ParamSet& params, const EmbeddingTable& table,
                             const ModelConfig& cfg, const Trajectory& traj,
                             bool initial_from_ratings, RolloutOptions opts = {}) {
  opts.initial = initial_marginals(traj, cfg, initial_from_ratings);
  return rollout(params, table, cfg, traj.observation_ids, opts);
}

// Fraction of steps whose argmax rollout action matches the observed action.
inline double rollout_accuracy(const ParamSet& params, const EmbeddingTable& table,
                               const ModelConfig& cfg, const std::vector<Trajectory>& data,
                               bool initial_from_ratings = false) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  long correct = 0, total = 0;
  for (const auto& tr : data) {
    const auto r = rollout(params, table, cfg, tr, initial_from_ratings);
    for (int t = 0; t < cfg.T; ++t, ++total)
      if (r.actions[t] == tr.action_ids[t]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

//--------------------------------------------------------------------------
// Training loop

struct EpochDiagnostics {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_action_term = 0.0;
  double mean_kl_term = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochDiagnostics> log;
};

inline std::string diagnostics_csv(const std::vector<EpochDiagnostics>& log) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,mean_L_act,mean_KL,train_acc,test_acc\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.mean_action_term << ',' << e.mean_kl_term << ',' << e.train_accuracy
       << ',';
    if (std::isnan(e.test_accuracy))
      os << "nan";
    else
      os << e.test_accuracy;
    os << '\n';
  }
  return os.str();
}

using EpochCallback = std::function<void(const EpochDiagnostics&)>;

inline TrainResult train(const std::vector<Trajectory>& dataset, const ParamSet& params0,
                         const EmbeddingTable& table, const ModelConfig& cfg,
                         const TrainConfig& tcfg, const std::vector<Trajectory>* test = nullptr,
                         const EpochCallback& on_epoch = {}) {
  if (dataset.empty()) throw ValidationError("training set is empty");
  tcfg.validate();
  const auto opts = tcfg.objective();
  TrainResult out;
  Vec theta = params0.flatten();
  Adam adam(static_cast<std::size_t>(theta.size()), tcfg);
  std::mt19937_64 rng(detail::splitmix64(tcfg.rng_seed));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
    EpochDiagnostics e;
    e.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tcfg.batch_size);
      std::vector<const Trajectory*> batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&dataset[order[k]]);
      const ParamSet params = ParamSet::unflatten(cfg, theta);
      BatchResult br =
          batch_loss_and_grad(batch, params, table, cfg, opts,
                              tcfg.grad_mode == GradMode::analytic, tcfg.workers, true);
      if (tcfg.grad_mode == GradMode::numeric)
        br.grad = numeric_gradient(batch, params, table, cfg, opts);
      const double w = static_cast<double>(batch.size());
      e.mean_loss += w * br.mean_loss;
      e.mean_action_term += w * br.mean_action_term;
      e.mean_kl_term += w * br.mean_kl_term;
      e.train_accuracy += w * br.accuracy;
      adam.step(theta, br.grad);
    }
    const double inv = 1.0 / static_cast<double>(dataset.size());
    e.mean_loss *= inv;
    e.mean_action_term *= inv;
    e.mean_kl_term *= inv;
    e.train_accuracy *= inv;
    if (test && !test->empty())
      e.test_accuracy = rollout_accuracy(ParamSet::unflatten(cfg, theta), table, cfg, *test,
                                         tcfg.initial_from_ratings);
    out.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  out.params = ParamSet::unflatten(cfg, theta);
  return out;
}

}  // namespace belgraph
