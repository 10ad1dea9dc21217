// Shared domain types for the belief-graph engine: model configuration,
// binary belief configurations, marginals and trajectories.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace belgraph {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//--------------------------------------------------------------------------
// Errors. Every failure raised by the library derives from belgraph::Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EnumerationLimitError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct CompletenessError : Error {
  using Error::Error;
};
struct DegenerateEmbeddingError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct RangeError : Error {
  using Error::Error;
};
struct UndefinedCorrelationError : Error {
  using Error::Error;
};
struct InsufficientGroupError : Error {
  using Error::Error;
};
struct DivisionByZeroError : Error {
  using Error::Error;
};
struct EmptySequenceError : Error {
  using Error::Error;
};
struct NonFiniteLossError : Error {
  using Error::Error;
};

//--------------------------------------------------------------------------
enum class ExpectationMode { mean_field, enumerate };
enum class Ablation { full, no_pairwise, no_temporal };

inline const char* to_string(ExpectationMode m) {
  return m == ExpectationMode::mean_field ? "mean_field" : "enumerate";
}

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_pairwise: return "no_pairwise";
    case Ablation::no_temporal: return "no_temporal";
  }
  return "?";
}

inline ExpectationMode parse_expectation_mode(const std::string& s) {
  if (s == "mean_field") return ExpectationMode::mean_field;
  if (s == "enumerate") return ExpectationMode::enumerate;
  throw ConfigError("unknown expectation mode '" + s + "'");
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_pairwise") return Ablation::no_pairwise;
  if (s == "no_temporal") return Ablation::no_temporal;
  throw ConfigError("unknown ablation '" + s + "'");
}

using ActionMask = std::vector<int>;

struct ModelConfig {
  int K = 6;
  int T = 3;
  int num_actions = 6;
  int embed_dim = 16;
  int attn_dim = 8;
  double tau = 1.0;
  ExpectationMode expectation_mode = ExpectationMode::mean_field;
  Ablation ablation = Ablation::full;
  double initial_marginal = 0.5;
  int max_enum_K = 16;
  // One mask per timestep; each a sorted set of permitted action ids.
  std::vector<ActionMask> action_masks;

  // Survey layout: intermediate reactions {0..3} before the last step and the
  // two final decisions {4,5} at the last step.
  static std::vector<ActionMask> survey_masks(int T) {
    std::vector<ActionMask> masks(T, ActionMask{0, 1, 2, 3});
    masks.back() = ActionMask{4, 5};
    return masks;
  }

  static std::vector<ActionMask> full_masks(int T, int num_actions) {
    ActionMask all(num_actions);
    for (int j = 0; j < num_actions; ++j) all[j] = j;
    return std::vector<ActionMask>(T, all);
  }

  const ActionMask& mask(int t) const { return action_masks.at(t); }

  bool permits(int t, int action) const {
    const auto& m = mask(t);
    for (int a : m)
      if (a == action) return true;
    return false;
  }

  void validate() const {
    if (K <= 0 || T <= 0 || num_actions <= 0 || embed_dim <= 0 || attn_dim <= 0)
      throw ConfigError("K, T, num_actions, embed_dim and attn_dim must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
    if (!(initial_marginal >= 0.0 && initial_marginal <= 1.0))
      throw ConfigError("initial_marginal must lie in [0,1]");
    if (max_enum_K <= 0 || max_enum_K > 30) throw ConfigError("max_enum_K must lie in [1,30]");
    if (K > max_enum_K)
      throw EnumerationLimitError("K=" + std::to_string(K) + " exceeds the enumeration limit " +
                                  std::to_string(max_enum_K));
    if (static_cast<int>(action_masks.size()) != T)
      throw ConfigError("expected " + std::to_string(T) + " action masks, got " +
                        std::to_string(action_masks.size()));
    for (std::size_t t = 0; t < action_masks.size(); ++t) {
      const auto& m = action_masks[t];
      if (m.empty()) throw ConfigError("action mask at t=" + std::to_string(t) + " is empty");
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (m[k] < 0 || m[k] >= num_actions)
          throw ConfigError("action mask at t=" + std::to_string(t) + " names action " +
                            std::to_string(m[k]) + " outside the vocabulary");
        if (k > 0 && m[k] <= m[k - 1])
          throw ConfigError("action mask at t=" + std::to_string(t) +
                            " must be strictly increasing");
      }
    }
  }

  int num_pairs() const { return K * (K - 1) / 2; }
};

//--------------------------------------------------------------------------
// Binary configuration b in {0,1}^K. Bit i of `index` is belief i.
struct BeliefConfig {
  std::vector<std::uint8_t> bits;
  std::uint32_t index = 0;

  static BeliefConfig from_index(std::uint32_t index, int K) {
    BeliefConfig c;
    c.index = index;
    c.bits.resize(K);
    for (int i = 0; i < K; ++i) c.bits[i] = static_cast<std::uint8_t>((index >> i) & 1U);
    return c;
  }

  static BeliefConfig from_bits(std::vector<std::uint8_t> bits) {
    BeliefConfig c;
    c.index = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] > 1) throw RangeError("belief bits must be 0 or 1");
      c.index |= static_cast<std::uint32_t>(bits[i]) << i;
    }
    c.bits = std::move(bits);
    return c;
  }

  int K() const { return static_cast<int>(bits.size()); }
  bool active(int i) const { return bits[i] != 0; }

  Vec as_vector() const {
    Vec v(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) v[i] = bits[i];
    return v;
  }

  friend bool operator==(const BeliefConfig&, const BeliefConfig&) = default;
};

inline void check_enumerable(int K, int max_enum_K) {
  if (K > max_enum_K)
    throw EnumerationLimitError("cannot enumerate K=" + std::to_string(K) +
                                " beliefs; limit is " + std::to_string(max_enum_K));
}

inline std::vector<BeliefConfig> enumerate_configs(int K, int max_enum_K = 16) {
  if (K <= 0) throw ConfigError("K must be positive");
  check_enumerable(K, max_enum_K);
  const std::uint32_t n = 1U << K;
  std::vector<BeliefConfig> out;
  out.reserve(n);
  for (std::uint32_t s = 0; s < n; ++s) out.push_back(BeliefConfig::from_index(s, K));
  return out;
}

//--------------------------------------------------------------------------
struct BeliefMarginals {
  Vec p;

  BeliefMarginals() = default;
  explicit BeliefMarginals(Vec values) : p(std::move(values)) { validate(); }

  static BeliefMarginals constant(int K, double value) {
    return BeliefMarginals(Vec::Constant(K, value));
  }

  int K() const { return static_cast<int>(p.size()); }
  double operator[](int i) const { return p[i]; }

  void validate() const {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (!std::isfinite(p[i]) || p[i] < 0.0 || p[i] > 1.0)
        throw RangeError("belief marginal " + std::to_string(i) + " = " + std::to_string(p[i]) +
                         " outside [0,1]");
  }
};

// Observation ids are opaque integers; the vocabulary maps them to labels.
using ObservationId = std::uint32_t;

struct Trajectory {
  std::string agent_id;
  std::vector<ObservationId> observation_ids;
  std::vector<int> action_ids;
  // T x K ordinal ratings in {1..5}; 0 marks a missing entry. Empty when absent.
  std::vector<std::vector<int>> belief_ratings;
  // Optional K ratings taken before the first step.
  std::vector<int> initial_ratings;

  int length() const { return static_cast<int>(observation_ids.size()); }
  bool has_ratings() const { return !belief_ratings.empty(); }

  void validate(const ModelConfig& cfg) const {
    if (length() != cfg.T || static_cast<int>(action_ids.size()) != cfg.T)
      throw ValidationError("agent '" + agent_id + "': expected " + std::to_string(cfg.T) +
                            " steps");
    for (int t = 0; t < cfg.T; ++t)
      if (!cfg.permits(t, action_ids[t]))
        throw ValidationError("agent '" + agent_id + "': action " +
                              std::to_string(action_ids[t]) + " at t=" + std::to_string(t) +
                              " is outside the action mask");
    auto check_rating = [&](int r) {
      if (r != 0 && (r < 1 || r > 5))
        throw RangeError("agent '" + agent_id + "': rating " + std::to_string(r) +
                         " outside 1..5");
    };
    if (has_ratings()) {
      if (static_cast<int>(belief_ratings.size()) != cfg.T)
        throw ValidationError("agent '" + agent_id + "': ratings must cover every step");
      for (const auto& row : belief_ratings) {
        if (static_cast<int>(row.size()) != cfg.K)
          throw ValidationError("agent '" + agent_id + "': ratings must have K entries");
        for (int r : row) check_rating(r);
      }
    }
    if (!initial_ratings.empty()) {
      if (static_cast<int>(initial_ratings.size()) != cfg.K)
        throw ValidationError("agent '" + agent_id + "': initial ratings must have K entries");
      for (int r : initial_ratings) check_rating(r);
    }
  }
};

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline Vec relu(const Vec& v) { return v.cwiseMax(0.0); }

// Rating r in {1..5} mapped onto [0,1].
inline double rating_to_unit(int r) { return (r - 1) / 4.0; }

}  // namespace belgraph
