// Dataset ingestion, planted-model data generation and evaluation reports.
//
// Dataset files are one JSON document:
//   {"config": {...model config...},
//    "vocab": {"observations": [{"id": 0, "label": "..."}, ...],
//              "actions": ["label0", "label1", ...]},
//    "agents": [{"id": "a0",
//                "initial_ratings": [3, 2, ...],            // optional
//                "steps": [{"obs": 0, "action": 1,
//                           "ratings": [1, 5, null, ...]},  // optional
//                          ...]}]}
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "belgraph/action_model.hpp"
#include "belgraph/belief_graph.hpp"
#include "belgraph/core.hpp"
#include "belgraph/embeddings.hpp"
#include "belgraph/metrics.hpp"
#include "belgraph/trainer.hpp"

namespace belgraph {

using json = nlohmann::json;

//--------------------------------------------------------------------------
// Config JSON

namespace detail {

template <typename T>
T get_field(const json& j, const char* name, const std::string& where, T fallback) {
  if (!j.contains(name)) return fallback;
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + "." + name + ": " + e.what());
  }
}

}  // namespace detail

inline ModelConfig model_config_from_json(const json& j, const std::string& where = "config") {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  ModelConfig c;
  c.K = detail::get_field(j, "K", where, c.K);
  c.T = detail::get_field(j, "T", where, c.T);
  c.num_actions = detail::get_field(j, "num_actions", where, c.num_actions);
  c.embed_dim = detail::get_field(j, "embed_dim", where, c.embed_dim);
  c.attn_dim = detail::get_field(j, "attn_dim", where, c.attn_dim);
  c.tau = detail::get_field(j, "tau", where, c.tau);
  c.expectation_mode = parse_expectation_mode(
      detail::get_field<std::string>(j, "expectation_mode", where, "mean_field"));
  c.ablation = parse_ablation(detail::get_field<std::string>(j, "ablation", where, "full"));
  c.initial_marginal = detail::get_field(j, "initial_marginal", where, c.initial_marginal);
  c.max_enum_K = detail::get_field(j, "max_enum_K", where, c.max_enum_K);
  if (!j.contains("action_masks")) {
    c.action_masks = ModelConfig::full_masks(c.T, c.num_actions);
  } else if (j.at("action_masks").is_string()) {
    const auto s = j.at("action_masks").get<std::string>();
    if (s == "survey")
      c.action_masks = ModelConfig::survey_masks(c.T);
    else if (s == "all")
      c.action_masks = ModelConfig::full_masks(c.T, c.num_actions);
    else
      throw ParseError(where + ".action_masks: unknown preset '" + s + "'");
  } else {
    c.action_masks =
        detail::get_field<std::vector<ActionMask>>(j, "action_masks", where, {});
  }
  c.validate();
  return c;
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"K", c.K},
              {"T", c.T},
              {"num_actions", c.num_actions},
              {"embed_dim", c.embed_dim},
              {"attn_dim", c.attn_dim},
              {"tau", c.tau},
              {"expectation_mode", to_string(c.expectation_mode)},
              {"ablation", to_string(c.ablation)},
              {"initial_marginal", c.initial_marginal},
              {"max_enum_K", c.max_enum_K},
              {"action_masks", c.action_masks}};
}

struct RunConfig {
  std::optional<ModelConfig> model;
  TrainConfig train;
  double init_scale = 0.1;  // std of the random initial parameters
};

inline TrainConfig train_config_from_json(const json& j, double* init_scale = nullptr) {
  const std::string where = "train";
  TrainConfig t;
  t.learning_rate = detail::get_field(j, "learning_rate", where, t.learning_rate);
  t.adam_beta1 = detail::get_field(j, "adam_beta1", where, t.adam_beta1);
  t.adam_beta2 = detail::get_field(j, "adam_beta2", where, t.adam_beta2);
  t.adam_eps = detail::get_field(j, "adam_eps", where, t.adam_eps);
  t.epochs = detail::get_field(j, "epochs", where, t.epochs);
  t.batch_size = detail::get_field(j, "batch_size", where, t.batch_size);
  t.rng_seed = detail::get_field<std::uint64_t>(j, "seed", where, t.rng_seed);
  t.grad_mode = parse_grad_mode(detail::get_field<std::string>(j, "grad_mode", where, "analytic"));
  t.teacher_forcing = detail::get_field(j, "teacher_forcing", where, t.teacher_forcing);
  t.kl_weight = detail::get_field(j, "kl_weight", where, t.kl_weight);
  t.initial_from_ratings = detail::get_field(j, "initial_from_ratings", where, t.initial_from_ratings);
  t.workers = detail::get_field(j, "workers", where, t.workers);
  if (init_scale) *init_scale = detail::get_field(j, "init_scale", where, *init_scale);
  t.validate();
  return t;
}

// Accepts {"model": {...}, "train": {...}} or a bare model object.
inline RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  if (j.contains("model") || j.contains("train")) {
    if (j.contains("model")) rc.model = model_config_from_json(j.at("model"), "model");
    if (j.contains("train")) rc.train = train_config_from_json(j.at("train"), &rc.init_scale);
  } else {
    rc.model = model_config_from_json(j);
  }
  return rc;
}

inline json parse_json_file(const std::string& path) {
  const auto text = detail::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

//--------------------------------------------------------------------------
// Survey dataset

struct SurveyDataset {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<Trajectory> agents;

  void validate() const {
    config.validate();
    for (const auto& tr : agents) {
      tr.validate(config);
      for (int t = 0; t < tr.length(); ++t)
        if (!vocab.has_observation(tr.observation_ids[t]))
          throw ValidationError("agent '" + tr.agent_id + "': observation " +
                                std::to_string(tr.observation_ids[t]) + " at t=" +
                                std::to_string(t) + " is not in the vocabulary");
      for (int a : tr.action_ids)
        if (a >= static_cast<int>(vocab.actions.size()))
          throw ValidationError("agent '" + tr.agent_id + "': action " + std::to_string(a) +
                                " is not in the vocabulary");
    }
  }
};

inline json dataset_to_json(const SurveyDataset& ds) {
  json obs = json::array();
  for (const auto& [id, label] : ds.vocab.observations) obs.push_back({{"id", id}, {"label", label}});
  json agents = json::array();
  for (const auto& tr : ds.agents) {
    json steps = json::array();
    for (int t = 0; t < tr.length(); ++t) {
      json s{{"obs", tr.observation_ids[t]}, {"action", tr.action_ids[t]}};
      if (tr.has_ratings()) {
        json r = json::array();
        for (int v : tr.belief_ratings[t]) r.push_back(v == 0 ? json(nullptr) : json(v));
        s["ratings"] = r;
      }
      steps.push_back(s);
    }
    json a{{"id", tr.agent_id}, {"steps", steps}};
    if (!tr.initial_ratings.empty()) {
      json r = json::array();
      for (int v : tr.initial_ratings) r.push_back(v == 0 ? json(nullptr) : json(v));
      a["initial_ratings"] = r;
    }
    agents.push_back(a);
  }
  return json{{"config", model_config_to_json(ds.config)},
              {"vocab", {{"observations", obs}, {"actions", ds.vocab.actions}}},
              {"agents", agents}};
}

namespace detail {

inline const json& require(const json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw ParseError(where + ": missing field '" + name + "'");
  return j.at(name);
}

template <typename T>
T require_as(const json& j, const char* name, const std::string& where) {
  try {
    return require(j, name, where).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + "." + name + ": " + e.what());
  }
}

inline std::vector<int> parse_ratings(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array");
  std::vector<int> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& v = j[k];
    if (v.is_null()) {
      out.push_back(0);
    } else if (v.is_number_integer()) {
      const int r = v.get<int>();
      if (r < 1 || r > 5)
        throw RangeError(where + "[" + std::to_string(k) + "]: rating " + std::to_string(r) +
                         " outside 1..5");
      out.push_back(r);
    } else {
      throw ParseError(where + "[" + std::to_string(k) + "]: rating must be an integer or null");
    }
  }
  return out;
}

}  // namespace detail

inline SurveyDataset dataset_from_json(const json& j) {
  SurveyDataset ds;
  ds.config = model_config_from_json(detail::require(j, "config", "dataset"), "config");
  const auto& vocab = detail::require(j, "vocab", "dataset");
  const auto& obs = detail::require(vocab, "observations", "vocab");
  if (!obs.is_array()) throw ParseError("vocab.observations: expected an array");
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const std::string w = "vocab.observations[" + std::to_string(k) + "]";
    ds.vocab.observations.emplace_back(detail::require_as<ObservationId>(obs[k], "id", w),
                                       detail::get_field<std::string>(obs[k], "label", w, ""));
  }
  ds.vocab.actions = detail::require_as<std::vector<std::string>>(vocab, "actions", "vocab");
  const auto& agents = detail::require(j, "agents", "dataset");
  if (!agents.is_array()) throw ParseError("agents: expected an array");
  for (std::size_t n = 0; n < agents.size(); ++n) {
    const std::string w = "agents[" + std::to_string(n) + "]";
    Trajectory tr;
    tr.agent_id = detail::require_as<std::string>(agents[n], "id", w);
    const auto& steps = detail::require(agents[n], "steps", w);
    if (!steps.is_array()) throw ParseError(w + ".steps: expected an array");
    bool any_ratings = false;
    for (std::size_t t = 0; t < steps.size(); ++t)
      if (steps[t].contains("ratings")) any_ratings = true;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const std::string ws = w + ".steps[" + std::to_string(t) + "]";
      tr.observation_ids.push_back(detail::require_as<ObservationId>(steps[t], "obs", ws));
      tr.action_ids.push_back(detail::require_as<int>(steps[t], "action", ws));
      if (any_ratings) {
        if (!steps[t].contains("ratings"))
          throw ParseError(ws + ": ratings must be given for every step or none");
        tr.belief_ratings.push_back(detail::parse_ratings(steps[t].at("ratings"), ws + ".ratings"));
      }
    }
    if (agents[n].contains("initial_ratings"))
      tr.initial_ratings = detail::parse_ratings(agents[n].at("initial_ratings"), w + ".initial_ratings");
    ds.agents.push_back(std::move(tr));
  }
  ds.validate();
  return ds;
}

inline SurveyDataset load_dataset(const std::string& path) {
  return dataset_from_json(parse_json_file(path));
}

inline std::string serialize_dataset(const SurveyDataset& ds) {
  return dataset_to_json(ds).dump(1) + "\n";
}

inline void write_dataset(const SurveyDataset& ds, const std::string& path) {
  detail::write_file(path, serialize_dataset(ds));
}

//--------------------------------------------------------------------------
// Planted-model synthesis

// Scales of the randomly drawn generative parameters of a planted model.
struct PlantedScales {
  double unary = 1.0;
  double beta_u = 0.0;
  double pairwise = 1.0;
  double beta_p = 0.0;
  double attention = 1.0;
  double action_head = 3.0;
};

inline ParamSet planted_params(const ModelConfig& cfg, const PlantedScales& s, std::uint64_t seed) {
  ParamSet p = ParamSet::random(cfg, seed, 1.0);
  p.unary.w_u *= s.unary;
  p.unary.beta_u = s.beta_u;
  p.pairwise.w_p *= s.pairwise;
  p.pairwise.beta_p = s.beta_p;
  p.attention.W_Q *= s.attention;
  p.attention.W_K *= s.attention;
  p.attention.W_V *= s.attention;
  p.attention.w_a *= s.action_head;
  p.attention.beta_a = 0.0;
  p.inference.W1.setZero();
  p.inference.b1 = 0.0;
  return p;
}

struct PlantedSpec {
  ModelConfig config;
  Vocabulary vocab;
  ParamSet truth;  // generative part is used; inference part ignored
  int agents = 100;
  int test_agents = 0;
  std::uint64_t seed = 0;
  std::uint64_t table_seed = 0;
};

inline PlantedSpec planted_spec_from_json(const json& j) {
  PlantedSpec s;
  s.config = model_config_from_json(detail::require(j, "config", "spec"), "config");
  const int n_obs = detail::get_field(j, "num_observations", "spec", 4);
  s.vocab = Vocabulary::numbered(n_obs, s.config.num_actions);
  s.agents = detail::get_field(j, "agents", "spec", s.agents);
  s.test_agents = detail::get_field(j, "test_agents", "spec", s.test_agents);
  s.seed = detail::get_field<std::uint64_t>(j, "seed", "spec", s.seed);
  s.table_seed = detail::get_field<std::uint64_t>(j, "table_seed", "spec", s.seed + 1);
  if (j.contains("params")) {
    s.truth = ParamSet::unflatten(s.config, Eigen::Map<const Vec>(
                                                j.at("params").get<std::vector<double>>().data(),
                                                static_cast<Eigen::Index>(j.at("params").size())));
  } else {
    const json p = j.value("planted", json::object());
    PlantedScales sc;
    sc.unary = detail::get_field(p, "unary_scale", "planted", sc.unary);
    sc.beta_u = detail::get_field(p, "beta_u", "planted", sc.beta_u);
    sc.pairwise = detail::get_field(p, "pairwise_scale", "planted", sc.pairwise);
    sc.beta_p = detail::get_field(p, "beta_p", "planted", sc.beta_p);
    sc.attention = detail::get_field(p, "attention_scale", "planted", sc.attention);
    sc.action_head = detail::get_field(p, "action_head_scale", "planted", sc.action_head);
    s.truth = planted_params(s.config, sc,
                             detail::get_field<std::uint64_t>(p, "seed", "planted", s.seed + 2));
  }
  if (s.agents <= 0) throw ConfigError("spec.agents must be positive");
  return s;
}

struct SynthOutput {
  SurveyDataset train;
  SurveyDataset test;  // empty unless test_agents > 0
  EmbeddingTable table;
  // Planted prior marginals per agent and step, train agents then test agents.
  std::vector<std::vector<Vec>> true_marginals;
  std::vector<std::vector<BeliefConfig>> true_configs;
};

inline int quantize_rating(double p) { return 1 + static_cast<int>(std::lround(4.0 * p)); }

inline SynthOutput synth_dataset(const PlantedSpec& spec) {
  const ModelConfig& cfg = spec.config;
  cfg.validate();
  SynthOutput out;
  out.table = synth_table(cfg, spec.vocab, spec.table_seed);
  out.train.config = out.test.config = cfg;
  out.train.vocab = out.test.vocab = spec.vocab;
  const auto obs_ids = spec.vocab.observation_ids();
  if (obs_ids.empty()) throw ConfigError("planted spec has no observations");
  const int total = spec.agents + spec.test_agents;
  for (int n = 0; n < total; ++n) {
    std::mt19937_64 rng(detail::hash_combine(detail::splitmix64(spec.seed), static_cast<std::uint64_t>(n)));
    Trajectory tr;
    tr.agent_id = "agent" + std::to_string(n);
    BeliefMarginals prev = BeliefMarginals::constant(cfg.K, cfg.initial_marginal);
    std::vector<Vec> mus;
    std::vector<BeliefConfig> configs;
    for (int t = 0; t < cfg.T; ++t) {
      const ObservationId o = obs_ids[rng() % obs_ids.size()];
      const auto pot =
          build_potentials(prev, o, out.table, spec.truth.unary, spec.truth.pairwise, cfg);
      const auto g = gibbs_table(pot, cfg);
      const BeliefConfig b = sample_config(g, rng);
      const auto f = action_forward(b.as_vector(), cfg.mask(t), out.table, spec.truth.attention);
      const double u = detail::uniform01(rng);
      double acc = 0.0;
      int action = f.actions.back();
      for (std::size_t k = 0; k < f.actions.size(); ++k) {
        acc += std::exp(f.log_probs[static_cast<Eigen::Index>(k)]);
        if (u < acc) {
          action = f.actions[k];
          break;
        }
      }
      const Vec mu = g.marginal.cwiseMax(0.0).cwiseMin(1.0);
      std::vector<int> ratings(cfg.K);
      for (int i = 0; i < cfg.K; ++i) ratings[i] = quantize_rating(mu[i]);
      tr.observation_ids.push_back(o);
      tr.action_ids.push_back(action);
      tr.belief_ratings.push_back(ratings);
      mus.push_back(mu);
      configs.push_back(b);
      prev = BeliefMarginals(mu);
    }
    (n < spec.agents ? out.train : out.test).agents.push_back(std::move(tr));
    out.true_marginals.push_back(std::move(mus));
    out.true_configs.push_back(std::move(configs));
  }
  return out;
}

//--------------------------------------------------------------------------
// Evaluation

// Most frequent action at each step (ties broken toward the smaller id).
inline std::vector<int> majority_actions(const std::vector<Trajectory>& data, int T) {
  std::vector<int> out(T, 0);
  for (int t = 0; t < T; ++t) {
    std::map<int, int> counts;
    for (const auto& tr : data) ++counts[tr.action_ids[t]];
    int best = -1;
    for (const auto& [a, c] : counts)
      if (best < 0 || c > counts[best]) best = a;
    out[t] = std::max(best, 0);
  }
  return out;
}

inline double majority_accuracy(const std::vector<int>& majority, const std::vector<Trajectory>& data) {
  long hit = 0, total = 0;
  for (const auto& tr : data)
    for (std::size_t t = 0; t < majority.size(); ++t, ++total)
      if (tr.action_ids[t] == majority[t]) ++hit;
  return total ? static_cast<double>(hit) / static_cast<double>(total)
               : std::numeric_limits<double>::quiet_NaN();
}

inline std::vector<std::vector<Vec>> ratings_as_unit(const std::vector<Trajectory>& data) {
  std::vector<std::vector<Vec>> out;
  for (const auto& tr : data) {
    std::vector<Vec> rows;
    for (const auto& r : tr.belief_ratings) {
      Vec v(r.size());
      for (std::size_t i = 0; i < r.size(); ++i)
        v[static_cast<Eigen::Index>(i)] =
            r[i] == 0 ? std::numeric_limits<double>::quiet_NaN() : rating_to_unit(r[i]);
      rows.push_back(v);
    }
    out.push_back(std::move(rows));
  }
  return out;
}

struct EvalReport {
  double accuracy = 0.0;
  double majority_baseline = 0.0;
  std::vector<double> belief_spearman;
  double pairwise_structure = std::numeric_limits<double>::quiet_NaN();
  double cohens_d = std::numeric_limits<double>::quiet_NaN();
  double dtw_avg = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<Vec>> predicted;  // rollout marginals per agent and step
  std::vector<std::vector<int>> predicted_actions;

  double mean_spearman() const {
    double s = 0.0;
    int n = 0;
    for (double r : belief_spearman)
      if (!std::isnan(r)) {
        s += r;
        ++n;
      }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
  }
};

// Rolls out every agent with the generative model and scores the predicted
// marginals against the agents' ratings. `reference` supplies the majority
// baseline (pass the training set; defaults to `data`).
inline EvalReport evaluate(const ParamSet& params, const EmbeddingTable& table,
                           const ModelConfig& cfg, const std::vector<Trajectory>& data,
                           const std::vector<Trajectory>* reference = nullptr,
                           bool initial_from_ratings = false) {
  EvalReport r;
  long hit = 0, total = 0;
  for (const auto& tr : data) {
    const auto ro = rollout(params, table, cfg, tr, initial_from_ratings);
    std::vector<Vec> mus;
    for (const auto& m : ro.marginals) mus.push_back(m.p);
    for (int t = 0; t < cfg.T; ++t, ++total)
      if (ro.actions[t] == tr.action_ids[t]) ++hit;
    r.predicted.push_back(std::move(mus));
    r.predicted_actions.push_back(ro.actions);
  }
  r.accuracy = total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
  r.majority_baseline =
      majority_accuracy(majority_actions(reference ? *reference : data, cfg.T), data);
  std::vector<std::vector<int>> observed;
  for (const auto& tr : data) observed.push_back(tr.action_ids);
  try {
    r.cohens_d = metrics::cohens_d(r.predicted, observed);
  } catch (const Error&) {
  }
  const bool rated = !data.empty() && std::all_of(data.begin(), data.end(), [](const Trajectory& t) {
    return t.has_ratings();
  });
  if (rated) {
    const auto gt = ratings_as_unit(data);
    r.belief_spearman = metrics::per_belief_spearman(r.predicted, gt);
    try {
      r.pairwise_structure = metrics::pairwise_structure_score(r.predicted, gt).score;
    } catch (const Error&) {
    }
    std::vector<int> lengths(data.size(), cfg.T);
    try {
      r.dtw_avg = metrics::dtw_avg(r.predicted, gt, lengths);
    } catch (const Error&) {
    }
  }
  return r;
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "accuracy," << detail::fmt(r.accuracy) << '\n';
  os << "majority_baseline," << detail::fmt(r.majority_baseline) << '\n';
  for (std::size_t i = 0; i < r.belief_spearman.size(); ++i)
    os << "spearman_belief_" << i << ',' << detail::fmt(r.belief_spearman[i]) << '\n';
  os << "mean_spearman," << detail::fmt(r.mean_spearman()) << '\n';
  os << "pairwise_structure," << detail::fmt(r.pairwise_structure) << '\n';
  os << "cohens_d," << detail::fmt(r.cohens_d) << '\n';
  os << "dtw_avg," << detail::fmt(r.dtw_avg) << '\n';
  return os.str();
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, double v) {
    os << "  " << std::left << std::setw(22) << name << std::right << std::setw(10) << v << '\n';
  };
  row("action accuracy", r.accuracy);
  row("majority baseline", r.majority_baseline);
  for (std::size_t i = 0; i < r.belief_spearman.size(); ++i)
    row("spearman belief " + std::to_string(i), r.belief_spearman[i]);
  row("pairwise structure", r.pairwise_structure);
  row("cohen's d", r.cohens_d);
  row("dtw avg", r.dtw_avg);
  return os.str();
}

struct AblationRow {
  Ablation variant;
  EvalReport report;
  double final_loss = 0.0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,accuracy,mean_spearman,pairwise_structure,cohens_d,dtw_avg,final_loss\n";
  for (const auto& r : rows)
    os << to_string(r.variant) << ',' << detail::fmt(r.report.accuracy) << ','
       << detail::fmt(r.report.mean_spearman()) << ',' << detail::fmt(r.report.pairwise_structure)
       << ',' << detail::fmt(r.report.cohens_d) << ',' << detail::fmt(r.report.dtw_avg) << ','
       << detail::fmt(r.final_loss) << '\n';
  return os.str();
}

inline std::vector<AblationRow> run_ablations(const SurveyDataset& train_set,
                                              const std::vector<Trajectory>& eval_set,
                                              const EmbeddingTable& table, const ModelConfig& base,
                                              const TrainConfig& tcfg, double init_scale) {
  std::vector<AblationRow> rows;
  for (Ablation a : {Ablation::full, Ablation::no_pairwise, Ablation::no_temporal}) {
    ModelConfig cfg = base;
    cfg.ablation = a;
    const ParamSet p0 = ParamSet::random(cfg, tcfg.rng_seed, init_scale);
    auto tr = train(train_set.agents, p0, table, cfg, tcfg);
    AblationRow row{a, evaluate(tr.params, table, cfg, eval_set, &train_set.agents,
                                tcfg.initial_from_ratings),
                    tr.log.back().mean_loss};
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace belgraph
