// Command-line front end: synth, train, eval, rollout, ablate, gradcheck, cluster.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "belgraph/belgraph.hpp"

namespace fs = std::filesystem;
using namespace belgraph;

namespace {

// Options shared by the subcommands that build a model.
struct ModelFlags {
  std::string config;
  std::string data;
  std::string table;
  std::string expectation_mode;
  std::string ablation;
  bool teacher_forcing = false;
  double kl_weight = -1.0;
  long long seed = -1;
  int epochs = 0;
  double learning_rate = -1.0;
  unsigned workers = 0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f, bool need_data = true) {
  cmd->add_option("--config", f.config, "run config JSON ({model, train} or a bare model)");
  auto* data = cmd->add_option("--data", f.data, "dataset JSON, or a directory holding train.json");
  if (need_data) data->required();
  cmd->add_option("--table", f.table, "embedding table (.bgt); defaults to <data dir>/table.bgt");
  cmd->add_option("--expectation-mode", f.expectation_mode, "mean_field | enumerate")
      ->check(CLI::IsMember({"mean_field", "enumerate"}));
  cmd->add_option("--ablation", f.ablation, "full | no_pairwise | no_temporal")
      ->check(CLI::IsMember({"full", "no_pairwise", "no_temporal"}));
  cmd->add_flag("--teacher-forcing", f.teacher_forcing, "carry posterior marginals while training");
  cmd->add_option("--kl-weight", f.kl_weight, "weight of the KL term")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--epochs", f.epochs, "override the number of epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.learning_rate, "override the learning rate")->check(CLI::NonNegativeNumber);
  cmd->add_option("--workers", f.workers, "threads for per-trajectory gradients");
}

std::string data_file(const std::string& path, const char* name = "train.json") {
  return fs::is_directory(path) ? (fs::path(path) / name).string() : path;
}

std::string table_file(const ModelFlags& f) {
  if (!f.table.empty()) return f.table;
  if (f.data.empty()) throw ConfigError("--table is required");
  const fs::path base = fs::is_directory(f.data) ? fs::path(f.data) : fs::path(f.data).parent_path();
  return (base / "table.bgt").string();
}

// Everything a subcommand needs to rebuild the model exactly as trained.
struct Setup {
  RunConfig run;
  ModelConfig model;
  std::optional<SurveyDataset> data;
  EmbeddingTable table;
};

Setup resolve(const ModelFlags& f, bool load_data = true) {
  Setup s;
  if (!f.config.empty()) s.run = run_config_from_json(parse_json_file(f.config));
  if (load_data && !f.data.empty()) s.data = load_dataset(data_file(f.data));
  if (s.run.model)
    s.model = *s.run.model;
  else if (s.data)
    s.model = s.data->config;
  else
    throw ConfigError("no model config: pass --config or --data");
  if (!f.expectation_mode.empty()) s.model.expectation_mode = parse_expectation_mode(f.expectation_mode);
  if (!f.ablation.empty()) s.model.ablation = parse_ablation(f.ablation);
  s.model.validate();
  if (s.data) {
    s.data->config = s.model;
    s.data->validate();
  }
  auto& t = s.run.train;
  if (f.teacher_forcing) t.teacher_forcing = true;
  if (f.kl_weight >= 0.0) t.kl_weight = f.kl_weight;
  if (f.seed >= 0) t.rng_seed = static_cast<std::uint64_t>(f.seed);
  if (f.epochs > 0) t.epochs = f.epochs;
  if (f.learning_rate >= 0.0) t.learning_rate = f.learning_rate;
  if (f.workers > 0) t.workers = f.workers;
  t.validate();
  if (load_data) {
    std::optional<Vocabulary> vocab;
    if (s.data) vocab = s.data->vocab;
    s.table = vocab ? load_table(table_file(f), s.model, *vocab) : load_table(table_file(f));
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  detail::write_file(path, text);
}

std::string marginals_csv(const std::vector<std::string>& ids, const std::vector<std::vector<Vec>>& m,
                          const std::vector<std::vector<int>>& actions) {
  std::ostringstream os;
  os << std::setprecision(17) << "agent,t,action";
  const auto K = m.empty() || m[0].empty() ? 0 : m[0][0].size();
  for (Eigen::Index i = 0; i < K; ++i) os << ",belief_" << i;
  os << '\n';
  for (std::size_t n = 0; n < m.size(); ++n)
    for (std::size_t t = 0; t < m[n].size(); ++t) {
      os << ids[n] << ',' << t << ',' << actions[n][t];
      for (Eigen::Index i = 0; i < K; ++i) os << ',' << m[n][t][i];
      os << '\n';
    }
  return os.str();
}

//--------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& out_dir, long long seed) {
  json j = parse_json_file(spec_path);
  if (seed >= 0) j["seed"] = seed;
  const auto spec = planted_spec_from_json(j);
  const auto out = synth_dataset(spec);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_dataset(out.train, (dir / "train.json").string());
  if (!out.test.agents.empty()) write_dataset(out.test, (dir / "test.json").string());
  write_table(out.table, (dir / "table.bgt").string());
  write_checkpoint(spec.truth, spec.config, (dir / "planted.bgp").string());
  std::vector<std::string> ids;
  std::vector<std::vector<int>> actions;
  for (const auto* ds : {&out.train, &out.test})
    for (const auto& tr : ds->agents) {
      ids.push_back(tr.agent_id);
      actions.push_back(tr.action_ids);
    }
  write_text((dir / "true_marginals.csv").string(), marginals_csv(ids, out.true_marginals, actions));
  std::cout << "wrote " << out.train.agents.size() << " training and " << out.test.agents.size()
            << " test agents to " << out_dir << '\n';
  return 0;
}

int cmd_train(const ModelFlags& f, const std::string& test_path, const std::string& out,
              const std::string& log_path) {
  const auto s = resolve(f);
  std::optional<SurveyDataset> test;
  if (!test_path.empty()) {
    test = load_dataset(test_path);
    test->config = s.model;
    test->validate();
  }
  const ParamSet p0 = ParamSet::random(s.model, s.run.train.rng_seed, s.run.init_scale);
  const auto res = train(s.data->agents, p0, s.table, s.model, s.run.train,
                         test ? &test->agents : nullptr, [](const EpochDiagnostics& e) {
                           std::cerr << "epoch " << e.epoch << "  loss " << e.mean_loss
                                     << "  L_act " << e.mean_action_term << "  KL "
                                     << e.mean_kl_term << "  train_acc " << e.train_accuracy
                                     << '\n';
                         });
  write_checkpoint(res.params, s.model, out);
  if (!log_path.empty()) write_text(log_path, diagnostics_csv(res.log));
  std::cout << "final loss " << res.log.back().mean_loss << ", checkpoint " << out << '\n';
  return 0;
}

int cmd_eval(const ModelFlags& f, const std::string& ckpt, const std::string& eval_path,
             const std::string& out, const std::string& pred_path) {
  const auto s = resolve(f);
  const auto params = load_checkpoint(ckpt, s.model);
  SurveyDataset target = *s.data;
  if (!eval_path.empty()) {
    target = load_dataset(eval_path);
    target.config = s.model;
    target.validate();
  }
  const auto r = evaluate(params, s.table, s.model, target.agents, &s.data->agents,
                          s.run.train.initial_from_ratings);
  write_text(out, report_csv(r));
  if (!out.empty() && out != "-") std::cout << report_table(r);
  if (!pred_path.empty()) {
    std::vector<std::string> ids;
    for (const auto& tr : target.agents) ids.push_back(tr.agent_id);
    write_text(pred_path, marginals_csv(ids, r.predicted, r.predicted_actions));
  }
  return 0;
}

std::vector<ObservationId> parse_obs_list(const std::string& text) {
  std::vector<ObservationId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<ObservationId>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ParseError("--obs: '" + item + "' is not an observation id");
    }
  }
  return out;
}

int cmd_rollout(const ModelFlags& f, const std::string& ckpt, const std::string& obs_text,
                bool sample, long long rollout_seed, const std::string& out,
                const std::string& attention_path) {
  const auto s = resolve(f);
  const auto params = load_checkpoint(ckpt, s.model);
  std::vector<std::pair<std::string, std::vector<ObservationId>>> sequences;
  if (!obs_text.empty()) {
    sequences.emplace_back("input", parse_obs_list(obs_text));
  } else {
    for (const auto& tr : s.data->agents) sequences.emplace_back(tr.agent_id, tr.observation_ids);
  }
  RolloutOptions opts;
  opts.selection = sample ? ActionSelection::sample : ActionSelection::argmax;
  opts.rng_seed = rollout_seed < 0 ? 0 : static_cast<std::uint64_t>(rollout_seed);
  opts.record_attention = !attention_path.empty();
  std::vector<std::string> ids;
  std::vector<std::vector<Vec>> margs;
  std::vector<std::vector<int>> actions;
  std::ostringstream att;
  att << std::setprecision(17) << "agent,t,action,row,col,weight\n";
  for (const auto& [id, obs] : sequences) {
    const auto r = rollout(params, s.table, s.model, obs, opts);
    ids.push_back(id);
    std::vector<Vec> m;
    for (const auto& x : r.marginals) m.push_back(x.p);
    margs.push_back(std::move(m));
    actions.push_back(r.actions);
    if (opts.record_attention)
      for (int t = 0; t < s.model.T; ++t)
        for (std::size_t k = 0; k < r.attention[t].size(); ++k) {
          const Mat& A = r.attention[t][k];
          for (Eigen::Index i = 0; i < A.rows(); ++i)
            for (Eigen::Index c = 0; c < A.cols(); ++c)
              att << id << ',' << t << ',' << s.model.mask(t)[k] << ',' << i << ',' << c << ','
                  << A(i, c) << '\n';
        }
  }
  write_text(out, marginals_csv(ids, margs, actions));
  if (opts.record_attention) write_text(attention_path, att.str());
  return 0;
}

int cmd_ablate(const ModelFlags& f, const std::string& eval_path, const std::string& out) {
  const auto s = resolve(f);
  std::vector<Trajectory> eval_set = s.data->agents;
  if (!eval_path.empty()) {
    auto e = load_dataset(eval_path);
    e.config = s.model;
    e.validate();
    eval_set = e.agents;
  }
  const auto rows = run_ablations(*s.data, eval_set, s.table, s.model, s.run.train, s.run.init_scale);
  write_text(out, ablation_csv(rows));
  if (!out.empty() && out != "-") std::cout << ablation_csv(rows);
  return 0;
}

int cmd_gradcheck(const ModelFlags& f, int agents) {
  // Defaults match the reference instance: K=3, T=2, d=8, d_k=4, |A|=3.
  ModelConfig cfg;
  cfg.K = 3;
  cfg.T = 2;
  cfg.num_actions = 3;
  cfg.embed_dim = 8;
  cfg.attn_dim = 4;
  cfg.action_masks = ModelConfig::full_masks(cfg.T, cfg.num_actions);
  TrainConfig tc;
  double scale = 0.5;
  if (!f.config.empty()) {
    const auto rc = run_config_from_json(parse_json_file(f.config));
    if (rc.model) cfg = *rc.model;
    tc = rc.train;
  }
  if (!f.expectation_mode.empty()) cfg.expectation_mode = parse_expectation_mode(f.expectation_mode);
  if (!f.ablation.empty()) cfg.ablation = parse_ablation(f.ablation);
  if (f.teacher_forcing) tc.teacher_forcing = true;
  if (f.kl_weight >= 0.0) tc.kl_weight = f.kl_weight;
  cfg.validate();
  const auto seed = static_cast<std::uint64_t>(f.seed < 0 ? 0 : f.seed);
  const auto vocab = Vocabulary::numbered(3, cfg.num_actions);
  const auto table = synth_table(cfg, vocab, seed);
  const auto params = ParamSet::random(cfg, detail::splitmix64(seed), scale);
  std::mt19937_64 rng(seed);
  const auto obs = vocab.observation_ids();
  std::vector<Trajectory> data(agents);
  for (int n = 0; n < agents; ++n) {
    data[n].agent_id = "check" + std::to_string(n);
    for (int t = 0; t < cfg.T; ++t) {
      data[n].observation_ids.push_back(obs[rng() % obs.size()]);
      const auto& m = cfg.mask(t);
      data[n].action_ids.push_back(m[rng() % m.size()]);
    }
  }
  std::vector<const Trajectory*> batch;
  for (const auto& tr : data) batch.push_back(&tr);
  const auto opts = tc.objective();
  const Vec a = gradient(params, batch, table, cfg, opts, GradMode::analytic);
  const Vec n = gradient(params, batch, table, cfg, opts, GradMode::numeric);
  const double err = max_relative_error(a, n);
  std::cout << "max relative error " << std::setprecision(6) << err << " over " << a.size()
            << " parameters\n";
  return err < 1e-3 ? 0 : 1;
}

int cmd_cluster(const std::string& data_path, int k, long long seed, int belief,
                const std::string& out) {
  const auto ds = load_dataset(data_file(data_path));
  if (belief < 0 || belief >= ds.config.K) throw RangeError("--belief out of range");
  std::vector<std::vector<double>> series;
  std::vector<std::string> ids;
  int skipped = 0;
  for (const auto& tr : ds.agents) {
    if (!tr.has_ratings()) {
      ++skipped;
      continue;
    }
    std::vector<double> r;
    for (const auto& step : tr.belief_ratings) r.push_back(step[belief]);
    if (std::find(r.begin(), r.end(), 0.0) != r.end()) {
      ++skipped;
      continue;
    }
    series.push_back(std::move(r));
    ids.push_back(tr.agent_id);
  }
  const auto c = metrics::cluster_trajectories(series, k, static_cast<std::uint64_t>(seed < 0 ? 0 : seed));
  std::ostringstream os;
  os << std::setprecision(17) << "agent,cluster,z0,z1,z2\n";
  for (std::size_t n = 0; n < ids.size(); ++n)
    os << ids[n] << ',' << c.labels[n] << ',' << c.normalized[n][0] << ',' << c.normalized[n][1]
       << ',' << c.normalized[n][2] << '\n';
  write_text(out, os.str());
  std::cerr << "clustered " << ids.size() << " agents (" << skipped << " skipped) in "
            << c.iterations << " iterations\n";
  for (int j = 0; j < k; ++j)
    std::cerr << "  centroid " << j << ": " << c.centroids[j][0] << ' ' << c.centroids[j][1] << ' '
              << c.centroids[j][2] << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Belief-graph model of agent belief dynamics"};
  app.require_subcommand(1);

  std::string spec, out_dir;
  long long synth_seed = -1;
  auto* synth = app.add_subcommand("synth", "generate a planted dataset and embedding table");
  synth->add_option("--spec", spec, "planted spec JSON")->required();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--seed", synth_seed, "override the spec seed");

  ModelFlags train_f;
  std::string train_out, train_log, train_test;
  auto* train_cmd = app.add_subcommand("train", "fit the model to a dataset");
  add_model_flags(train_cmd, train_f);
  train_cmd->add_option("--out", train_out, "checkpoint path (.bgp)")->required();
  train_cmd->add_option("--log", train_log, "per-epoch diagnostics CSV");
  train_cmd->add_option("--test", train_test, "held-out dataset for per-epoch test accuracy");

  ModelFlags eval_f;
  std::string eval_ckpt, eval_out = "-", eval_set, eval_pred;
  auto* eval_cmd = app.add_subcommand("eval", "score rollouts against a dataset");
  add_model_flags(eval_cmd, eval_f);
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint (.bgp)")->required();
  eval_cmd->add_option("--eval", eval_set, "dataset to score (default: --data)");
  eval_cmd->add_option("--out", eval_out, "metrics CSV (default stdout)");
  eval_cmd->add_option("--predictions", eval_pred, "rollout marginals CSV");

  ModelFlags roll_f;
  std::string roll_ckpt, roll_obs, roll_out = "-", roll_att;
  bool roll_sample = false;
  long long roll_seed = 0;
  auto* roll_cmd = app.add_subcommand("rollout", "roll the generative model forward");
  add_model_flags(roll_cmd, roll_f);
  roll_cmd->add_option("--ckpt", roll_ckpt, "checkpoint (.bgp)")->required();
  roll_cmd->add_option("--obs", roll_obs, "comma-separated observation ids (default: every agent in --data)");
  roll_cmd->add_flag("--sample", roll_sample, "sample actions instead of argmax");
  roll_cmd->add_option("--rollout-seed", roll_seed, "seed for sampled actions");
  roll_cmd->add_option("--out", roll_out, "marginals CSV (default stdout)");
  roll_cmd->add_option("--attention", roll_att, "attention weights CSV");

  ModelFlags abl_f;
  std::string abl_eval, abl_out = "-";
  auto* abl_cmd = app.add_subcommand("ablate", "train full, no_pairwise and no_temporal variants");
  add_model_flags(abl_cmd, abl_f);
  abl_cmd->add_option("--eval", abl_eval, "dataset to score (default: --data)");
  abl_cmd->add_option("--out", abl_out, "comparison CSV (default stdout)");

  ModelFlags gc_f;
  int gc_agents = 2;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_model_flags(gc_cmd, gc_f, false);
  gc_cmd->add_option("--agents", gc_agents, "random trajectories in the batch")->check(CLI::PositiveNumber);

  std::string cl_data, cl_out = "-";
  int cl_k = 3, cl_belief = 0;
  long long cl_seed = 0;
  auto* cl_cmd = app.add_subcommand("cluster", "cluster rating trajectories of one belief");
  cl_cmd->add_option("--data", cl_data, "dataset JSON with ratings")->required();
  cl_cmd->add_option("--k", cl_k, "number of clusters")->check(CLI::PositiveNumber);
  cl_cmd->add_option("--belief", cl_belief, "belief index");
  cl_cmd->add_option("--seed", cl_seed, "k-means++ seed");
  cl_cmd->add_option("--out", cl_out, "assignments CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(spec, out_dir, synth_seed);
    if (*train_cmd) return cmd_train(train_f, train_test, train_out, train_log);
    if (*eval_cmd) return cmd_eval(eval_f, eval_ckpt, eval_set, eval_out, eval_pred);
    if (*roll_cmd) return cmd_rollout(roll_f, roll_ckpt, roll_obs, roll_sample, roll_seed, roll_out, roll_att);
    if (*abl_cmd) return cmd_ablate(abl_f, abl_eval, abl_out);
    if (*gc_cmd) return cmd_gradcheck(gc_f, gc_agents);
    if (*cl_cmd) return cmd_cluster(cl_data, cl_k, cl_seed, cl_belief, cl_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
