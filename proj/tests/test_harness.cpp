#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "belgraph/harness.hpp"
#include "test_util.hpp"

using namespace belgraph;

namespace {

json minimal_dataset() {
  return json::parse(R"({
    "config": {"K": 3, "T": 3, "num_actions": 6, "embed_dim": 4, "attn_dim": 2,
               "action_masks": "survey"},
    "vocab": {"observations": [{"id": 0, "label": "evacuation order"}, {"id": 7, "label": "smoke"}],
              "actions": ["a0", "a1", "a2", "a3", "stay", "leave"]},
    "agents": [{"id": "r1", "steps": [{"obs": 0, "action": 1}, {"obs": 7, "action": 3},
                                       {"obs": 0, "action": 5}]}]
  })");
}

PlantedSpec small_spec(int agents, std::uint64_t seed) {
  PlantedSpec s;
  s.config = testutil::small_config(3, 3, 6, 8, 4);
  s.config.action_masks = ModelConfig::survey_masks(3);
  s.vocab = Vocabulary::numbered(3, 6);
  s.truth = planted_params(s.config, PlantedScales{}, seed + 5);
  s.agents = agents;
  s.test_agents = 4;
  s.seed = seed;
  s.table_seed = seed + 1;
  return s;
}

}  // namespace

TEST(LoadDataset, MinimalFile) {
  const auto ds = dataset_from_json(minimal_dataset());
  ASSERT_EQ(ds.agents.size(), 1u);
  EXPECT_EQ(ds.agents[0].observation_ids, (std::vector<ObservationId>{0, 7, 0}));
  EXPECT_FALSE(ds.agents[0].has_ratings());
  EXPECT_EQ(ds.vocab.actions.size(), 6u);
}

TEST(LoadDataset, MaskViolation) {
  auto j = minimal_dataset();
  j["agents"][0]["steps"][0]["action"] = 5;
  EXPECT_THROW(dataset_from_json(j), ValidationError);
}

TEST(LoadDataset, RatingOutOfRange) {
  auto j = minimal_dataset();
  for (auto& s : j["agents"][0]["steps"]) s["ratings"] = {1, 2, 3};
  EXPECT_NO_THROW(dataset_from_json(j));
  j["agents"][0]["steps"][1]["ratings"] = {1, 6, 3};
  try {
    dataset_from_json(j);
    FAIL();
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("agents[0].steps[1].ratings[1]"), std::string::npos);
  }
}

TEST(LoadDataset, SchemaErrorsNameTheField) {
  auto j = minimal_dataset();
  j["agents"][0]["steps"][2].erase("obs");
  try {
    dataset_from_json(j);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("agents[0].steps[2]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("obs"), std::string::npos);
  }
  auto k = minimal_dataset();
  k["agents"][0]["steps"][0]["obs"] = 3;
  EXPECT_THROW(dataset_from_json(k), ValidationError);
  auto m = minimal_dataset();
  m["config"]["K"] = "three";
  EXPECT_THROW(dataset_from_json(m), ParseError);
}

TEST(LoadDataset, MalformedJsonReportsPosition) {
  const auto path = std::filesystem::temp_directory_path() / "belgraph_bad.json";
  detail::write_file(path.string(), "{\n  \"config\": {\n  ,\n}");
  try {
    load_dataset(path.string());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(LoadDataset, WrongTrajectoryLength) {
  auto j = minimal_dataset();
  j["agents"][0]["steps"].erase(2);
  EXPECT_THROW(dataset_from_json(j), ValidationError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  const auto out = synth_dataset(small_spec(12, 3));
  const auto path = std::filesystem::temp_directory_path() / "belgraph_ds.json";
  write_dataset(out.train, path.string());
  const auto back = load_dataset(path.string());
  EXPECT_EQ(serialize_dataset(back), serialize_dataset(out.train));
  ASSERT_EQ(back.agents.size(), out.train.agents.size());
  for (std::size_t n = 0; n < back.agents.size(); ++n) {
    EXPECT_EQ(back.agents[n].observation_ids, out.train.agents[n].observation_ids);
    EXPECT_EQ(back.agents[n].action_ids, out.train.agents[n].action_ids);
    EXPECT_EQ(back.agents[n].belief_ratings, out.train.agents[n].belief_ratings);
  }
  std::filesystem::remove(path);
}

TEST(Dataset, MissingRatingsRoundTripAsNull) {
  auto j = minimal_dataset();
  for (auto& s : j["agents"][0]["steps"]) s["ratings"] = {1, nullptr, 5};
  j["agents"][0]["initial_ratings"] = {nullptr, 3, 3};
  const auto ds = dataset_from_json(j);
  EXPECT_EQ(ds.agents[0].belief_ratings[0], (std::vector<int>{1, 0, 5}));
  EXPECT_EQ(ds.agents[0].initial_ratings, (std::vector<int>{0, 3, 3}));
  EXPECT_EQ(serialize_dataset(dataset_from_json(dataset_to_json(ds))), serialize_dataset(ds));
}

TEST(QuantizeRating, WithinAnEighth) {
  for (int k = 0; k <= 1000; ++k) {
    const double p = k / 1000.0;
    const int r = quantize_rating(p);
    EXPECT_GE(r, 1);
    EXPECT_LE(r, 5);
    EXPECT_LE(std::abs(rating_to_unit(r) - p), 0.125 + 1e-12);
  }
}

TEST(Synth, Deterministic) {
  const auto a = synth_dataset(small_spec(20, 9));
  const auto b = synth_dataset(small_spec(20, 9));
  EXPECT_EQ(serialize_dataset(a.train), serialize_dataset(b.train));
  EXPECT_EQ(serialize_dataset(a.test), serialize_dataset(b.test));
  EXPECT_EQ(serialize_table(a.table), serialize_table(b.table));
  const auto c = synth_dataset(small_spec(20, 10));
  EXPECT_NE(serialize_dataset(a.train), serialize_dataset(c.train));
  EXPECT_EQ(a.train.agents.size(), 20u);
  EXPECT_EQ(a.test.agents.size(), 4u);
  EXPECT_EQ(a.true_marginals.size(), 24u);
}

TEST(Synth, ExtremePotentialsConcentrate) {
  auto spec = small_spec(50, 1);
  PlantedScales sc;
  sc.unary = 0.0;
  sc.beta_u = 50.0;
  sc.pairwise = 0.0;
  spec.truth = planted_params(spec.config, sc, 2);
  const auto out = synth_dataset(spec);
  for (const auto& agent : out.true_configs)
    for (const auto& b : agent) EXPECT_EQ(b.index, 7u);
  for (const auto& tr : out.train.agents)
    for (const auto& r : tr.belief_ratings) EXPECT_EQ(r, (std::vector<int>{5, 5, 5}));
}

TEST(Synth, ActionFrequenciesMatchPlantedModel) {
  // One observation keeps the marginal chain deterministic, so the exact
  // action distribution at step t is sum_b p_t(b) p(a | b).
  auto spec = small_spec(10000, 4);
  spec.vocab = Vocabulary::numbered(1, 6);
  spec.test_agents = 0;
  const auto out = synth_dataset(spec);
  const auto& cfg = spec.config;
  BeliefMarginals prev = BeliefMarginals::constant(cfg.K, cfg.initial_marginal);
  for (int t = 0; t < cfg.T; ++t) {
    const auto pot =
        build_potentials(prev, 0, out.table, spec.truth.unary, spec.truth.pairwise, cfg);
    const auto g = gibbs_table(pot, cfg);
    const auto& mask = cfg.mask(t);
    std::vector<double> expect(mask.size(), 0.0);
    for (std::uint32_t s = 0; s < g.size(); ++s) {
      const auto f = action_forward(BeliefConfig::from_index(s, cfg.K).as_vector(), mask,
                                    out.table, spec.truth.attention);
      for (std::size_t k = 0; k < mask.size(); ++k) expect[k] += g.prob[s] * std::exp(f.log_probs[k]);
    }
    std::vector<int> counts(mask.size(), 0);
    for (const auto& tr : out.train.agents)
      for (std::size_t k = 0; k < mask.size(); ++k)
        if (tr.action_ids[t] == mask[k]) ++counts[k];
    for (std::size_t k = 0; k < mask.size(); ++k) {
      const double n = 10000.0;
      const double sigma = std::sqrt(n * expect[k] * (1 - expect[k]));
      EXPECT_LE(std::abs(counts[k] - n * expect[k]), 3 * sigma + 1e-9)
          << "t=" << t << " action " << mask[k];
    }
    prev = BeliefMarginals(g.marginal.cwiseMax(0.0).cwiseMin(1.0));
  }
}

TEST(PlantedSpec, FromJson) {
  const auto j = json::parse(R"({
    "config": {"K": 4, "T": 3, "num_actions": 6, "embed_dim": 8, "attn_dim": 4,
               "action_masks": "survey"},
    "num_observations": 5, "agents": 30, "test_agents": 10, "seed": 3,
    "planted": {"pairwise_scale": 2.0, "action_head_scale": 4.0}
  })");
  const auto s = planted_spec_from_json(j);
  EXPECT_EQ(s.vocab.observations.size(), 5u);
  EXPECT_EQ(s.agents, 30);
  EXPECT_EQ(s.table_seed, 4u);
  EXPECT_EQ(s.config.mask(2), (ActionMask{4, 5}));
  EXPECT_DOUBLE_EQ(s.truth.attention.beta_a, 0.0);
}

TEST(RunConfig, ParsesBothShapes) {
  const auto rc = run_config_from_json(json::parse(
      R"({"model": {"K": 2, "T": 1, "num_actions": 2, "embed_dim": 4, "attn_dim": 2},
          "train": {"learning_rate": 0.01, "epochs": 5, "seed": 9, "init_scale": 0.3}})"));
  ASSERT_TRUE(rc.model.has_value());
  EXPECT_EQ(rc.model->K, 2);
  EXPECT_DOUBLE_EQ(rc.train.learning_rate, 0.01);
  EXPECT_EQ(rc.train.rng_seed, 9u);
  EXPECT_DOUBLE_EQ(rc.init_scale, 0.3);
  const auto bare = run_config_from_json(json::parse(R"({"K": 5, "T": 2})"));
  EXPECT_EQ(bare.model->K, 5);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"K": 20})")), EnumerationLimitError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"train": {"grad_mode": "fast"}})")),
               ConfigError);
}

TEST(ModelConfigJson, RoundTrip) {
  auto cfg = testutil::small_config(4, 3, 6, 8, 4);
  cfg.action_masks = ModelConfig::survey_masks(3);
  cfg.expectation_mode = ExpectationMode::enumerate;
  cfg.ablation = Ablation::no_temporal;
  const auto back = model_config_from_json(model_config_to_json(cfg));
  EXPECT_EQ(canonical_config_string(back), canonical_config_string(cfg));
}

TEST(Evaluate, MajorityBaselineAndReport) {
  const auto out = synth_dataset(small_spec(40, 2));
  const auto& cfg = out.train.config;
  const auto maj = majority_actions(out.train.agents, cfg.T);
  EXPECT_EQ(maj.size(), 3u);
  EXPECT_GE(maj[2], 4);
  const auto params = planted_params(cfg, PlantedScales{}, 7);
  const auto r = evaluate(params, out.table, cfg, out.test.agents, &out.train.agents);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
  EXPECT_EQ(r.belief_spearman.size(), 3u);
  const auto csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, 13), "metric,value\n");
  EXPECT_NE(csv.find("pairwise_structure,"), std::string::npos);
  EXPECT_NE(report_table(r).find("action accuracy"), std::string::npos);
}
