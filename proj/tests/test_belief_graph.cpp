#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "belgraph/belief_graph.hpp"
#include "test_util.hpp"

using namespace belgraph;

namespace {

ModelConfig config_k(int K) { return testutil::small_config(K, 1, 2, 4, 2); }

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST(BaseUnaryScore, Examples) {
  EXPECT_DOUBLE_EQ(base_unary_score(vec2(1, 0), vec2(1, 0), vec2(0, 1), 1.0), 1.0);
  EXPECT_DOUBLE_EQ(base_unary_score(vec2(0.3, -2), vec2(1, 1), vec2(1, 1), 3.0), 0.0);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(base_unary_score(vec2(1, 0), vec2(r, r), vec2(-r, r), 2.0), 2.0 * std::sqrt(2.0),
              1e-12);
  EXPECT_THROW(base_unary_score(vec2(1, 0), vec2(0, 0), vec2(1, 0), 1.0), DegenerateEmbeddingError);
}

TEST(BaseUnaryScore, BoundedByTwoTau) {
  for (int k = 0; k < 200; ++k) {
    const double s = base_unary_score(Vec::Random(5), Vec::Random(5), Vec::Random(5), 0.7);
    EXPECT_LE(std::abs(s), 1.4 + 1e-12);
  }
}

TEST(Energy, Examples) {
  TransitionPotentials pot(2);
  pot.unary << 1, 2;
  pot.set_pair(0, 1, 3);
  EXPECT_DOUBLE_EQ(energy(pot, BeliefConfig::from_index(0, 2)), 0.0);
  EXPECT_DOUBLE_EQ(energy(pot, BeliefConfig::from_index(3, 2)), 6.0);
  TransitionPotentials p3(3);
  p3.unary << 1, -1, 0.5;
  EXPECT_DOUBLE_EQ(energy(p3, BeliefConfig::from_bits({1, 1, 0})), 0.0);
}

TEST(LogPartition, Examples) {
  EXPECT_NEAR(log_partition(TransitionPotentials(3), config_k(3)), std::log(8.0), 1e-14);
  TransitionPotentials p(1);
  p.unary << 0.37;
  EXPECT_NEAR(log_partition(p, config_k(1)), std::log1p(std::exp(0.37)), 1e-14);
}

TEST(LogPartition, OverflowSafe) {
  TransitionPotentials p(3);
  p.unary << 800, 900, -700;
  const double lz = log_partition(p, config_k(3));
  EXPECT_TRUE(std::isfinite(lz));
  EXPECT_NEAR(lz, 1700.0, 1e-9);
}

TEST(LogPartition, MatchesBruteForceAndNormalizes) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 8);
    const auto r = oracle::random_potentials(K, rng);
    const auto pot = testutil::to_potentials(r);
    const auto cfg = config_k(K);
    const auto g = gibbs_table(pot, cfg);
    EXPECT_NEAR(g.log_z, oracle::log_partition(r.u, r.psi), 1e-12);
    double total = 0.0;
    for (double p : g.prob) total += p;
    EXPECT_NEAR(total, 1.0, 1e-10);
    const auto m = oracle::marginals(r.u, r.psi);
    for (int i = 0; i < K; ++i) EXPECT_NEAR(g.marginal[i], m[i], 1e-10);
  }
}

TEST(Marginals, Examples) {
  const auto m = marginals(TransitionPotentials(4), config_k(4));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(m[i], 0.5);
  TransitionPotentials p(1);
  p.unary << 0.8;
  EXPECT_NEAR(marginals(p, config_k(1))[0], 0.68997448112761, 1e-12);
  TransitionPotentials q(2);
  q.set_pair(0, 1, 5.0);
  const auto mq = marginals(q, config_k(2));
  const double expect = (1 + std::exp(5.0)) / (3 + std::exp(5.0));  // configs 10 and 11
  EXPECT_NEAR(mq[0], expect, 1e-12);
  EXPECT_DOUBLE_EQ(mq[0], mq[1]);
  EXPECT_GT(mq[0], 0.5);
}

TEST(Marginals, PairwiseMonotonicity) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 2 + static_cast<int>(rng() % 4);
    auto pot = testutil::to_potentials(oracle::random_potentials(K, rng));
    const int i = 0, j = 1;
    auto joint11 = [&](const TransitionPotentials& p) {
      const auto g = gibbs_table(p, config_k(K));
      return g.pair_moment(i, j);
    };
    const double before = joint11(pot);
    pot.set_pair(i, j, pot.pairwise(i, j) + 0.1);
    EXPECT_GT(joint11(pot), before);
  }
}

TEST(Marginals, NoPairwiseIsProductOfSigmoids) {
  std::mt19937_64 rng(4);
  auto r = oracle::random_potentials(4, rng);
  auto pot = testutil::to_potentials(r);
  pot.pairwise.setZero();
  const auto g = gibbs_table(pot, config_k(4));
  for (std::uint32_t s = 0; s < 16; ++s) {
    double p = 1.0;
    for (int i = 0; i < 4; ++i) p *= ((s >> i) & 1U) ? logistic(r.u[i]) : 1 - logistic(r.u[i]);
    EXPECT_NEAR(g.prob[s], p, 1e-12);
  }
}

TEST(KL, Examples) {
  Vec q(3);
  q << 0.2, 0.7, 0.55;
  TransitionPotentials pot(3);
  for (int i = 0; i < 3; ++i) pot.unary[i] = std::log(q[i] / (1 - q[i]));
  EXPECT_NEAR(kl_factorized_to_joint(BeliefMarginals(q), pot, config_k(3)), 0.0, 1e-9);
  EXPECT_NEAR(kl_factorized_to_joint(BeliefMarginals::constant(3, 0.5), TransitionPotentials(3),
                                     config_k(3)),
              0.0, 1e-12);
}

TEST(KL, MatchesDirectSumAndIsNonNegative) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 5);
    const auto r = oracle::random_potentials(K, rng);
    Vec q(K);
    for (int i = 0; i < K; ++i) q[i] = U(rng);
    const double kl = kl_factorized_to_joint(BeliefMarginals(q), testutil::to_potentials(r), config_k(K));
    EXPECT_NEAR(kl, oracle::kl(oracle::to_std(q), r.u, r.psi), 1e-10);
    EXPECT_GE(kl, -1e-10);
  }
}

TEST(KL, ClampsDegenerateQ) {
  Vec q(2);
  q << 0.0, 1.0;
  const double kl = kl_factorized_to_joint(BeliefMarginals(q), TransitionPotentials(2), config_k(2));
  EXPECT_TRUE(std::isfinite(kl));
}

TEST(SampleConfig, ExtremeEnergyConcentrates) {
  TransitionPotentials pot(3);
  pot.unary << 50, -50, 50;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto b = sample_config(pot, config_k(3), seed);
    EXPECT_EQ(b.bits, (std::vector<std::uint8_t>{1, 0, 1}));
  }
}

TEST(SampleConfig, Deterministic) {
  std::mt19937_64 rng(1);
  const auto pot = testutil::to_potentials(oracle::random_potentials(4, rng));
  EXPECT_EQ(sample_config(pot, config_k(4), 99), sample_config(pot, config_k(4), 99));
}

TEST(SampleConfig, UniformFrequenciesWithinThreeSigma) {
  const int K = 3, draws = 100000;
  const auto g = gibbs_table(TransitionPotentials(K), config_k(K));
  std::mt19937_64 rng(12345);
  std::vector<int> counts(1 << K, 0);
  for (int k = 0; k < draws; ++k) ++counts[sample_config(g, rng).index];
  const double p = 1.0 / (1 << K);
  const double sigma = std::sqrt(draws * p * (1 - p));
  double chi2 = 0.0;
  for (int c : counts) {
    EXPECT_LT(std::abs(c - draws * p), 3 * sigma);
    chi2 += (c - draws * p) * (c - draws * p) / (draws * p);
  }
  EXPECT_LT(chi2, 24.32);  // chi-square, 7 dof, p = 0.001
}

TEST(BuildPotentials, Examples) {
  auto cfg = testutil::small_config(3, 1, 2, 4, 2);
  const auto vocab = Vocabulary::numbered(1, 2);
  // h_yes == h_no and zero heads: every unary vanishes.
  EmbeddingTable sym = testutil::symmetric_table(cfg, vocab);
  const UnaryHead zero_u{Vec::Zero(4), 0.0, 2.0};
  const PairwiseHead bias_p{Vec::Zero(4), 0.7};
  const auto pot = build_potentials(BeliefMarginals::constant(3, 0.3), 0, sym, zero_u, bias_p, cfg);
  EXPECT_TRUE(pot.unary.isZero(0.0));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(pot.pairwise(i, j), i == j ? 0.0 : 0.7);

  // Planted pair vector: relu(h) . w_p = 1.3, beta_p = -0.3 -> psi = 1.0.
  EmbeddingTable planted = sym;
  Vec h(4);
  h << 1.0, -5.0, 0.5, 2.0;  // relu -> (1, 0, 0.5, 2)
  planted.insert(EmbeddingKey::pair(0, 2), h);
  Vec w(4);
  w << 0.3, 100.0, 0.6, 0.35;  // 0.3 + 0.3 + 0.7 = 1.3
  const auto pp = build_potentials(BeliefMarginals::constant(3, 0.5), 0, planted, zero_u,
                                   PairwiseHead{w, -0.3}, cfg);
  EXPECT_NEAR(pp.pairwise(0, 2), 1.0, 1e-12);
  EXPECT_NEAR(pp.pairwise(2, 0), 1.0, 1e-12);
}

TEST(BuildPotentials, MatchesHandComputedUnary) {
  auto cfg = testutil::small_config(2, 1, 2, 6, 2);
  const auto vocab = Vocabulary::numbered(2, 2);
  const auto table = synth_table(cfg, vocab, 17);
  std::mt19937_64 rng(3);
  const UnaryHead uh{Vec::Random(6), 0.25, cfg.tau};
  const PairwiseHead ph{Vec::Random(6), -0.1};
  Vec prev(2);
  prev << 0.3, 0.9;
  const auto pot = build_potentials(BeliefMarginals(prev), 1, table, uh, ph, cfg);
  for (int i = 0; i < 2; ++i) {
    const Vec hy = table.at(EmbeddingKey::bel_obs(true, 1, i));
    const Vec hn = table.at(EmbeddingKey::bel_obs(false, 1, i));
    const Vec hh = prev[i] * hy + (1 - prev[i]) * hn;
    const double cy = hh.dot(hy) / (hh.norm() * hy.norm());
    const double cn = hh.dot(hn) / (hh.norm() * hn.norm());
    const double expect = cfg.tau * (cy - cn) + uh.w_u.dot(hh.cwiseMax(0.0)) + uh.beta_u;
    EXPECT_NEAR(pot.unary[i], expect, 1e-12);
  }
}

TEST(BuildPotentials, Ablations) {
  auto cfg = testutil::small_config(3, 1, 2, 8, 2);
  const auto vocab = Vocabulary::numbered(2, 2);
  const auto table = synth_table(cfg, vocab, 5);
  const UnaryHead uh{Vec::Random(8), 0.1, cfg.tau};
  const PairwiseHead ph{Vec::Random(8), 0.4};
  Vec a(3), b(3);
  a << 0.1, 0.5, 0.9;
  b << 0.8, 0.2, 0.3;

  cfg.ablation = Ablation::no_pairwise;
  const auto np = build_potentials(BeliefMarginals(a), 0, table, uh, ph, cfg);
  EXPECT_TRUE(np.pairwise.isZero(0.0));

  cfg.ablation = Ablation::no_temporal;
  const auto ta = build_potentials(BeliefMarginals(a), 1, table, uh, ph, cfg);
  const auto tb = build_potentials(BeliefMarginals(b), 1, table, uh, ph, cfg);
  EXPECT_EQ(ta.unary, tb.unary);
  EXPECT_EQ(ta.pairwise, tb.pairwise);

  cfg.ablation = Ablation::full;
  const auto fa = build_potentials(BeliefMarginals(a), 1, table, uh, ph, cfg);
  const auto fb = build_potentials(BeliefMarginals(b), 1, table, uh, ph, cfg);
  EXPECT_NE(fa.unary, fb.unary);
}

TEST(BuildPotentials, MissingKeyIsCompletenessError) {
  auto cfg = testutil::small_config(2, 1, 2, 4, 2);
  EmbeddingTable empty(4);
  EXPECT_THROW(build_potentials(BeliefMarginals::constant(2, 0.5), 0, empty,
                                UnaryHead{Vec::Zero(4), 0, 1}, PairwiseHead{Vec::Zero(4), 0}, cfg),
               CompletenessError);
}

TEST(GibbsBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(77);
  const int K = 4;
  auto pot = testutil::to_potentials(oracle::random_potentials(K, rng));
  const auto cfg = config_k(K);
  const Vec gm = Vec::Random(K);
  const double glz = 0.7;
  auto objective = [&](const TransitionPotentials& p) {
    const auto g = gibbs_table(p, cfg);
    return glz * g.log_z + gm.dot(g.marginal);
  };
  Vec du = Vec::Zero(K);
  Mat dp = Mat::Zero(K, K);
  gibbs_backward(gibbs_table(pot, cfg), glz, gm, du, dp);
  const double h = 1e-6;
  for (int i = 0; i < K; ++i) {
    auto plus = pot, minus = pot;
    plus.unary[i] += h;
    minus.unary[i] -= h;
    EXPECT_NEAR(du[i], (objective(plus) - objective(minus)) / (2 * h), 1e-7);
    for (int j = i + 1; j < K; ++j) {
      plus = pot;
      minus = pot;
      plus.set_pair(i, j, pot.pairwise(i, j) + h);
      minus.set_pair(i, j, pot.pairwise(i, j) - h);
      EXPECT_NEAR(dp(i, j), (objective(plus) - objective(minus)) / (2 * h), 1e-7);
    }
  }
}
