#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "advx/advtrain.hpp"
#include "test_support.hpp"

namespace advx {
namespace {

using testing::random_labels;
using testing::random_tensor;
using testing::small_config;

// Direct evaluation of the weighted loss: every term written out.
double mixed_loss_oracle(const std::vector<double>& clean, const std::vector<double>& adv,
                         std::size_t m, std::size_t k, double lambda) {
  double num = 0.0;
  for (double v : clean) num += v;
  double adv_sum = 0.0;
  for (double v : adv) adv_sum += v;
  num += lambda * adv_sum;
  return num / ((static_cast<double>(m) - static_cast<double>(k)) + lambda * static_cast<double>(k));
}

TEST(MixedLoss, NormalizerForDefaultConstants) {
  const std::vector<double> clean(16, 1.0), adv(16, 1.0);
  EXPECT_NEAR(mixed_loss(clean, adv, 32, 16, 0.3), (16.0 + 0.3 * 16.0) / 20.8, 1e-15);
  const std::vector<double> two(16, 2.0);
  EXPECT_NEAR(mixed_loss(clean, two, 32, 16, 0.3), (16.0 + 0.3 * 32.0) / 20.8, 1e-15);
}

TEST(MixedLoss, Collapses) {
  const std::vector<double> clean{1.0, 2.0, 6.0}, none;
  EXPECT_NEAR(mixed_loss(clean, none, 3, 0, 0.3), 3.0, 1e-15);
  const std::vector<double> adv{4.0, 8.0};
  EXPECT_NEAR(mixed_loss(none, adv, 2, 2, 0.3), 6.0, 1e-15);
}

TEST(MixedLoss, RejectsInconsistentSizes) {
  const std::vector<double> a{1.0, 2.0}, b{3.0};
  EXPECT_THROW(mixed_loss(a, b, 4, 1, 0.3), std::invalid_argument);
  EXPECT_THROW(mixed_loss(a, b, 3, 2, 0.3), std::invalid_argument);
  const std::vector<double> none;
  EXPECT_THROW(mixed_loss(none, b, 1, 1, 0.0), std::invalid_argument);
}

TEST(MixedLoss, MatchesDirectFormulaOnRandomInputs) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> msize(1, 64);
  std::uniform_real_distribution<double> lam(0.01, 2.0), loss(0.0, 10.0);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t m = msize(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, m)(rng);
    const double lambda = lam(rng);
    std::vector<double> clean(m - k), adv(k);
    for (double& v : clean) v = loss(rng);
    for (double& v : adv) v = loss(rng);
    const double got = mixed_loss(clean, adv, m, k, lambda);
    EXPECT_NEAR(got, mixed_loss_oracle(clean, adv, m, k, lambda), 1e-12);
    // The same quantity written through the per-group means.
    const double mc = clean.empty() ? 0.0 : std::accumulate(clean.begin(), clean.end(), 0.0) / clean.size();
    const double ma = adv.empty() ? 0.0 : std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size();
    const double norm = static_cast<double>(m - k) + lambda * static_cast<double>(k);
    EXPECT_NEAR(got, (static_cast<double>(m - k) * mc + lambda * static_cast<double>(k) * ma) / norm,
                1e-12);
  }
}

// Mean of |z| for z ~ N(0, sigma) conditioned on |z| <= bound, by composite
// Simpson integration of the half-normal density.
double truncated_half_normal_mean(double sigma, double bound) {
  const int n = 200000;
  const double h = bound / n;
  double mass = 0.0, first = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double pdf = std::exp(-0.5 * z * z / (sigma * sigma));
    mass += w * pdf;
    first += w * z * pdf;
  }
  return first / mass;
}

TEST(SampleEpsilon, FixedIsConstant) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_epsilon(EpsSchedule::fixed(8.0), rng), 8.0);
}

TEST(SampleEpsilon, TruncatedNormalBoundsAndMean) {
  std::mt19937_64 rng(2);
  const auto schedule = EpsSchedule::truncnormal(8.0, 16.0);
  const int draws = 1000000;
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double e = sample_epsilon(schedule, rng);
    ASSERT_GE(e, 0.0);
    ASSERT_LE(e, 16.0);
    sum += e;
  }
  const double oracle = truncated_half_normal_mean(8.0, 16.0);
  // The closed form gives the same number; the integration is the oracle.
  EXPECT_NEAR(oracle,
              8.0 * std::sqrt(2.0 / M_PI) * (1.0 - std::exp(-2.0)) / std::erf(std::sqrt(2.0)),
              1e-9);
  EXPECT_NEAR(sum / draws / oracle, 1.0, 0.01);
}

TEST(EpsSchedule, ParseAndValidate) {
  EXPECT_EQ(EpsSchedule::parse("fixed:8"), EpsSchedule::fixed(8.0));
  EXPECT_EQ(EpsSchedule::parse("truncnormal:8:16"), EpsSchedule::truncnormal(8.0, 16.0));
  EXPECT_EQ(EpsSchedule::parse(EpsSchedule::truncnormal(4.0, 12.0).to_string()),
            EpsSchedule::truncnormal(4.0, 12.0));
  EXPECT_THROW(EpsSchedule::parse("truncnormal:8:0"), std::invalid_argument);
  EXPECT_THROW(EpsSchedule::parse("uniform:3"), std::invalid_argument);
  EXPECT_THROW(EpsSchedule::parse("fixed:-1"), std::invalid_argument);
}

TEST(RmsProp, ZeroGradientLeavesParameters) {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0})};
  RmsPropState s;
  rmsprop_update(p, {Tensor::vector({0.0, 0.0})}, s, 0.001);
  EXPECT_EQ(p[0].values(), (std::vector<double>{1.0, -2.0}));
}

TEST(RmsProp, FirstStepMagnitude) {
  const double lr = 0.001, decay = 0.9, eps = 1e-8;
  for (double g : {0.5, -3.0, 1e-3}) {
    std::vector<Tensor> p{Tensor::vector({0.0})};
    RmsPropState s;
    rmsprop_update(p, {Tensor::vector({g})}, s, lr, decay, eps);
    const double expected = -lr * g / (std::sqrt((1.0 - decay) * g * g) + eps);
    EXPECT_NEAR(p[0][0], expected, 1e-18);
    EXPECT_NEAR(std::abs(p[0][0]), lr / std::sqrt(1.0 - decay), 1e-4 * lr);
  }
}

TEST(RmsProp, ConvergesOnQuadratic) {
  std::vector<Tensor> p{Tensor::vector({1.0})};
  RmsPropState s;
  int steps = 0;
  while (std::abs(p[0][0]) >= 1e-3 && steps < 500) {
    rmsprop_update(p, {Tensor::vector({2.0 * p[0][0]})}, s, 0.01);
    ++steps;
  }
  EXPECT_LT(std::abs(p[0][0]), 1e-3);
  EXPECT_LE(steps, 500);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k = 33;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.m = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

struct Fixture {
  Dataset data = synth_blobs(3, 40, 6, 0.1, 5);
  ModelConfig model = small_config(6, {8}, 3, ActivationKind::relu(), 7);
  TrainConfig train;

  Fixture() {
    train.m = 8;
    train.k = 4;
    train.total_steps = 25;
    train.seed = 3;
  }
};

bool same_params(const Model& a, const Model& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (!(a.params()[i] == b.params()[i])) return false;
  }
  return true;
}

TEST(Train, Deterministic) {
  Fixture f;
  const auto a = train(f.model, f.train, f.data);
  const auto b = train(f.model, f.train, f.data);
  EXPECT_TRUE(same_params(a.model, b.model));
  EXPECT_EQ(a.rng_digest, b.rng_digest);
  EXPECT_EQ(a.log.steps_csv(), b.log.steps_csv());
  EXPECT_EQ(a.log.steps.size(), 25u);
}

TEST(Train, KZeroMatchesInfiniteDelay) {
  Fixture f;
  auto plain = f.train;
  plain.k = 0;
  auto delayed = f.train;
  delayed.delay_steps = std::numeric_limits<std::uint64_t>::max();
  delayed.total_steps = std::numeric_limits<std::uint64_t>::max();
  // Run the delayed config by hand for the same number of steps.
  const auto reference = train(f.model, plain, f.data);
  Trainer t(Model::init(f.model), delayed);
  Trainer p(Model::init(f.model), plain);
  std::mt19937_64 rng(9);
  for (int s = 0; s < 25; ++s) {
    const auto idx = sample_indices(f.data.size(), 8, rng());
    const Dataset b = f.data.subset(idx);
    const auto rec_delayed = t.step(b.features, b.labels);
    const auto rec_plain = p.step(b.features, b.labels);
    EXPECT_TRUE(rec_delayed.record.eps_pixels.empty());
    EXPECT_EQ(rec_delayed.record.mixed_loss, rec_plain.record.mixed_loss);
  }
  EXPECT_TRUE(same_params(t.model(), p.model()));
  EXPECT_EQ(reference.log.steps.front().eps_pixels.size(), 0u);
}

TEST(Train, DelayUsesCleanStepsFirst) {
  Fixture f;
  f.train.delay_steps = 10;
  const auto r = train(f.model, f.train, f.data);
  for (const auto& s : r.log.steps) EXPECT_EQ(s.eps_pixels.size(), s.step < 10 ? 0u : 4u);
}

TEST(Train, ZeroBudgetAllAdversarialMatchesClean) {
  Fixture f;
  auto adv = f.train;
  adv.k = adv.m;
  adv.lambda = 1.0;
  adv.eps_schedule = EpsSchedule::fixed(0.0);
  auto clean = f.train;
  clean.k = 0;
  Trainer a(Model::init(f.model), adv);
  Trainer c(Model::init(f.model), clean);
  const std::vector<std::size_t> idx{0, 5, 9, 14, 33, 47, 80, 101};
  const Dataset b = f.data.subset(idx);
  (void)a.step(b.features, b.labels);
  (void)c.step(b.features, b.labels);
  for (std::size_t i = 0; i < a.model().params().size(); ++i) {
    const Tensor& pa = a.model().params()[i];
    const Tensor& pc = c.model().params()[i];
    for (std::size_t j = 0; j < pa.size(); ++j) EXPECT_NEAR(pa[j], pc[j], 1e-15);
  }
}

TEST(Train, AdversarialRowsComeFromThePreUpdateModel) {
  Fixture f;
  f.train.eps_schedule = EpsSchedule::fixed(8.0);
  f.train.attack.method = AttackMethod::fgsm;
  Trainer t(Model::init(f.model), f.train);
  const std::vector<std::size_t> warm{1, 2, 3, 4, 5, 6, 7, 8};
  const Dataset w = f.data.subset(warm);
  (void)t.step(w.features, w.labels);

  const Model before = t.model();
  const std::vector<std::size_t> idx{10, 20, 30, 40, 50, 60, 70, 80};
  const Dataset b = f.data.subset(idx);
  const auto result = t.step(b.features, b.labels);

  const std::vector<std::size_t> head{0, 1, 2, 3};
  const Tensor x = b.features.gather_rows(head);
  const std::vector<int> y(b.labels.begin(), b.labels.begin() + 4);
  const Tensor expected = fgsm(before, x, y, DataRange{}.pixels_to_data(8.0)).adv;
  EXPECT_EQ(result.adversarial_inputs, expected);
  EXPECT_FALSE(same_params(before, t.model()));
}

TEST(Train, BatchSizeMustBeM) {
  Fixture f;
  Trainer t(Model::init(f.model), f.train);
  EXPECT_THROW(t.step(Tensor({3, 6}), std::vector<int>{0, 1, 2}), std::invalid_argument);
}

TEST(Train, LearnsSeparableData) {
  const Dataset data = synth_blobs(4, 100, 10, 0.05, 2);
  TrainConfig tc;
  tc.k = 0;
  tc.total_steps = 300;
  tc.optimizer = OptimizerConfig::rmsprop(0.01);
  const auto r = train(small_config(10, {16}, 4, ActivationKind::relu(), 1), tc, data, &data);
  ASSERT_FALSE(r.log.evals.empty());
  EXPECT_GT(r.log.evals.back().clean_accuracy, 0.95);
}

TEST(Train, SgdAndLogs) {
  Fixture f;
  f.train.optimizer = OptimizerConfig::sgd();
  f.train.eval_every = 10;
  f.train.eval_samples = 30;
  std::size_t callbacks = 0;
  const auto r = train(f.model, f.train, f.data, &f.data, [&](const StepRecord&) { ++callbacks; });
  EXPECT_EQ(callbacks, 25u);
  EXPECT_GE(r.log.evals.size(), 2u);
  const std::string csv = r.log.steps_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}

}  // namespace
}  // namespace advx
