#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "advx/attacks.hpp"
#include "test_support.hpp"

namespace advx {
namespace {

using testing::random_labels;
using testing::random_tensor;
using testing::small_config;

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double linf(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Two-class model whose logit difference is w.x, so its cross-entropy for
// class 1 is softplus(-w.x).
Model logistic_model(double w0, double w1) {
  ModelConfig cfg = small_config(2, {}, 2);
  return Model(cfg, {Tensor::matrix(2, 2, {0.0, w0, 0.0, w1}), Tensor::vector({0.0, 0.0})});
}

TEST(ClipBox, Examples) {
  const Tensor c = Tensor::vector({0.5});
  EXPECT_EQ(clip_box(c, c, 0.1, 0.0, 1.0), c);
  EXPECT_NEAR(clip_box(Tensor::vector({0.9}), c, 0.1, 0.0, 1.0)[0], 0.6, 1e-15);
  EXPECT_EQ(clip_box(Tensor::vector({1.2}), Tensor::vector({0.95}), 0.1, 0.0, 1.0)[0], 1.0);
  EXPECT_THROW(clip_box(c, c, 0.1, 1.0, 0.0), std::invalid_argument);
}

TEST(IterationCount, RoundsUpWithFloorOfOne) {
  EXPECT_EQ(iteration_count(16.0), 20);
  EXPECT_EQ(iteration_count(8.0), 10);
  EXPECT_EQ(iteration_count(2.0), 3);
  EXPECT_EQ(iteration_count(0.0), 1);
  EXPECT_EQ(iteration_count(0.3), 1);
  EXPECT_EQ(iteration_count(100.0), 104);
}

TEST(Sign, ZeroMapsToZero) {
  EXPECT_EQ(sign(0.0), 0.0);
  EXPECT_EQ(sign(-0.0), 0.0);
  EXPECT_EQ(sign(1e-300), 1.0);
  EXPECT_EQ(sign(-3.0), -1.0);
}

TEST(MethodNames, RoundTrip) {
  EXPECT_EQ(all_attack_methods().size(), 11u);
  for (AttackMethod m : all_attack_methods()) EXPECT_EQ(parse_attack_method(to_string(m)), m);
  EXPECT_THROW(parse_attack_method("pgd"), std::invalid_argument);
}

TEST(SelectTarget, LeastLikely) {
  const Model model = logistic_model(1.0, 0.0);
  // Logits [0, x0]: with x0 > 0 class 0 is least likely; with x0 = 0 the tie picks 0.
  std::mt19937_64 rng(1);
  EXPECT_EQ(select_target(model, Tensor::matrix(2, 2, {2.0, 0.0, -2.0, 0.0}),
                          TargetPolicy::least_likely, rng),
            (std::vector<int>{0, 1}));
  EXPECT_EQ(select_target(model, Tensor::matrix(1, 2, {0.0, 0.0}), TargetPolicy::least_likely,
                          rng),
            (std::vector<int>{0}));
}

TEST(SelectTarget, LeastLikelyFromThreeLogits) {
  // Identity-weight model on a 3-dimensional input: logits equal the input.
  ModelConfig cfg = small_config(3, {}, 3);
  const Model model(cfg, {Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), Tensor({3})});
  std::mt19937_64 rng(1);
  EXPECT_EQ(select_target(model, Tensor::matrix(1, 3, {5, 1, -3}), TargetPolicy::least_likely,
                          rng)[0],
            2);
  EXPECT_EQ(select_target(model, Tensor::matrix(1, 3, {0, 0, 0}), TargetPolicy::least_likely,
                          rng)[0],
            0);
}

TEST(SelectTarget, RandomNeverPicksArgmax) {
  const Model model = Model::init(small_config(4, {6}, 5, ActivationKind::relu(), 3));
  std::mt19937_64 data_rng(4);
  const Tensor x = random_tensor({100, 4}, data_rng);
  const auto predicted = argmax_rows(model.predict(x));
  std::mt19937_64 rng(11);
  for (int draw = 0; draw < 100; ++draw) {
    const auto t = select_target(model, x, TargetPolicy::random, rng);
    for (std::size_t i = 0; i < t.size(); ++i) {
      ASSERT_NE(t[i], predicted[i]);
    }
  }
  std::mt19937_64 a(5), b(5);
  EXPECT_EQ(select_target(model, x, TargetPolicy::random, a),
            select_target(model, x, TargetPolicy::random, b));
}

TEST(Fgsm, LogisticExample) {
  const Model model = logistic_model(1.0, -2.0);
  const DataRange wide{-1.0, 1.0};
  const std::vector<int> y{1};
  const auto batch = fgsm(model, Tensor::matrix(1, 2, {0.0, 0.0}), y, 0.25, wide);
  EXPECT_EQ(batch.adv.values(), (std::vector<double>{-0.25, 0.25}));
  // In [0, 1] the negative component is clipped back to the boundary.
  const auto clipped = fgsm(model, Tensor::matrix(1, 2, {0.0, 0.0}), y, 0.25);
  EXPECT_EQ(clipped.adv.values(), (std::vector<double>{0.0, 0.25}));
}

TEST(Fgsm, LogisticGradientMatchesAnalytic) {
  const Model model = logistic_model(1.0, -2.0);
  const std::vector<int> y{1};
  const Tensor g = input_gradient(model, Tensor::matrix(1, 2, {0.0, 0.0}), y);
  // d/dx softplus(-w.x) = -w * sigmoid(-w.x) = -w / 2 at the origin.
  EXPECT_NEAR(g[0], -0.5, 1e-15);
  EXPECT_NEAR(g[1], 1.0, 1e-15);
}

TEST(Attacks, ZeroBudgetIsIdentity) {
  const Model model = Model::init(small_config(5, {7}, 3, ActivationKind::tanh(), 2));
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({6, 5}, rng, 0.0, 1.0);
  const auto y = random_labels(6, 3, rng);
  for (AttackMethod m : all_attack_methods()) {
    AttackSpec spec;
    spec.method = m;
    spec.epsilon = 0.0;
    EXPECT_TRUE(bitwise_equal(generate(model, x, y, spec).adv, x)) << to_string(m);
  }
}

TEST(Attacks, CollapseIdentitiesAreBitwise) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = small_config(8, {10, 6}, 4, ActivationKind::relu(), 100 + trial);
    const Model model = Model::init(cfg);
    const Tensor x = random_tensor({16, 8}, rng, 0.0, 1.0);
    const auto y = random_labels(16, 4, rng);
    const double eps = std::uniform_real_distribution<double>(0.01, 0.3)(rng);
    EXPECT_TRUE(bitwise_equal(iter_basic(model, x, y, eps, eps, 1).adv, fgsm(model, x, y, eps).adv));
    std::mt19937_64 unused(0);
    const auto ll = select_target(model, x, TargetPolicy::least_likely, unused);
    EXPECT_TRUE(
        bitwise_equal(iter_ll(model, x, eps, eps, 1).adv, one_step_target(model, x, ll, eps).adv));
    AttackSpec step_ll{AttackMethod::step_ll, eps, std::nullopt, std::nullopt, 0};
    EXPECT_TRUE(bitwise_equal(generate(model, x, y, step_ll).adv,
                              one_step_target(model, x, ll, eps).adv));
  }
}

TEST(Attacks, FgsmPredEqualsFgsmWhenPredictionIsCorrect) {
  const Model model = Model::init(small_config(6, {8}, 3, ActivationKind::relu(), 8));
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({40, 6}, rng, 0.0, 1.0);
  const auto predicted = argmax_rows(model.predict(x));
  EXPECT_TRUE(bitwise_equal(fast_variant(model, x, predicted, 0.1, AttackMethod::fgsm_pred).adv,
                            fgsm(model, x, predicted, 0.1).adv));
}

TEST(Attacks, FastGradNormsEqualBudget) {
  const Model model = Model::init(small_config(6, {8}, 3, ActivationKind::tanh(), 9));
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({10, 6}, rng, 0.4, 0.6);
  const auto y = random_labels(10, 3, rng);
  const DataRange wide{-100.0, 100.0};  // keeps the range clip inactive
  const double eps = 0.07;
  const Tensor l2 = fast_variant(model, x, y, eps, AttackMethod::fast_grad_l2, wide).adv;
  const Tensor li = fast_variant(model, x, y, eps, AttackMethod::fast_grad_linf, wide).adv;
  for (std::size_t r = 0; r < 10; ++r) {
    double sq = 0.0, mx = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      sq += std::pow(l2.at(r, j) - x.at(r, j), 2);
      mx = std::max(mx, std::abs(li.at(r, j) - x.at(r, j)));
    }
    EXPECT_NEAR(std::sqrt(sq), eps, 1e-12);
    EXPECT_NEAR(mx, eps, 1e-12);
  }
}

TEST(Attacks, ZeroGradientLeavesInputUnchanged) {
  ModelConfig cfg = small_config(3, {}, 2);
  const Model flat(cfg, {Tensor({3, 2}), Tensor({2})});
  const Tensor x = Tensor::matrix(1, 3, {0.2, 0.4, 0.6});
  const std::vector<int> y{1};
  for (AttackMethod m : {AttackMethod::fast_grad_l2, AttackMethod::fast_grad_linf,
                         AttackMethod::fgsm, AttackMethod::fast_entropy}) {
    AttackSpec spec{m, 0.1, std::nullopt, std::nullopt, 0};
    EXPECT_TRUE(bitwise_equal(generate(flat, x, y, spec).adv, x)) << to_string(m);
  }
}

TEST(Noise, SignComponentsSitOnTheBudget) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({50, 20}, rng, 0.3, 0.7);
  const Tensor adv = noise_baseline(x, 0.1, AttackMethod::noise_sign, rng).adv;
  std::size_t up = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = adv[i] - x[i];
    EXPECT_NEAR(std::abs(d), 0.1, 1e-15);
    if (d > 0) ++up;
  }
  EXPECT_NEAR(static_cast<double>(up) / 1000.0, 0.5, 0.06);
}

TEST(Noise, TruncatedNormalStandardDeviation) {
  // Per component: Normal(0, eps/2) restricted to [-eps, eps], i.e. +-2 sigma.
  const double eps = 1.0, s = 0.5, a = 2.0;
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  const double mass = std::erf(a / std::sqrt(2.0));
  const double analytic = s * std::sqrt(1.0 - 2.0 * a * phi / mass);

  std::mt19937_64 rng(12);
  const Tensor x({1000, 1000}, 0.0);
  const Tensor adv = noise_baseline(x, eps, AttackMethod::noise_truncnormal, rng, {-5.0, 5.0}).adv;
  double sum = 0.0, sq = 0.0;
  for (double v : adv.data()) {
    ASSERT_LE(std::abs(v), eps);
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(adv.size());
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd / analytic, 1.0, 0.02);
}

TEST(Attacks, StepLargerThanBudgetIsRejected) {
  const Model model = Model::init(small_config(3, {4}, 2));
  const Tensor x({2, 3}, 0.5);
  const std::vector<int> y{0, 1};
  EXPECT_THROW(iter_basic(model, x, y, 0.01, 0.02, 3), std::invalid_argument);
  EXPECT_THROW(fgsm(model, x, y, -0.1), std::invalid_argument);
  const std::vector<int> bad{0, 2};
  EXPECT_THROW(fgsm(model, x, bad, 0.1), std::invalid_argument);
}

TEST(Attacks, DeterministicForFixedSeed) {
  const Model model = Model::init(small_config(6, {8}, 4, ActivationKind::relu(), 1));
  std::mt19937_64 rng(30);
  const Tensor x = random_tensor({12, 6}, rng, 0.0, 1.0);
  const auto y = random_labels(12, 4, rng);
  for (AttackMethod m : all_attack_methods()) {
    AttackSpec spec{m, 0.05, std::nullopt, std::nullopt, 77};
    EXPECT_TRUE(bitwise_equal(generate(model, x, y, spec).adv, generate(model, x, y, spec).adv))
        << to_string(m);
  }
}

TEST(Attacks, TargetedStepRaisesTargetScore) {
  const Model model = Model::init(small_config(10, {16}, 4, ActivationKind::tanh(), 6));
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({200, 10}, rng, 0.3, 0.7);
  std::mt19937_64 unused(0);
  const auto target = select_target(model, x, TargetPolicy::least_likely, unused);
  const Tensor before = softmax_rows(model.predict(x));
  const Tensor after = softmax_rows(model.predict(one_step_target(model, x, target, 0.01).adv));
  std::size_t raised = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    if (after.at(i, target[i]) > before.at(i, target[i])) ++raised;
  }
  EXPECT_EQ(raised, 200u);
}

// Budget and range containment over randomized cases and every method.
TEST(AttackProperties, BudgetAndRangeHold) {
  std::mt19937_64 rng(2718);
  const auto& methods = all_attack_methods();
  const ActivationKind acts[] = {ActivationKind::relu(), ActivationKind::tanh(),
                                 ActivationKind::relu6(), ActivationKind::elu(),
                                 ActivationKind::relu_decay(0.1)};
  std::uniform_int_distribution<std::size_t> dim(2, 12), width(2, 10), classes(2, 6);
  std::uniform_real_distribution<double> eps_dist(0.0, 0.4);
  for (int c = 0; c < 1000; ++c) {
    const auto cfg = small_config(dim(rng), {width(rng)}, classes(rng), acts[c % 5], c + 1);
    const Model model = Model::init(cfg);
    const Tensor x = random_tensor({3, cfg.input_dim}, rng, 0.0, 1.0);
    const auto y = random_labels(3, cfg.num_classes, rng);
    const AttackMethod m = methods[static_cast<std::size_t>(c) % methods.size()];
    const double eps = eps_dist(rng);
    AttackSpec spec{m, eps, std::nullopt, std::nullopt, static_cast<std::uint64_t>(c)};
    const Tensor adv = generate(model, x, y, spec).adv;
    ASSERT_LE(linf(adv, x), eps + 1e-12) << to_string(m) << " eps=" << eps;
    for (double v : adv.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0) << to_string(m);
  }
}

TEST(AttackProperties, PerExampleBudgets) {
  const Model model = Model::init(small_config(5, {6}, 3, ActivationKind::relu(), 4));
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({4, 5}, rng, 0.2, 0.8);
  const auto y = random_labels(4, 3, rng);
  const std::vector<double> eps{0.0, 0.01, 0.05, 0.1};
  for (AttackMethod m : all_attack_methods()) {
    AttackSpec spec{m, 0.0, std::nullopt, std::nullopt, 3};
    const Tensor adv = generate(model, x, y, spec, eps).adv;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t j = 0; j < 5; ++j) {
        ASSERT_LE(std::abs(adv.at(r, j) - x.at(r, j)), eps[r] + 1e-12) << to_string(m);
      }
    }
  }
}

}  // namespace
}  // namespace advx
