#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "advx/evaluate.hpp"
#include "test_support.hpp"

namespace advx {
namespace {

using testing::small_config;

class EvaluateTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_set_ = new Dataset(synth_blobs(4, 150, 12, 0.12, 21));
    test_set_ = new Dataset(synth_blobs(4, 150, 12, 0.12, 21).head(300));
    TrainConfig tc;
    tc.k = 0;
    tc.total_steps = 300;
    tc.optimizer = OptimizerConfig::rmsprop(0.01);
    a_ = new Model(train(small_config(12, {24}, 4, ActivationKind::relu(), 1), tc, *train_set_).model);
    b_ = new Model(train(small_config(12, {24}, 4, ActivationKind::relu(), 2), tc, *train_set_).model);
  }
  static void TearDownTestSuite() {
    delete a_;
    delete b_;
    delete train_set_;
    delete test_set_;
  }

  static Dataset* train_set_;
  static Dataset* test_set_;
  static Model* a_;
  static Model* b_;
};

Dataset* EvaluateTest::train_set_ = nullptr;
Dataset* EvaluateTest::test_set_ = nullptr;
Model* EvaluateTest::a_ = nullptr;
Model* EvaluateTest::b_ = nullptr;

AttackSpec spec(AttackMethod m, double pixels) {
  return {m, DataRange{}.pixels_to_data(pixels), std::nullopt, std::nullopt, 0};
}

TEST(Accuracy, ZeroModelIsChanceOnBalancedData) {
  const auto cfg = small_config(8, {5}, 10);
  std::vector<Tensor> params;
  for (const auto& s : param_specs(cfg)) params.emplace_back(s.shape);
  const Model zero(cfg, params);
  const Dataset data = synth_blobs(10, 100, 8, 0.2, 3);
  const double acc = accuracy(zero, data, std::nullopt).accuracy;
  const double sigma = std::sqrt(0.1 * 0.9 / 1000.0);
  EXPECT_LE(std::abs(acc - 0.1), 3.0 * sigma);
}

TEST_F(EvaluateTest, TrainedModelsAreAccurate) {
  EXPECT_GT(accuracy(*a_, *test_set_, std::nullopt).accuracy, 0.9);
  EXPECT_GT(accuracy(*b_, *test_set_, std::nullopt).accuracy, 0.9);
}

TEST_F(EvaluateTest, ZeroBudgetEqualsCleanExactly) {
  const AccuracyRecord clean = accuracy(*a_, *test_set_, std::nullopt);
  for (AttackMethod m : all_attack_methods()) {
    const AccuracyRecord r = accuracy(*a_, *test_set_, spec(m, 0.0));
    EXPECT_EQ(r.accuracy, clean.accuracy) << to_string(m);
    EXPECT_EQ(r.n, clean.n);
  }
}

TEST_F(EvaluateTest, TopKOfAllClassesIsOne) {
  EXPECT_EQ(accuracy(*a_, *test_set_, spec(AttackMethod::fgsm, 64.0), 4).accuracy, 1.0);
  EXPECT_THROW(accuracy(*a_, *test_set_, std::nullopt, 0), std::invalid_argument);
}

TEST_F(EvaluateTest, LargerBudgetsHurtMore) {
  double previous = 1.0;
  int inversions = 0;
  for (double eps : {0.0, 8.0, 32.0, 64.0}) {
    const double acc = accuracy(*a_, *test_set_, spec(AttackMethod::fgsm, eps)).accuracy;
    if (acc > previous) ++inversions;
    previous = acc;
  }
  EXPECT_LE(inversions, 1);
}

TEST_F(EvaluateTest, LeakCountZeroAtZeroBudget) {
  const LeakRecord r = label_leak_count(*a_, *test_set_, 0.0);
  EXPECT_EQ(r.count, 0u);
  EXPECT_TRUE(r.leaked_ids.empty());
}

TEST_F(EvaluateTest, LeakPredicateIsDisjointUnderRoleSwap) {
  for (double eps : {0.05, 0.15, 0.3}) {
    const LeakRecord ab = label_leak_count(*a_, *test_set_, eps, AttackMethod::fgsm,
                                           AttackMethod::fast_entropy);
    const LeakRecord ba = label_leak_count(*a_, *test_set_, eps, AttackMethod::fast_entropy,
                                           AttackMethod::fgsm);
    std::vector<std::size_t> both;
    std::set_intersection(ab.leaked_ids.begin(), ab.leaked_ids.end(), ba.leaked_ids.begin(),
                          ba.leaked_ids.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty());
    EXPECT_EQ(ab.count, ab.leaked_ids.size());
    EXPECT_LE(ab.count, ab.clean_correct);
  }
}

TEST_F(EvaluateTest, LeakNeedsOneStepMethods) {
  EXPECT_THROW(label_leak_count(*a_, *test_set_, 0.1, AttackMethod::iter_basic),
               std::invalid_argument);
}

TEST_F(EvaluateTest, SelfTransferIsOne) {
  const TransferCell c = transfer_rate(*a_, *a_, *test_set_, spec(AttackMethod::fgsm, 48.0));
  ASSERT_TRUE(c.rate.has_value());
  EXPECT_GT(c.denominator, 0u);
  EXPECT_EQ(*c.rate, 1.0);
  EXPECT_EQ(c.numerator, c.denominator);
}

TEST_F(EvaluateTest, EmptyDenominatorIsUndefined) {
  const TransferCell c = transfer_rate(*a_, *b_, *test_set_, spec(AttackMethod::fgsm, 0.0));
  EXPECT_EQ(c.denominator, 0u);
  EXPECT_FALSE(c.rate.has_value());
}

TEST_F(EvaluateTest, ErrorRateAtZeroBudgetIsCleanError) {
  const double clean = accuracy(*b_, *test_set_, std::nullopt).accuracy;
  const TransferCell c =
      transferred_error_rate(*a_, *b_, *test_set_, spec(AttackMethod::iter_ll, 0.0));
  ASSERT_TRUE(c.rate.has_value());
  EXPECT_NEAR(*c.rate, 1.0 - clean, 1e-15);
  EXPECT_EQ(c.denominator, test_set_->size());
}

TEST_F(EvaluateTest, RatesComeFromOneCachedBatch) {
  const AttackSpec s = spec(AttackMethod::fgsm, 32.0);
  const AdversarialSet adv = make_adversarial_set(*a_, *test_set_, s);
  EXPECT_EQ(adv.checksum, make_adversarial_set(*a_, *test_set_, s).checksum);
  EXPECT_EQ(transfer_rate(*a_, *b_, *test_set_, adv), transfer_rate(*a_, *b_, *test_set_, s));
  EXPECT_EQ(transferred_error_rate(*b_, *test_set_, adv),
            transferred_error_rate(*a_, *b_, *test_set_, s));

  const auto matrices = transfer_matrices({"a", a_}, {{"a", a_}, {"b", b_}}, *test_set_, s);
  ASSERT_EQ(matrices.size(), 2u);
  const TransferCell* self = matrices[0].find("a", "a");
  ASSERT_NE(self, nullptr);
  EXPECT_EQ(self->rate, 1.0);
  for (const auto& m : matrices) {
    for (const auto& c : m.cells) {
      if (c.rate) EXPECT_TRUE(*c.rate >= 0.0 && *c.rate <= 1.0);
    }
  }
}

TEST_F(EvaluateTest, AccuracyRatio) {
  const DerivedMetric r0 = accuracy_ratio(*a_, *test_set_, spec(AttackMethod::step_ll, 0.0));
  ASSERT_TRUE(r0.value.has_value());
  EXPECT_EQ(*r0.value, 1.0);
  const DerivedMetric r = accuracy_ratio(*a_, *test_set_, spec(AttackMethod::fgsm, 32.0));
  ASSERT_TRUE(r.value.has_value());
  EXPECT_LT(*r.value, 1.0);
}

TEST(AccuracyRatio, UndefinedWhenCleanAccuracyIsZero) {
  // Constant model that always answers class 0, evaluated on class-1 examples only.
  const auto cfg = small_config(3, {}, 2);
  const Model always0(cfg, {Tensor({3, 2}), Tensor::vector({1.0, 0.0})});
  Dataset d = synth_blobs(2, 10, 3, 0.1, 1);
  std::vector<std::size_t> ones;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] == 1) ones.push_back(i);
  }
  const DerivedMetric r = accuracy_ratio(always0, d.subset(ones), {AttackMethod::fgsm, 0.1});
  EXPECT_FALSE(r.value.has_value());
}

TEST_F(EvaluateTest, AttackTableShape) {
  const std::vector<GridPoint> grid{{AttackMethod::fgsm, 2.0},
                                    {AttackMethod::fgsm, 16.0},
                                    {AttackMethod::iter_ll, 16.0}};
  const EvalReport r = attack_table(*a_, *test_set_, grid, "a");
  EXPECT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.derived.size(), 3u);
  ASSERT_NE(r.find("a", "clean", 0.0), nullptr);
  ASSERT_NE(r.find("a", "iter_ll", 16.0), nullptr);
}

TEST_F(EvaluateTest, SweepRowCounts) {
  TrainConfig recipe;
  recipe.m = 16;
  recipe.k = 8;
  recipe.total_steps = 20;
  TrainConfig clean = recipe;
  clean.k = 0;
  const std::vector<GridPoint> grid{{AttackMethod::step_ll, 16.0}, {AttackMethod::fgsm, 8.0}};
  const SweepData data{train_set_, test_set_};
  const ModelConfig base = small_config(12, {8}, 4);

  const EvalReport cap = capacity_sweep(base, {0.5, 1.0, 2.0}, clean, recipe, grid, data);
  EXPECT_EQ(cap.records.size(), 3u * 2u * grid.size());
  const EvalReport one = capacity_sweep(base, {1.0}, clean, recipe, grid, data);
  EXPECT_EQ(one.records.size(), 2u * grid.size());

  const EvalReport kf = kfrac_sweep(base, {0, 16}, recipe, grid, data);
  EXPECT_EQ(kf.records.size(), 2u * grid.size());
  ASSERT_NE(kf.find("k=0", "step_ll", 16.0), nullptr);
  ASSERT_NE(kf.find("k=16", "step_ll", 16.0), nullptr);

  const EvalReport act = activation_comparison(base, {ActivationKind::relu()}, recipe, grid, data);
  EXPECT_EQ(act.records.size(), grid.size());
  EXPECT_THROW(capacity_sweep(base, {}, clean, recipe, grid, data), std::invalid_argument);
  EXPECT_THROW(kfrac_sweep(base, {0}, recipe, grid, SweepData{}), std::invalid_argument);
}

}  // namespace
}  // namespace advx
