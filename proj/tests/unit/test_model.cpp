#include <gtest/gtest.h>

#include <random>

#include "advx/model.hpp"
#include "test_support.hpp"

namespace advx {
namespace {

using testing::small_config;

TEST(ModelConfig, RealizedWidthsScaleWithRho) {
  ModelConfig c;
  c.hidden_widths = {256, 128};
  EXPECT_EQ(c.realized_widths(), (std::vector<std::size_t>{256, 128}));
  c.rho = 0.5;
  EXPECT_EQ(c.realized_widths(), (std::vector<std::size_t>{128, 64}));
  c.rho = 0.001;
  EXPECT_EQ(c.realized_widths(), (std::vector<std::size_t>{1, 1}));
  c.rho = 1.0;
  c.extra_blocks = 2;
  EXPECT_EQ(c.realized_widths(), (std::vector<std::size_t>{256, 128, 128, 128}));
}

TEST(ModelConfig, ParamCountSmallExample) {
  EXPECT_EQ(param_count(small_config(2, {3}, 2)), 17u);
}

TEST(ModelConfig, ParamCountMatchesShapeEnumeration) {
  for (double rho : {0.5, 1.0, 2.0}) {
    ModelConfig c;
    c.rho = rho;
    std::size_t expected = 0;
    std::size_t in = c.input_dim;
    for (std::size_t base : c.hidden_widths) {
      const auto w = static_cast<std::size_t>(std::llround(rho * static_cast<double>(base)));
      expected += in * w + w;
      in = w;
    }
    expected += in * c.num_classes + c.num_classes;
    EXPECT_EQ(param_count(c), expected) << "rho=" << rho;
  }
  ModelConfig half, twice;
  half.rho = 0.5;
  twice.rho = 2.0;
  EXPECT_LT(param_count(half), param_count(ModelConfig{}));
  EXPECT_LT(param_count(ModelConfig{}), param_count(twice));
}

TEST(ModelConfig, ValidationNamesTheField) {
  auto expect_mentions = [](ModelConfig c, const std::string& field) {
    try {
      c.validate();
      ADD_FAILURE() << "no error for " << field;
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  ModelConfig c;
  c.input_dim = 0;
  expect_mentions(c, "input_dim");
  c = {};
  c.rho = 0.0;
  expect_mentions(c, "rho");
  c = {};
  c.dropout_rate = 1.0;
  expect_mentions(c, "dropout_rate");
  c = {};
  c.hidden_widths = {4, 0};
  expect_mentions(c, "hidden_widths");
}

TEST(Model, SameSeedSameParameters) {
  const auto cfg = small_config(8, {6, 5}, 3, ActivationKind::relu(), 42);
  const Model a = Model::init(cfg);
  const Model b = Model::init(cfg);
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i], b.params()[i]);
  auto other = cfg;
  other.seed = 43;
  EXPECT_NE(Model::init(other).params()[0], a.params()[0]);
}

TEST(Model, ZeroWeightsGiveUniformPrediction) {
  const auto cfg = small_config(5, {4}, 10);
  std::vector<Tensor> params;
  for (const auto& spec : param_specs(cfg)) params.emplace_back(spec.shape);
  const Model model(cfg, params);
  std::mt19937_64 rng(1);
  const Tensor logits = model.predict(testing::random_tensor({7, 5}, rng));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  const Tensor probs = softmax_rows(logits);
  for (double p : probs.data()) EXPECT_NEAR(p, 0.1, 1e-15);
}

TEST(Model, BatchingDoesNotChangeRows) {
  const Model model = Model::init(small_config(6, {9, 7}, 4, ActivationKind::tanh(), 3));
  std::mt19937_64 rng(2);
  const Tensor batch = testing::random_tensor({20, 6}, rng);
  const Tensor all = model.predict(batch);
  for (std::size_t r = 0; r < 20; ++r) {
    const std::vector<std::size_t> one{r};
    const Tensor single = model.predict(batch.gather_rows(one));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(single.at(0, j), all.at(r, j));
  }
}

TEST(Model, HandBuiltLayerMatchesManualProduct) {
  // 2 -> [2] -> 2, relu. Hidden: h = relu(x W0 + b0), logits = h W1 + b1.
  const auto cfg = small_config(2, {2}, 2);
  const std::vector<Tensor> params{
      Tensor::matrix(2, 2, {1.0, -1.0, 2.0, 0.5}), Tensor::vector({0.1, -0.2}),
      Tensor::matrix(2, 2, {3.0, 0.0, -1.0, 2.0}), Tensor::vector({0.5, 0.25})};
  const Model model(cfg, params);
  const Tensor out = model.predict(Tensor::matrix(1, 2, {1.0, 2.0}));
  // x W0 = [1*1 + 2*2, 1*-1 + 2*0.5] = [5, 0]; + b0 = [5.1, -0.2]; relu -> [5.1, 0]
  // h W1 = [15.3, 0]; + b1 = [15.8, 0.25]
  EXPECT_NEAR(out.at(0, 0), 15.8, 1e-12);
  EXPECT_NEAR(out.at(0, 1), 0.25, 1e-12);
}

TEST(Model, ShapeErrorsNameTheParameterOrLayer) {
  const auto cfg = small_config(3, {4}, 2);
  std::vector<Tensor> params;
  for (const auto& spec : param_specs(cfg)) params.emplace_back(spec.shape);
  params[2] = Tensor({5, 2});
  try {
    Model bad(cfg, params);
    ADD_FAILURE() << "shape mismatch accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("dense1.weight"), std::string::npos) << e.what();
  }
  const Model model = Model::init(cfg);
  try {
    (void)model.predict(Tensor({2, 5}));
    ADD_FAILURE() << "wrong input width accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
}

TEST(Model, DropoutOnlyInTraining) {
  auto cfg = small_config(6, {30}, 3, ActivationKind::relu(), 5);
  cfg.dropout_rate = 0.5;
  const Model model = Model::init(cfg);
  std::mt19937_64 rng(9);
  const Tensor x = testing::random_tensor({4, 6}, rng);
  Tape eval_tape;
  const Tensor eval = eval_tape.value(
      model.forward(eval_tape, eval_tape.leaf(x), model.bind_params(eval_tape, false)));
  EXPECT_EQ(eval, model.predict(x));
  Tape train_tape;
  const Tensor trained =
      train_tape.value(model.forward(train_tape, train_tape.leaf(x),
                                     model.bind_params(train_tape, false), true, &rng));
  EXPECT_NE(trained, eval);
  Tape no_rng;
  EXPECT_THROW(model.forward(no_rng, no_rng.leaf(x), model.bind_params(no_rng, false), true),
               std::invalid_argument);
}

TEST(Argmax, TiesGoToLowestIndex) {
  const Tensor logits = Tensor::matrix(3, 3, {1, 1, 0, 0, 2, 2, 3, 1, 3});
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{0, 1, 0}));
  const std::vector<double> row{0.5, 0.9, 0.9, 0.1};
  EXPECT_TRUE(in_top_k(row, 1, 1));
  EXPECT_FALSE(in_top_k(row, 2, 1));
  EXPECT_TRUE(in_top_k(row, 2, 2));
  EXPECT_FALSE(in_top_k(row, 3, 3));
  EXPECT_TRUE(in_top_k(row, 3, 4));
}

}  // namespace
}  // namespace advx
