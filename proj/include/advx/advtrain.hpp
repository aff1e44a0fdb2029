#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advx/attacks.hpp"
#include "advx/data_io.hpp"
#include "advx/model.hpp"

namespace advx {

// Per-example adversarial budget during training, in pixel units.
struct EpsSchedule {
  enum class Kind { fixed, truncnormal };
  Kind kind = Kind::truncnormal;
  double value = 8.0;   // fixed
  double sigma = 8.0;   // truncnormal
  double bound = 16.0;  // truncnormal

  static EpsSchedule fixed(double pixels) { return {Kind::fixed, pixels, 0.0, 0.0}; }
  static EpsSchedule truncnormal(double sigma, double bound) {
    return {Kind::truncnormal, 0.0, sigma, bound};
  }
  // "fixed:<pixels>" or "truncnormal:<sigma>:<bound>"
  static EpsSchedule parse(const std::string& text);
  std::string to_string() const;
  void validate() const;

  friend bool operator==(const EpsSchedule&, const EpsSchedule&) = default;
};

// |z| for z ~ Normal(0, sigma) redrawn until |z| <= bound; or the fixed value.
double sample_epsilon(const EpsSchedule& schedule, std::mt19937_64& rng);

struct OptimizerConfig {
  enum class Kind { rmsprop, sgd };
  Kind kind = Kind::rmsprop;
  double lr = 0.001;
  double decay = 0.9;
  double epsilon = 1e-8;

  static OptimizerConfig rmsprop(double lr, double decay = 0.9, double epsilon = 1e-8) {
    return {Kind::rmsprop, lr, decay, epsilon};
  }
  static OptimizerConfig sgd(double lr = 0.01) { return {Kind::sgd, lr, 0.0, 0.0}; }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct RmsPropState {
  std::vector<Tensor> mean_square;
};

// s <- decay*s + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(s) + eps)
void rmsprop_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    RmsPropState& state, double lr, double decay = 0.9, double epsilon = 1e-8);
void sgd_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr);

struct TrainConfig {
  std::size_t m = 32;
  std::size_t k = 16;
  double lambda = 0.3;
  // Method and iteration settings for generating training examples; its
  // epsilon is replaced by draws from eps_schedule.
  AttackSpec attack{AttackMethod::step_ll, 0.0, std::nullopt, std::nullopt, 0};
  EpsSchedule eps_schedule = EpsSchedule::truncnormal(8.0, 16.0);
  std::uint64_t delay_steps = 0;
  OptimizerConfig optimizer;
  std::uint64_t total_steps = 1000;
  double label_smoothing = 0.1;
  // Coupled L2 on weight matrices: adds (weight_decay/2)*sum(W^2) to the loss.
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  // Validation every `eval_every` steps (0: only at the end).
  std::uint64_t eval_every = 0;
  std::size_t eval_samples = 1000;
  double eval_epsilon_pixels = 16.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// (sum clean + lambda * sum adv) / ((m - k) + lambda * k)
double mixed_loss(std::span<const double> clean_losses, std::span<const double> adv_losses,
                  std::size_t m, std::size_t k, double lambda);

struct StepRecord {
  std::uint64_t step = 0;
  double mixed_loss = 0.0;
  double clean_loss = 0.0;  // mean over clean examples (0 when none)
  double adv_loss = 0.0;    // mean over adversarial examples (0 when none)
  std::vector<double> eps_pixels;
};

struct EvalRecord {
  std::uint64_t step = 0;
  double clean_accuracy = 0.0;
  double adv_accuracy = 0.0;
  std::size_t n = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  std::string steps_csv() const;
  std::string evals_csv() const;
};

struct StepResult {
  StepRecord record;
  // Rows of the mixed minibatch that were replaced, as fed to the update.
  Tensor adversarial_inputs;
};

// Optimizer and sampling state for one training run.
class Trainer {
 public:
  Trainer(Model model, TrainConfig config, DataRange range = {});

  // One step of mixed-minibatch training on exactly m examples.
  StepResult step(const Tensor& batch_x, std::span<const int> batch_y);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps_done() const { return step_; }
  std::mt19937_64& rng() { return rng_; }
  // SHA-256 of the serialized generator state.
  std::string rng_digest() const;

 private:
  Model model_;
  TrainConfig config_;
  DataRange range_;
  RmsPropState rms_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
};

struct TrainResult {
  Model model;
  TrainLog log;
  std::string rng_digest;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Full run: epoch-wise shuffled minibatches of m drawn from `train_set` for
// total_steps steps. Validation on `validation` (if non-null).
TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                  const Dataset& train_set, const Dataset* validation = nullptr,
                  const StepCallback& on_step = {});

// Clean and adversarial top-1 accuracy on up to `samples` examples.
EvalRecord quick_eval(const Model& model, const Dataset& data, const AttackSpec& attack,
                      std::size_t samples);

}  // namespace advx
