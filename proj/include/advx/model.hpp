#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advx/autodiff.hpp"
#include "advx/tensor.hpp"

namespace advx {

// Feed-forward classifier description. Hidden widths are base widths; the
// realized width of each hidden layer is max(1, round(rho * base)).
struct ModelConfig {
  std::size_t input_dim = 784;
  std::size_t num_classes = 10;
  std::vector<std::size_t> hidden_widths{512, 256};
  double rho = 1.0;
  // Additional hidden layers of the last realized width.
  std::size_t extra_blocks = 0;
  ActivationKind activation = ActivationKind::relu();
  double dropout_rate = 0.0;
  std::uint64_t seed = 1;

  std::vector<std::size_t> realized_widths() const;
  // Throws std::invalid_argument with the offending field name.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class LayerKind { dense, activation, dropout };

struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t param_index = 0;  // dense: index of its weight in the parameter list
};

struct ParamSpec {
  std::string name;
  Shape shape;
};

// Layer sequence derived from the config: dense, activation, [dropout], ...,
// dense (logits).
std::vector<LayerSpec> layer_sequence(const ModelConfig& config);
std::vector<ParamSpec> param_specs(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

class Model {
 public:
  // Glorot-uniform weights, zero biases, deterministic in config.seed.
  static Model init(const ModelConfig& config);
  // Adopts existing parameters; shapes must match the config.
  Model(ModelConfig config, std::vector<Tensor> params, std::uint64_t train_steps_done = 0);

  const ModelConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::vector<Tensor>& mutable_params() { return params_; }
  std::uint64_t train_steps_done() const { return train_steps_done_; }
  void set_train_steps_done(std::uint64_t n) { train_steps_done_ = n; }

  // Pushes every parameter as a leaf on the tape.
  std::vector<Var> bind_params(Tape& tape, bool requires_grad) const;

  // Records the network on `tape` and returns the logits node. Dropout is
  // active only when `training` is set, which requires `rng`.
  Var forward(Tape& tape, Var input, const std::vector<Var>& params, bool training = false,
              std::mt19937_64* rng = nullptr) const;

  // Deterministic logits [batch, num_classes], dropout off.
  Tensor predict(const Tensor& batch) const;

 private:
  ModelConfig config_;
  std::vector<Tensor> params_;
  std::uint64_t train_steps_done_ = 0;
};

// Index of the largest entry per row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);
// True when `label` is among the top-k entries of the row. Ties rank the lower
// index first, matching argmax_rows.
bool in_top_k(std::span<const double> row, int label, std::size_t k);

}  // namespace advx
