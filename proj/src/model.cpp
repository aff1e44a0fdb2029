#include "advx/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advx {

std::vector<std::size_t> ModelConfig::realized_widths() const {
  std::vector<std::size_t> widths;
  widths.reserve(hidden_widths.size() + extra_blocks);
  for (std::size_t w : hidden_widths) {
    const double scaled = std::round(rho * static_cast<double>(w));
    widths.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(scaled)));
  }
  const std::size_t last = widths.empty() ? input_dim : widths.back();
  for (std::size_t i = 0; i < extra_blocks; ++i) widths.push_back(last);
  return widths;
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model.input_dim must be positive");
  if (num_classes == 0) throw std::invalid_argument("model.num_classes must be positive");
  for (std::size_t w : hidden_widths) {
    if (w == 0) throw std::invalid_argument("model.hidden_widths entries must be positive");
  }
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw std::invalid_argument("model.rho must be a positive finite number");
  }
  if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0) {
    throw std::invalid_argument("model.dropout_rate must lie in [0, 1)");
  }
  if (activation.tag == ActivationTag::relu_decay && !(activation.beta > 0.0)) {
    throw std::invalid_argument("model.activation relu_decay needs beta > 0");
  }
}

std::vector<LayerSpec> layer_sequence(const ModelConfig& config) {
  std::vector<LayerSpec> layers;
  std::size_t in = config.input_dim;
  std::size_t param = 0;
  for (std::size_t w : config.realized_widths()) {
    layers.push_back({LayerKind::dense, in, w, param});
    layers.push_back({LayerKind::activation, w, w, 0});
    if (config.dropout_rate > 0.0) layers.push_back({LayerKind::dropout, w, w, 0});
    param += 2;
    in = w;
  }
  layers.push_back({LayerKind::dense, in, config.num_classes, param});
  return layers;
}

std::vector<ParamSpec> param_specs(const ModelConfig& config) {
  std::vector<ParamSpec> specs;
  std::size_t dense = 0;
  for (const LayerSpec& layer : layer_sequence(config)) {
    if (layer.kind != LayerKind::dense) continue;
    const std::string prefix = "dense" + std::to_string(dense++);
    specs.push_back({prefix + ".weight", {layer.in, layer.out}});
    specs.push_back({prefix + ".bias", {layer.out}});
  }
  return specs;
}

std::size_t param_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const ParamSpec& p : param_specs(config)) total += shape_size(p.shape);
  return total;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::vector<Tensor> params;
  for (const ParamSpec& spec : param_specs(config)) {
    Tensor t(spec.shape);
    if (spec.shape.size() == 2) {
      const double bound =
          std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& v : t.data()) v = dist(rng);
    }
    params.push_back(std::move(t));
  }
  return Model(config, std::move(params), 0);
}

Model::Model(ModelConfig config, std::vector<Tensor> params, std::uint64_t train_steps_done)
    : config_(std::move(config)),
      params_(std::move(params)),
      train_steps_done_(train_steps_done) {
  config_.validate();
  const auto specs = param_specs(config_);
  if (specs.size() != params_.size()) {
    throw std::invalid_argument("model expects " + std::to_string(specs.size()) +
                                " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].shape != params_[i].shape()) {
      throw std::invalid_argument("parameter " + specs[i].name + " has shape " +
                                  shape_to_string(params_[i].shape()) + ", config implies " +
                                  shape_to_string(specs[i].shape));
    }
  }
}

std::vector<Var> Model::bind_params(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& p : params_) vars.push_back(tape.leaf(p, requires_grad));
  return vars;
}

Var Model::forward(Tape& tape, Var input, const std::vector<Var>& params, bool training,
                   std::mt19937_64* rng) const {
  if (params.size() != params_.size()) {
    throw std::invalid_argument("forward: expected " + std::to_string(params_.size()) +
                                " parameter nodes, got " + std::to_string(params.size()));
  }
  const bool dropout_active = training && config_.dropout_rate > 0.0;
  if (dropout_active && rng == nullptr) {
    throw std::invalid_argument("forward: training with dropout needs an rng");
  }
  Var h = input;
  const auto layers = layer_sequence(config_);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& layer = layers[li];
    const Tensor& hv = tape.value(h);
    if (hv.rank() != 2 || hv.dim(1) != layer.in) {
      throw std::invalid_argument("layer " + std::to_string(li) + ": expected input [batch, " +
                                  std::to_string(layer.in) + "], got " +
                                  shape_to_string(hv.shape()));
    }
    switch (layer.kind) {
      case LayerKind::dense:
        h = tape.add_bias(tape.matmul(h, params[layer.param_index]),
                          params[layer.param_index + 1]);
        break;
      case LayerKind::activation:
        h = tape.activation(h, config_.activation);
        break;
      case LayerKind::dropout:
        if (dropout_active) h = tape.dropout(h, config_.dropout_rate, *rng, true);
        break;
    }
  }
  return h;
}

Tensor Model::predict(const Tensor& batch) const {
  Tape tape;
  const auto params = bind_params(tape, false);
  const Var x = tape.leaf(batch, false);
  return tape.value(forward(tape, x, params, false, nullptr));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

bool in_top_k(std::span<const double> row, int label, std::size_t k) {
  const double v = row[static_cast<std::size_t>(label)];
  std::size_t above = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (static_cast<int>(j) == label) continue;
    if (row[j] > v || (row[j] == v && static_cast<int>(j) < label)) ++above;
  }
  return above < k;
}

}  // namespace advx
