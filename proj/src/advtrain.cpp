#include "advx/advtrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace advx {

EpsSchedule EpsSchedule::parse(const std::string& text) {
  const auto parts = split(text, ':');
  EpsSchedule s;
  if (parts[0] == "fixed" && parts.size() == 2) {
    s = fixed(parse_number_list(parts[1], "eps schedule").at(0));
  } else if (parts[0] == "truncnormal" && parts.size() == 1) {
    s = truncnormal(8.0, 16.0);
  } else if (parts[0] == "truncnormal" && parts.size() == 3) {
    s = truncnormal(parse_number_list(parts[1], "eps schedule sigma").at(0),
                    parse_number_list(parts[2], "eps schedule bound").at(0));
  } else {
    throw std::invalid_argument("eps schedule '" + text +
                                "' not understood (fixed:<eps> or truncnormal[:<sigma>:<bound>])");
  }
  s.validate();
  return s;
}

std::string EpsSchedule::to_string() const {
  if (kind == Kind::fixed) return "fixed:" + format_double(value);
  return "truncnormal:" + format_double(sigma) + ":" + format_double(bound);
}

void EpsSchedule::validate() const {
  if (kind == Kind::fixed) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw std::invalid_argument("fixed eps schedule needs a finite value >= 0");
    }
  } else {
    if (!(bound > 0.0)) throw std::invalid_argument("truncnormal eps schedule needs bound > 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("truncnormal eps schedule needs sigma > 0");
  }
}

double sample_epsilon(const EpsSchedule& schedule, std::mt19937_64& rng) {
  schedule.validate();
  if (schedule.kind == EpsSchedule::Kind::fixed) return schedule.value;
  std::normal_distribution<double> normal(0.0, schedule.sigma);
  double z = 0.0;
  do {
    z = normal(rng);
  } while (std::abs(z) > schedule.bound);
  return std::abs(z);
}

void rmsprop_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    RmsPropState& state, double lr, double decay, double epsilon) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("rmsprop: gradient count does not match parameter count");
  }
  if (state.mean_square.empty()) {
    for (const Tensor& p : params) state.mean_square.emplace_back(p.shape());
  }
  if (state.mean_square.size() != params.size()) {
    throw std::invalid_argument("rmsprop: state does not match parameters");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    require_same_shape(params[t], grads[t], "rmsprop gradient");
    require_same_shape(params[t], state.mean_square[t], "rmsprop state");
    auto p = params[t].data();
    auto g = grads[t].data();
    auto s = state.mean_square[t].data();
#pragma omp simd
    for (std::size_t i = 0; i < p.size(); ++i) {
      s[i] = decay * s[i] + (1.0 - decay) * g[i] * g[i];
      p[i] -= lr * g[i] / (std::sqrt(s[i]) + epsilon);
    }
  }
}

void sgd_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("sgd: gradient count does not match parameter count");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    require_same_shape(params[t], grads[t], "sgd gradient");
    auto p = params[t].data();
    auto g = grads[t].data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

void TrainConfig::validate() const {
  if (m == 0) throw std::invalid_argument("train.m must be positive");
  if (k > m) throw std::invalid_argument("train.k must not exceed train.m");
  if (!(lambda > 0.0)) throw std::invalid_argument("train.lambda must be positive");
  if (total_steps < delay_steps) {
    throw std::invalid_argument("train.total_steps must be >= train.delay_steps");
  }
  if (!(label_smoothing >= 0.0) || label_smoothing >= 1.0) {
    throw std::invalid_argument("train.label_smoothing must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(optimizer.lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
  if (optimizer.kind == OptimizerConfig::Kind::rmsprop &&
      (!(optimizer.decay >= 0.0) || optimizer.decay >= 1.0)) {
    throw std::invalid_argument("train.rmsprop_decay must lie in [0, 1)");
  }
  eps_schedule.validate();
  attack.validate();
}

double mixed_loss(std::span<const double> clean_losses, std::span<const double> adv_losses,
                  std::size_t m, std::size_t k, double lambda) {
  if (k > m) throw std::invalid_argument("mixed_loss: k > m");
  if (clean_losses.size() != m - k || adv_losses.size() != k) {
    throw std::invalid_argument("mixed_loss: expected " + std::to_string(m - k) + " clean and " +
                                std::to_string(k) + " adversarial losses");
  }
  const double norm = static_cast<double>(m - k) + lambda * static_cast<double>(k);
  if (norm == 0.0) throw std::invalid_argument("mixed_loss: zero normalizer (m - k) + lambda k");
  double clean = 0.0, adv = 0.0;
  for (double v : clean_losses) clean += v;
  for (double v : adv_losses) adv += v;
  return (clean + lambda * adv) / norm;
}

std::string TrainLog::steps_csv() const {
  std::string out = "step,mixed_loss,clean_loss,adv_loss,eps_pixels\n";
  for (const auto& s : steps) {
    std::string eps;
    for (std::size_t i = 0; i < s.eps_pixels.size(); ++i) {
      if (i) eps += ';';
      eps += format_double(s.eps_pixels[i]);
    }
    out += std::to_string(s.step) + "," + format_double(s.mixed_loss) + "," +
           format_double(s.clean_loss) + "," + format_double(s.adv_loss) + "," + eps + "\n";
  }
  return out;
}

std::string TrainLog::evals_csv() const {
  std::string out = "step,clean_accuracy,adv_accuracy,n\n";
  for (const auto& e : evals) {
    out += std::to_string(e.step) + "," + format_double(e.clean_accuracy) + "," +
           format_double(e.adv_accuracy) + "," + std::to_string(e.n) + "\n";
  }
  return out;
}

Trainer::Trainer(Model model, TrainConfig config, DataRange range)
    : model_(std::move(model)), config_(std::move(config)), range_(range), rng_(config_.seed) {
  config_.validate();
  step_ = model_.train_steps_done();
}

std::string Trainer::rng_digest() const {
  std::ostringstream os;
  os << rng_;
  const std::string state = os.str();
  return sha256_hex(state.data(), state.size());
}

StepResult Trainer::step(const Tensor& batch_x, std::span<const int> batch_y) {
  const std::size_t m = config_.m;
  if (batch_x.rank() != 2 || batch_x.dim(0) != m || batch_y.size() != m) {
    throw std::invalid_argument("train step expects a minibatch of exactly m=" +
                                std::to_string(m) + " examples");
  }
  const std::size_t k = step_ < config_.delay_steps ? 0 : config_.k;
  const std::size_t classes = model_.config().num_classes;

  StepResult result;
  result.record.step = step_;

  // Replace the first k examples with adversarial counterparts built against
  // the parameters as they are before this update.
  Tensor mixed = batch_x;
  if (k > 0) {
    std::vector<std::size_t> head(k);
    std::iota(head.begin(), head.end(), std::size_t{0});
    const Tensor clean_head = batch_x.gather_rows(head);
    std::vector<double> eps_data(k);
    result.record.eps_pixels.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double px = sample_epsilon(config_.eps_schedule, rng_);
      result.record.eps_pixels[i] = px;
      eps_data[i] = range_.pixels_to_data(px);
    }
    AttackSpec spec = config_.attack;
    spec.rng_seed = rng_();
    const auto adv = generate(model_, clean_head, batch_y.first(k), spec, eps_data, range_);
    for (std::size_t i = 0; i < k; ++i) {
      auto src = adv.adv.row(i);
      std::copy(src.begin(), src.end(), mixed.row(i).begin());
    }
    result.adversarial_inputs = adv.adv;
  }

  Tape tape;
  const auto params = model_.bind_params(tape, true);
  const Var input = tape.leaf(mixed, false);
  const Var logits = model_.forward(tape, input, params, true, &rng_);
  const Tensor q = smoothed_labels(batch_y, classes, config_.label_smoothing);
  const Var losses = tape.softmax_cross_entropy(logits, q);

  const double norm = static_cast<double>(m - k) + config_.lambda * static_cast<double>(k);
  Tensor weights({m});
  for (std::size_t i = 0; i < m; ++i) weights[i] = (i < k ? config_.lambda : 1.0) / norm;
  Var total = tape.weighted_sum(losses, weights);
  if (config_.weight_decay > 0.0) {
    for (const LayerSpec& layer : layer_sequence(model_.config())) {
      if (layer.kind != LayerKind::dense) continue;
      total = tape.add(total, tape.scale(tape.sum_squares(params[layer.param_index]),
                                         0.5 * config_.weight_decay));
    }
  }

  const Tensor& per_example = tape.value(losses);
  std::vector<double> clean_losses(per_example.data().begin() + static_cast<std::ptrdiff_t>(k),
                                   per_example.data().end());
  std::vector<double> adv_losses(per_example.data().begin(),
                                 per_example.data().begin() + static_cast<std::ptrdiff_t>(k));
  result.record.mixed_loss = mixed_loss(clean_losses, adv_losses, m, k, config_.lambda);
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  result.record.clean_loss = mean(clean_losses);
  result.record.adv_loss = mean(adv_losses);

  const Gradients grads = tape.backward(total);
  std::vector<Tensor> g;
  g.reserve(params.size());
  for (Var p : params) g.push_back(grads.of(p));

  auto& p = model_.mutable_params();
  if (config_.optimizer.kind == OptimizerConfig::Kind::rmsprop) {
    rmsprop_update(p, g, rms_, config_.optimizer.lr, config_.optimizer.decay,
                   config_.optimizer.epsilon);
  } else {
    sgd_update(p, g, config_.optimizer.lr);
  }
  ++step_;
  model_.set_train_steps_done(step_);
  return result;
}

EvalRecord quick_eval(const Model& model, const Dataset& data, const AttackSpec& attack,
                      std::size_t samples) {
  const std::size_t n = std::min(samples, data.size());
  EvalRecord rec;
  rec.n = n;
  if (n == 0) return rec;
  constexpr std::size_t kChunk = 500;
  std::size_t clean_ok = 0, adv_ok = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = data.features.gather_rows(idx);
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = data.labels[idx[i]];
    const auto clean_pred = argmax_rows(model.predict(x));
    AttackSpec spec = attack;
    spec.rng_seed = attack.rng_seed + start;
    const auto adv = generate(model, x, y, spec, data.range);
    const auto adv_pred = argmax_rows(model.predict(adv.adv));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      clean_ok += clean_pred[i] == y[i];
      adv_ok += adv_pred[i] == y[i];
    }
  }
  rec.clean_accuracy = static_cast<double>(clean_ok) / static_cast<double>(n);
  rec.adv_accuracy = static_cast<double>(adv_ok) / static_cast<double>(n);
  return rec;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                  const Dataset& train_set, const Dataset* validation,
                  const StepCallback& on_step) {
  config.validate();
  if (train_set.size() < config.m) {
    throw std::invalid_argument("training set smaller than one minibatch");
  }
  if (train_set.dim() != model_config.input_dim) {
    throw std::invalid_argument("training data has " + std::to_string(train_set.dim()) +
                                " features, model.input_dim is " +
                                std::to_string(model_config.input_dim));
  }
  Trainer trainer(Model::init(model_config), config, train_set.range);
  TrainLog log;

  // Separate stream for batch order so that changing k does not reshuffle data.
  std::mt19937_64 order_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  AttackSpec eval_attack = config.attack;
  eval_attack.epsilon = train_set.range.pixels_to_data(config.eval_epsilon_pixels);
  eval_attack.rng_seed = config.seed;

  std::vector<std::size_t> batch(config.m);
  std::vector<int> labels(config.m);
  for (std::uint64_t s = 0; s < config.total_steps; ++s) {
    for (std::size_t i = 0; i < config.m; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      batch[i] = order[cursor++];
      labels[i] = train_set.labels[batch[i]];
    }
    auto result = trainer.step(train_set.features.gather_rows(batch), labels);
    if (on_step) on_step(result.record);
    log.steps.push_back(std::move(result.record));

    const bool last = s + 1 == config.total_steps;
    const bool periodic = config.eval_every > 0 && (s + 1) % config.eval_every == 0;
    if (validation != nullptr && (last || periodic)) {
      EvalRecord rec = quick_eval(trainer.model(), *validation, eval_attack, config.eval_samples);
      rec.step = s + 1;
      log.evals.push_back(rec);
    }
  }
  return TrainResult{trainer.model(), std::move(log), trainer.rng_digest()};
}

}  // namespace advx
