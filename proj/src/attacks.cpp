#include "advx/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advx {
namespace {

struct MethodName {
  AttackMethod method;
  const char* name;
};

constexpr MethodName kMethodNames[] = {
    {AttackMethod::fgsm, "fgsm"},
    {AttackMethod::fgsm_pred, "fgsm_pred"},
    {AttackMethod::fast_entropy, "fast_entropy"},
    {AttackMethod::fast_grad_l2, "fast_grad_l2"},
    {AttackMethod::fast_grad_linf, "fast_grad_linf"},
    {AttackMethod::step_rnd, "step_rnd"},
    {AttackMethod::step_ll, "step_ll"},
    {AttackMethod::iter_basic, "iter_basic"},
    {AttackMethod::iter_ll, "iter_ll"},
    {AttackMethod::noise_sign, "noise_sign"},
    {AttackMethod::noise_truncnormal, "noise_truncnormal"},
};

void clip_row(std::span<double> a, std::span<const double> center, double eps, double lo,
              double hi) {
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double lower = std::max(lo, center[j] - eps);
    const double upper = std::min(hi, center[j] + eps);
    a[j] = std::min(std::max(a[j], lower), upper);
  }
}

void check_batch(const Tensor& x, std::size_t labels, const char* what) {
  if (x.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected [batch, features] input, got " +
                                shape_to_string(x.shape()));
  }
  if (labels != x.dim(0)) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(labels) +
                                " labels for a batch of " + std::to_string(x.dim(0)));
  }
}

void check_labels(std::span<const int> labels, std::size_t num_classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument(std::string(what) + ": class index " + std::to_string(y) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

// x + direction * eps_i * sign(g), clipped into the budget box and range.
Tensor signed_step(const Tensor& x, const Tensor& grad, std::span<const double> eps,
                   double direction, const DataRange& range) {
  Tensor adv = x;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto row = adv.row(i);
    auto g = grad.row(i);
    const double step = direction * eps[i];
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += step * sign(g[j]);
    clip_row(row, x.row(i), eps[i], range.lo, range.hi);
  }
  return adv;
}

Tensor normalized_step(const Tensor& x, const Tensor& grad, std::span<const double> eps,
                       bool l2, const DataRange& range) {
  Tensor adv = x;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto row = adv.row(i);
    auto g = grad.row(i);
    double norm = 0.0;
    if (l2) {
      for (double v : g) norm += v * v;
      norm = std::sqrt(norm);
    } else {
      for (double v : g) norm = std::max(norm, std::abs(v));
    }
    // Zero gradient: leave the example clean.
    if (norm == 0.0 || !std::isfinite(norm)) continue;
    const double scale = eps[i] / norm;
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += scale * g[j];
    clip_row(row, x.row(i), eps[i], range.lo, range.hi);
  }
  return adv;
}

struct IterPlan {
  std::vector<double> alpha;
  std::vector<int> iters;
  int max_iters = 0;
};

IterPlan plan_iterations(const AttackSpec& spec, std::span<const double> eps,
                         const DataRange& range) {
  IterPlan plan;
  const double one_pixel = range.pixels_to_data(1.0);
  for (double e : eps) {
    double a = 0.0;
    if (spec.alpha) {
      a = *spec.alpha;
      if (a > e * (1.0 + 1e-12)) {
        throw std::invalid_argument("iterative attack step alpha=" + std::to_string(a) +
                                    " exceeds epsilon=" + std::to_string(e));
      }
    } else {
      a = std::min(one_pixel, e);
    }
    const int n = spec.iters ? *spec.iters : iteration_count(range.data_to_pixels(e));
    plan.alpha.push_back(a);
    plan.iters.push_back(n);
    plan.max_iters = std::max(plan.max_iters, n);
  }
  return plan;
}

Tensor iterate(const Model& model, const Tensor& x, std::span<const int> labels,
               std::span<const double> eps, const IterPlan& plan, double direction,
               const DataRange& range) {
  Tensor adv = x;
  for (int t = 0; t < plan.max_iters; ++t) {
    const Tensor grad = input_gradient(model, adv, labels);
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      if (t >= plan.iters[i]) continue;
      auto row = adv.row(i);
      auto g = grad.row(i);
      const double step = direction * plan.alpha[i];
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += step * sign(g[j]);
      clip_row(row, x.row(i), eps[i], range.lo, range.hi);
    }
  }
  return adv;
}

Tensor add_noise(const Tensor& x, std::span<const double> eps, bool sign_noise,
                 std::mt19937_64& rng, const DataRange& range) {
  Tensor adv = x;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto row = adv.row(i);
    const double e = eps[i];
    if (e == 0.0) continue;
    for (double& v : row) {
      if (sign_noise) {
        v += e * sign(normal(rng));
      } else {
        // Normal(0, e/2) conditioned on [-e, e], i.e. |z| <= 2 in standard units.
        double z = 0.0;
        do {
          z = normal(rng);
        } while (std::abs(z) > 2.0);
        v += 0.5 * e * z;
      }
    }
    clip_row(row, x.row(i), e, range.lo, range.hi);
  }
  return adv;
}

AdversarialBatch make_batch(const Tensor& x, std::span<const int> y_true, Tensor adv,
                            const AttackSpec& spec) {
  AdversarialBatch b;
  b.clean = x;
  b.adv = std::move(adv);
  b.true_labels.assign(y_true.begin(), y_true.end());
  b.spec = spec;
  return b;
}

AdversarialBatch run(const Model& model, const Tensor& x, std::span<const int> y_true,
                     const AttackSpec& spec, std::span<const double> eps,
                     const DataRange& range) {
  spec.validate();
  if (range.lo > range.hi) throw std::invalid_argument("data range has lo > hi");
  check_batch(x, y_true.size(), "attack");
  if (eps.size() != x.dim(0)) {
    throw std::invalid_argument("attack: " + std::to_string(eps.size()) +
                                " budgets for a batch of " + std::to_string(x.dim(0)));
  }
  for (double e : eps) {
    if (!(e >= 0.0) || !std::isfinite(e)) {
      throw std::invalid_argument("attack epsilon must be a finite non-negative number");
    }
  }
  if (uses_true_label(spec.method)) check_labels(y_true, model.config().num_classes, "attack");

  std::mt19937_64 rng(spec.rng_seed);
  const bool zero_budget = std::all_of(eps.begin(), eps.end(), [](double e) { return e == 0.0; });

  switch (spec.method) {
    case AttackMethod::fgsm: {
      if (zero_budget) return make_batch(x, y_true, x, spec);
      return make_batch(x, y_true, signed_step(x, input_gradient(model, x, y_true), eps, 1.0, range),
                        spec);
    }
    case AttackMethod::fgsm_pred: {
      if (zero_budget) return make_batch(x, y_true, x, spec);
      const auto pred = argmax_rows(model.predict(x));
      auto b = make_batch(x, y_true,
                          signed_step(x, input_gradient(model, x, pred), eps, 1.0, range), spec);
      b.target_labels = pred;
      return b;
    }
    case AttackMethod::fast_entropy: {
      if (zero_budget) return make_batch(x, y_true, x, spec);
      const Tensor g = input_gradient(model, x, y_true, InputObjective::entropy);
      return make_batch(x, y_true, signed_step(x, g, eps, 1.0, range), spec);
    }
    case AttackMethod::fast_grad_l2:
    case AttackMethod::fast_grad_linf: {
      if (zero_budget) return make_batch(x, y_true, x, spec);
      const Tensor g = input_gradient(model, x, y_true);
      return make_batch(
          x, y_true,
          normalized_step(x, g, eps, spec.method == AttackMethod::fast_grad_l2, range), spec);
    }
    case AttackMethod::step_ll:
    case AttackMethod::step_rnd: {
      const auto policy = spec.method == AttackMethod::step_ll ? TargetPolicy::least_likely
                                                               : TargetPolicy::random;
      const auto target = select_target(model, x, policy, rng);
      Tensor adv = zero_budget
                       ? x
                       : signed_step(x, input_gradient(model, x, target), eps, -1.0, range);
      auto b = make_batch(x, y_true, std::move(adv), spec);
      b.target_labels = target;
      return b;
    }
    case AttackMethod::iter_basic: {
      const IterPlan plan = plan_iterations(spec, eps, range);
      if (zero_budget) return make_batch(x, y_true, x, spec);
      return make_batch(x, y_true, iterate(model, x, y_true, eps, plan, 1.0, range), spec);
    }
    case AttackMethod::iter_ll: {
      const IterPlan plan = plan_iterations(spec, eps, range);
      const auto target = select_target(model, x, TargetPolicy::least_likely, rng);
      Tensor adv = zero_budget ? x : iterate(model, x, target, eps, plan, -1.0, range);
      auto b = make_batch(x, y_true, std::move(adv), spec);
      b.target_labels = target;
      return b;
    }
    case AttackMethod::noise_sign:
    case AttackMethod::noise_truncnormal:
      return make_batch(x, y_true,
                        add_noise(x, eps, spec.method == AttackMethod::noise_sign, rng, range),
                        spec);
  }
  throw std::logic_error("unhandled attack method");
}

}  // namespace

const std::vector<AttackMethod>& all_attack_methods() {
  static const std::vector<AttackMethod> methods = [] {
    std::vector<AttackMethod> m;
    for (const auto& entry : kMethodNames) m.push_back(entry.method);
    return m;
  }();
  return methods;
}

std::string to_string(AttackMethod method) {
  for (const auto& entry : kMethodNames) {
    if (entry.method == method) return entry.name;
  }
  return "?";
}

AttackMethod parse_attack_method(const std::string& name) {
  for (const auto& entry : kMethodNames) {
    if (name == entry.name) return entry.method;
  }
  std::string valid;
  for (const auto& entry : kMethodNames) {
    if (!valid.empty()) valid += ", ";
    valid += entry.name;
  }
  throw std::invalid_argument("unknown attack method '" + name + "'; valid methods: " + valid);
}

bool is_iterative(AttackMethod method) {
  return method == AttackMethod::iter_basic || method == AttackMethod::iter_ll;
}

bool is_one_step(AttackMethod method) {
  return !is_iterative(method) && method != AttackMethod::noise_sign &&
         method != AttackMethod::noise_truncnormal;
}

bool uses_true_label(AttackMethod method) {
  return method == AttackMethod::fgsm || method == AttackMethod::fast_grad_l2 ||
         method == AttackMethod::fast_grad_linf || method == AttackMethod::iter_basic;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("attack.epsilon must be a finite non-negative number");
  }
  if (alpha && !(*alpha > 0.0)) throw std::invalid_argument("attack.alpha must be positive");
  if (iters && *iters < 1) throw std::invalid_argument("attack.iters must be at least 1");
}

Tensor clip_box(const Tensor& a, const Tensor& center, double epsilon, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clip_box: lo > hi");
  require_same_shape(a, center, "clip_box");
  Tensor out = a;
  clip_row(out.data(), center.data(), epsilon, lo, hi);
  return out;
}

int iteration_count(double epsilon_pixels) {
  if (!(epsilon_pixels >= 0.0)) {
    throw std::invalid_argument("iteration_count: epsilon must be non-negative");
  }
  const double raw = std::min(epsilon_pixels + 4.0, 1.25 * epsilon_pixels);
  // Pixel budgets arriving through a /255 round trip carry a few ulps of noise;
  // do not let that bump the count past an integral value.
  const double n = std::ceil(raw - 1e-9);
  return std::max(1, static_cast<int>(n));
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels,
                      InputObjective objective) {
  Tape tape;
  const auto params = model.bind_params(tape, false);
  const Var input = tape.leaf(x, true);
  const Var logits = model.forward(tape, input, params);
  Var total;
  if (objective == InputObjective::entropy) {
    total = tape.sum(tape.entropy(logits));
  } else {
    check_batch(x, labels.size(), "input_gradient");
    check_labels(labels, model.config().num_classes, "input_gradient");
    const Tensor q = smoothed_labels(labels, model.config().num_classes);
    total = tape.sum(tape.softmax_cross_entropy(logits, q));
  }
  return tape.backward(total).of(input);
}

std::vector<int> select_target(const Model& model, const Tensor& x, TargetPolicy policy,
                               std::mt19937_64& rng) {
  const std::size_t classes = model.config().num_classes;
  if (classes < 2) throw std::invalid_argument("target selection needs at least 2 classes");
  const Tensor logits = model.predict(x);
  std::vector<int> target(logits.dim(0));
  if (policy == TargetPolicy::least_likely) {
    // Softmax is monotone, so the smallest logit is the least likely class.
    for (std::size_t i = 0; i < target.size(); ++i) {
      auto row = logits.row(i);
      target[i] = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
    }
  } else {
    const auto top = argmax_rows(logits);
    std::uniform_int_distribution<std::size_t> pick(0, classes - 2);
    for (std::size_t i = 0; i < target.size(); ++i) {
      std::size_t c = pick(rng);
      if (c >= static_cast<std::size_t>(top[i])) ++c;
      target[i] = static_cast<int>(c);
    }
  }
  return target;
}

AdversarialBatch fgsm(const Model& model, const Tensor& x, std::span<const int> y_true,
                      double epsilon, const DataRange& range) {
  AttackSpec spec;
  spec.method = AttackMethod::fgsm;
  spec.epsilon = epsilon;
  return generate(model, x, y_true, spec, range);
}

AdversarialBatch one_step_target(const Model& model, const Tensor& x,
                                 std::span<const int> y_target, double epsilon,
                                 const DataRange& range) {
  check_batch(x, y_target.size(), "one_step_target");
  check_labels(y_target, model.config().num_classes, "one_step_target");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("one_step_target: epsilon < 0");
  const std::vector<double> eps(x.dim(0), epsilon);
  Tensor adv = epsilon == 0.0
                   ? x
                   : signed_step(x, input_gradient(model, x, y_target), eps, -1.0, range);
  AttackSpec spec;
  spec.method = AttackMethod::step_ll;
  spec.epsilon = epsilon;
  auto b = make_batch(x, y_target, std::move(adv), spec);
  b.target_labels = std::vector<int>(y_target.begin(), y_target.end());
  return b;
}

AdversarialBatch iter_basic(const Model& model, const Tensor& x, std::span<const int> y_true,
                            double epsilon, std::optional<double> alpha,
                            std::optional<int> iters, const DataRange& range) {
  AttackSpec spec;
  spec.method = AttackMethod::iter_basic;
  spec.epsilon = epsilon;
  spec.alpha = alpha;
  spec.iters = iters;
  return generate(model, x, y_true, spec, range);
}

AdversarialBatch iter_ll(const Model& model, const Tensor& x, double epsilon,
                         std::optional<double> alpha, std::optional<int> iters,
                         const DataRange& range) {
  AttackSpec spec;
  spec.method = AttackMethod::iter_ll;
  spec.epsilon = epsilon;
  spec.alpha = alpha;
  spec.iters = iters;
  const std::vector<int> unused(x.rank() == 2 ? x.dim(0) : 0, 0);
  return generate(model, x, unused, spec, range);
}

AdversarialBatch fast_variant(const Model& model, const Tensor& x,
                              std::span<const int> y_true, double epsilon, AttackMethod kind,
                              const DataRange& range) {
  if (kind != AttackMethod::fgsm_pred && kind != AttackMethod::fast_entropy &&
      kind != AttackMethod::fast_grad_l2 && kind != AttackMethod::fast_grad_linf) {
    throw std::invalid_argument("fast_variant: " + to_string(kind) + " is not a fast variant");
  }
  AttackSpec spec;
  spec.method = kind;
  spec.epsilon = epsilon;
  return generate(model, x, y_true, spec, range);
}

AdversarialBatch noise_baseline(const Tensor& x, double epsilon, AttackMethod kind,
                                std::mt19937_64& rng, const DataRange& range) {
  if (kind != AttackMethod::noise_sign && kind != AttackMethod::noise_truncnormal) {
    throw std::invalid_argument("noise_baseline: " + to_string(kind) + " is not a noise method");
  }
  if (x.rank() != 2) throw std::invalid_argument("noise_baseline: expected [batch, features]");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("noise_baseline: epsilon < 0");
  AttackSpec spec;
  spec.method = kind;
  spec.epsilon = epsilon;
  const std::vector<int> labels(x.dim(0), 0);
  const std::vector<double> eps(x.dim(0), epsilon);
  return make_batch(x, labels, add_noise(x, eps, kind == AttackMethod::noise_sign, rng, range),
                    spec);
}

AdversarialBatch generate(const Model& model, const Tensor& x, std::span<const int> y_true,
                          const AttackSpec& spec, const DataRange& range) {
  const std::vector<double> eps(x.rank() == 2 ? x.dim(0) : 0, spec.epsilon);
  return run(model, x, y_true, spec, eps, range);
}

AdversarialBatch generate(const Model& model, const Tensor& x, std::span<const int> y_true,
                          const AttackSpec& spec, std::span<const double> epsilon_per_example,
                          const DataRange& range) {
  return run(model, x, y_true, spec, epsilon_per_example, range);
}

}  // namespace advx
