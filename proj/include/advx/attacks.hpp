#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advx/model.hpp"
#include "advx/tensor.hpp"

namespace advx {

// Number of intensity levels above zero on the pixel scale. Budgets given in
// pixel units are divided by this (times the data range width) to reach data
// units.
inline constexpr double kPixelLevels = 255.0;

enum class AttackMethod {
  fgsm,
  fgsm_pred,
  fast_entropy,
  fast_grad_l2,
  fast_grad_linf,
  step_rnd,
  step_ll,
  iter_basic,
  iter_ll,
  noise_sign,
  noise_truncnormal
};

const std::vector<AttackMethod>& all_attack_methods();
std::string to_string(AttackMethod method);
// Throws std::invalid_argument listing the valid names.
AttackMethod parse_attack_method(const std::string& name);
bool is_iterative(AttackMethod method);
bool is_one_step(AttackMethod method);
bool uses_true_label(AttackMethod method);

struct DataRange {
  double lo = 0.0;
  double hi = 1.0;

  double pixels_to_data(double pixels) const { return pixels * (hi - lo) / kPixelLevels; }
  double data_to_pixels(double data) const { return data * kPixelLevels / (hi - lo); }
};

struct AttackSpec {
  AttackMethod method = AttackMethod::fgsm;
  double epsilon = 0.0;           // data units
  std::optional<double> alpha;    // iterative step, data units; default one pixel
  std::optional<int> iters;       // default from iteration_count
  std::uint64_t rng_seed = 0;

  void validate() const;
  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

struct AdversarialBatch {
  Tensor clean;
  Tensor adv;
  std::vector<int> true_labels;
  std::optional<std::vector<int>> target_labels;
  AttackSpec spec;
};

enum class TargetPolicy { least_likely, random };

// Clip each component of `a` into [max(lo, center - eps), min(hi, center + eps)].
Tensor clip_box(const Tensor& a, const Tensor& center, double epsilon, double lo, double hi);

// ceil(min(eps + 4, 1.25 eps)) with a floor of 1; eps in pixel units.
int iteration_count(double epsilon_pixels);

double sign(double v);

enum class InputObjective { cross_entropy, entropy };

// Gradient of the summed per-example objective with respect to the input
// batch; the model parameters are held fixed.
Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels,
                      InputObjective objective = InputObjective::cross_entropy);

std::vector<int> select_target(const Model& model, const Tensor& x, TargetPolicy policy,
                               std::mt19937_64& rng);

AdversarialBatch fgsm(const Model& model, const Tensor& x, std::span<const int> y_true,
                      double epsilon, const DataRange& range = {});
AdversarialBatch one_step_target(const Model& model, const Tensor& x,
                                 std::span<const int> y_target, double epsilon,
                                 const DataRange& range = {});
AdversarialBatch iter_basic(const Model& model, const Tensor& x, std::span<const int> y_true,
                            double epsilon, std::optional<double> alpha = std::nullopt,
                            std::optional<int> iters = std::nullopt,
                            const DataRange& range = {});
AdversarialBatch iter_ll(const Model& model, const Tensor& x, double epsilon,
                         std::optional<double> alpha = std::nullopt,
                         std::optional<int> iters = std::nullopt,
                         const DataRange& range = {});
// fgsm_pred, fast_entropy, fast_grad_l2 or fast_grad_linf.
AdversarialBatch fast_variant(const Model& model, const Tensor& x,
                              std::span<const int> y_true, double epsilon,
                              AttackMethod kind, const DataRange& range = {});
// noise_sign or noise_truncnormal.
AdversarialBatch noise_baseline(const Tensor& x, double epsilon, AttackMethod kind,
                                std::mt19937_64& rng, const DataRange& range = {});

// Dispatches on spec.method. Random draws come from spec.rng_seed.
AdversarialBatch generate(const Model& model, const Tensor& x, std::span<const int> y_true,
                          const AttackSpec& spec, const DataRange& range = {});

// Same, with an individual budget per example (spec.epsilon is ignored).
AdversarialBatch generate(const Model& model, const Tensor& x, std::span<const int> y_true,
                          const AttackSpec& spec, std::span<const double> epsilon_per_example,
                          const DataRange& range = {});

}  // namespace advx
