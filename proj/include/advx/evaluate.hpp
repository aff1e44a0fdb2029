#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advx/advtrain.hpp"
#include "advx/attacks.hpp"
#include "advx/data_io.hpp"
#include "advx/model.hpp"
#include "advx/report.hpp"

namespace advx {

// Examples are processed in chunks of this size; chunk c draws its attack
// randomness from spec.rng_seed + c * kEvalChunk.
inline constexpr std::size_t kEvalChunk = 500;

// Adversarial copy of a dataset, generated once and reusable across models.
struct AdversarialSet {
  Tensor adv;
  AttackSpec spec;
  std::string checksum;  // SHA-256 of adv
};

AdversarialSet make_adversarial_set(const Model& source, const Dataset& data,
                                    const AttackSpec& spec);

// Per-example "true label within top-k" flags for `inputs`.
std::vector<bool> correct_flags(const Model& model, const Tensor& inputs,
                                std::span<const int> labels, std::size_t topk = 1);

// Fraction of `data` whose label is in the model's top-k, after perturbing
// every example with `attack` when one is given.
AccuracyRecord accuracy(const Model& model, const Dataset& data,
                        const std::optional<AttackSpec>& attack, std::size_t topk = 1,
                        const std::string& model_id = "model");

// Examples correct on clean input that the true-label method leaves correct
// while the label-free method turns them wrong. Both methods must be one-step.
LeakRecord label_leak_count(const Model& model, const Dataset& data, double epsilon,
                            AttackMethod true_label_method = AttackMethod::fgsm,
                            AttackMethod label_free_method = AttackMethod::fgsm_pred,
                            const std::string& model_id = "model");

// Among examples the source gets right clean and wrong adversarially, the
// fraction the target also gets wrong. Undefined for an empty denominator.
TransferCell transfer_rate(const Model& source, const Model& target, const Dataset& sample,
                           const AdversarialSet& adv, std::size_t topk = 1);
TransferCell transfer_rate(const Model& source, const Model& target, const Dataset& sample,
                           const AttackSpec& attack, std::size_t topk = 1);

// Target error over every adversarial example built on the source.
TransferCell transferred_error_rate(const Model& target, const Dataset& sample,
                                    const AdversarialSet& adv, std::size_t topk = 1);
TransferCell transferred_error_rate(const Model& source, const Model& target,
                                    const Dataset& sample, const AttackSpec& attack,
                                    std::size_t topk = 1);

struct NamedModel {
  std::string id;
  const Model* model;
};

// Both matrix kinds for one source against every target, computed from one
// cached adversarial set.
std::vector<TransferMatrix> transfer_matrices(const NamedModel& source,
                                              const std::vector<NamedModel>& targets,
                                              const Dataset& sample, const AttackSpec& attack,
                                              std::size_t topk = 1);

// adversarial accuracy / clean accuracy; undefined when clean accuracy is 0.
DerivedMetric accuracy_ratio(const Model& model, const Dataset& data, const AttackSpec& attack,
                             std::size_t topk = 1, const std::string& model_id = "model");

// Attack grid entry: method plus budget in pixel units.
struct GridPoint {
  AttackMethod method;
  double epsilon_pixels;
};

// Clean record plus one record and one accuracy_ratio per grid point.
EvalReport attack_table(const Model& model, const Dataset& data,
                        const std::vector<GridPoint>& grid, const std::string& model_id,
                        std::size_t topk = 1, std::uint64_t seed = 0);

struct SweepData {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
};

using ProgressFn = std::function<void(const std::string&)>;

// For each rho, trains a clean and an adversarial model and tabulates accuracy
// and accuracy_ratio over the grid. Records: |rho| x 2 x |grid|.
EvalReport capacity_sweep(const ModelConfig& base, const std::vector<double>& rhos,
                          const TrainConfig& clean_recipe, const TrainConfig& adv_recipe,
                          const std::vector<GridPoint>& grid, const SweepData& data,
                          const ProgressFn& progress = {});

// One adversarially trained model per k value.
EvalReport kfrac_sweep(const ModelConfig& base, const std::vector<std::size_t>& ks,
                       const TrainConfig& recipe, const std::vector<GridPoint>& grid,
                       const SweepData& data, const ProgressFn& progress = {});

// One adversarially trained model per activation.
EvalReport activation_comparison(const ModelConfig& base,
                                 const std::vector<ActivationKind>& activations,
                                 const TrainConfig& recipe, const std::vector<GridPoint>& grid,
                                 const SweepData& data, const ProgressFn& progress = {});

}  // namespace advx
