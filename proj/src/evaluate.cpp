#include "advx/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace advx {
namespace {

std::vector<std::size_t> chunk_indices(std::size_t start, std::size_t n) {
  std::vector<std::size_t> idx(std::min(kEvalChunk, n - start));
  std::iota(idx.begin(), idx.end(), start);
  return idx;
}

// Pixel budgets that went through /255 and back are snapped to 1e-9.
double tidy_pixels(double px) { return std::round(px * 1e9) / 1e9; }

std::optional<double> ratio_or_undefined(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void require_nonempty(const Dataset& data, const char* what) {
  if (data.size() == 0) throw std::invalid_argument(std::string(what) + ": empty dataset");
}

std::string model_tag(const std::string& prefix, const std::string& recipe) {
  return prefix + "/" + recipe;
}

}  // namespace

AdversarialSet make_adversarial_set(const Model& source, const Dataset& data,
                                    const AttackSpec& spec) {
  AdversarialSet out;
  out.spec = spec;
  out.adv = Tensor(data.features.shape());
  const std::size_t d = data.dim();
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const auto idx = chunk_indices(start, data.size());
    const Tensor x = data.features.gather_rows(idx);
    const std::span<const int> y(data.labels.data() + start, idx.size());
    AttackSpec chunk_spec = spec;
    chunk_spec.rng_seed = spec.rng_seed + start;
    const auto batch = generate(source, x, y, chunk_spec, data.range);
    std::copy(batch.adv.data().begin(), batch.adv.data().end(),
              out.adv.data().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  out.checksum = sha256_hex(out.adv.data().data(), out.adv.size() * sizeof(double));
  return out;
}

std::vector<bool> correct_flags(const Model& model, const Tensor& inputs,
                                std::span<const int> labels, std::size_t topk) {
  if (inputs.rank() != 2 || inputs.dim(0) != labels.size()) {
    throw std::invalid_argument("correct_flags: inputs and labels disagree in length");
  }
  std::vector<bool> flags(labels.size());
  for (std::size_t start = 0; start < labels.size(); start += kEvalChunk) {
    const auto idx = chunk_indices(start, labels.size());
    const Tensor logits = model.predict(inputs.gather_rows(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      flags[start + i] = in_top_k(logits.row(i), labels[start + i], topk);
    }
  }
  return flags;
}

AccuracyRecord accuracy(const Model& model, const Dataset& data,
                        const std::optional<AttackSpec>& attack, std::size_t topk,
                        const std::string& model_id) {
  require_nonempty(data, "accuracy");
  if (topk == 0) throw std::invalid_argument("accuracy: topk must be at least 1");
  std::vector<bool> flags;
  AccuracyRecord rec;
  rec.model_id = model_id;
  rec.topk = topk;
  rec.n = data.size();
  if (attack) {
    const auto adv = make_adversarial_set(model, data, *attack);
    flags = correct_flags(model, adv.adv, data.labels, topk);
    rec.method = to_string(attack->method);
    rec.epsilon_pixel = tidy_pixels(data.range.data_to_pixels(attack->epsilon));
  } else {
    flags = correct_flags(model, data.features, data.labels, topk);
    rec.method = "clean";
    rec.epsilon_pixel = 0.0;
  }
  const auto ok = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  rec.accuracy = static_cast<double>(ok) / static_cast<double>(data.size());
  return rec;
}

LeakRecord label_leak_count(const Model& model, const Dataset& data, double epsilon,
                            AttackMethod true_label_method, AttackMethod label_free_method,
                            const std::string& model_id) {
  require_nonempty(data, "label_leak_count");
  if (!is_one_step(true_label_method) || !is_one_step(label_free_method)) {
    throw std::invalid_argument("label leaking compares two one-step methods");
  }
  AttackSpec with_label{true_label_method, epsilon, std::nullopt, std::nullopt, 0};
  AttackSpec without_label{label_free_method, epsilon, std::nullopt, std::nullopt, 0};
  const auto clean = correct_flags(model, data.features, data.labels);
  const auto adv_true = correct_flags(model, make_adversarial_set(model, data, with_label).adv,
                                      data.labels);
  const auto adv_free = correct_flags(
      model, make_adversarial_set(model, data, without_label).adv, data.labels);

  LeakRecord rec;
  rec.model_id = model_id;
  rec.epsilon_pixel = tidy_pixels(data.range.data_to_pixels(epsilon));
  std::size_t clean_ok = 0, true_ok = 0, free_ok = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    clean_ok += clean[i];
    true_ok += adv_true[i];
    free_ok += adv_free[i];
    if (clean[i] && adv_true[i] && !adv_free[i]) rec.leaked_ids.push_back(i);
  }
  const double n = static_cast<double>(data.size());
  rec.count = rec.leaked_ids.size();
  rec.clean_correct = clean_ok;
  rec.clean_accuracy = static_cast<double>(clean_ok) / n;
  rec.true_label_accuracy = static_cast<double>(true_ok) / n;
  rec.label_free_accuracy = static_cast<double>(free_ok) / n;
  return rec;
}

TransferCell transfer_rate(const Model& source, const Model& target, const Dataset& sample,
                           const AdversarialSet& adv, std::size_t topk) {
  const auto src_clean = correct_flags(source, sample.features, sample.labels, topk);
  const auto src_adv = correct_flags(source, adv.adv, sample.labels, topk);
  const auto tgt_adv = correct_flags(target, adv.adv, sample.labels, topk);
  TransferCell cell;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (!src_clean[i] || src_adv[i]) continue;
    ++cell.denominator;
    if (!tgt_adv[i]) ++cell.numerator;
  }
  cell.rate = ratio_or_undefined(cell.numerator, cell.denominator);
  return cell;
}

TransferCell transfer_rate(const Model& source, const Model& target, const Dataset& sample,
                           const AttackSpec& attack, std::size_t topk) {
  return transfer_rate(source, target, sample, make_adversarial_set(source, sample, attack), topk);
}

TransferCell transferred_error_rate(const Model& target, const Dataset& sample,
                                    const AdversarialSet& adv, std::size_t topk) {
  const auto tgt_adv = correct_flags(target, adv.adv, sample.labels, topk);
  TransferCell cell;
  cell.denominator = sample.size();
  cell.numerator = static_cast<std::size_t>(std::count(tgt_adv.begin(), tgt_adv.end(), false));
  cell.rate = ratio_or_undefined(cell.numerator, cell.denominator);
  return cell;
}

TransferCell transferred_error_rate(const Model& source, const Model& target,
                                    const Dataset& sample, const AttackSpec& attack,
                                    std::size_t topk) {
  return transferred_error_rate(target, sample, make_adversarial_set(source, sample, attack),
                                topk);
}

std::vector<TransferMatrix> transfer_matrices(const NamedModel& source,
                                              const std::vector<NamedModel>& targets,
                                              const Dataset& sample, const AttackSpec& attack,
                                              std::size_t topk) {
  require_nonempty(sample, "transfer_matrices");
  if (targets.empty()) throw std::invalid_argument("transfer needs at least one target");
  const AdversarialSet adv = make_adversarial_set(*source.model, sample, attack);
  TransferMatrix rates, errors;
  for (TransferMatrix* m : {&rates, &errors}) {
    m->method = to_string(attack.method);
    m->epsilon_pixel = tidy_pixels(sample.range.data_to_pixels(attack.epsilon));
    m->topk = topk;
  }
  rates.kind = TransferKind::transfer_rate;
  errors.kind = TransferKind::error_rate;
  for (const NamedModel& t : targets) {
    TransferCell r = transfer_rate(*source.model, *t.model, sample, adv, topk);
    TransferCell e = transferred_error_rate(*t.model, sample, adv, topk);
    r.source = e.source = source.id;
    r.target = e.target = t.id;
    rates.cells.push_back(std::move(r));
    errors.cells.push_back(std::move(e));
  }
  return {rates, errors};
}

DerivedMetric accuracy_ratio(const Model& model, const Dataset& data, const AttackSpec& attack,
                             std::size_t topk, const std::string& model_id) {
  const AccuracyRecord clean = accuracy(model, data, std::nullopt, topk, model_id);
  const AccuracyRecord adv = accuracy(model, data, attack, topk, model_id);
  DerivedMetric m;
  m.name = "accuracy_ratio";
  m.model_id = model_id;
  m.method = adv.method;
  m.epsilon_pixel = adv.epsilon_pixel;
  m.topk = topk;
  m.denominator = static_cast<std::size_t>(std::llround(clean.accuracy * static_cast<double>(clean.n)));
  if (clean.accuracy > 0.0) m.value = adv.accuracy / clean.accuracy;
  return m;
}

namespace {

AttackSpec spec_for(const GridPoint& g, const DataRange& range, std::uint64_t seed) {
  AttackSpec s;
  s.method = g.method;
  s.epsilon = range.pixels_to_data(g.epsilon_pixels);
  s.rng_seed = seed;
  return s;
}

// Grid records and ratios for one model (clean accuracy reported as a
// derived metric so that record counts stay |grid| per model).
void tabulate(EvalReport& report, const Model& model, const Dataset& test,
              const std::vector<GridPoint>& grid, const std::string& id) {
  const AccuracyRecord clean = accuracy(model, test, std::nullopt, 1, id);
  DerivedMetric cm;
  cm.name = "clean_accuracy";
  cm.model_id = id;
  cm.method = "clean";
  cm.value = clean.accuracy;
  cm.denominator = clean.n;
  report.derived.push_back(cm);
  for (const GridPoint& g : grid) {
    const AccuracyRecord rec = accuracy(model, test, spec_for(g, test.range, 0), 1, id);
    report.records.push_back(rec);
    DerivedMetric r;
    r.name = "accuracy_ratio";
    r.model_id = id;
    r.method = rec.method;
    r.epsilon_pixel = rec.epsilon_pixel;
    r.denominator = static_cast<std::size_t>(std::llround(clean.accuracy * static_cast<double>(clean.n)));
    if (clean.accuracy > 0.0) r.value = rec.accuracy / clean.accuracy;
    report.derived.push_back(r);
  }
}

void check_sweep_data(const SweepData& data) {
  if (data.train == nullptr || data.test == nullptr) {
    throw std::invalid_argument("sweep needs both training and test data");
  }
}

}  // namespace

EvalReport attack_table(const Model& model, const Dataset& data,
                        const std::vector<GridPoint>& grid, const std::string& model_id,
                        std::size_t topk, std::uint64_t seed) {
  EvalReport report;
  const AccuracyRecord clean = accuracy(model, data, std::nullopt, topk, model_id);
  report.records.push_back(clean);
  for (const GridPoint& g : grid) {
    const AccuracyRecord rec = accuracy(model, data, spec_for(g, data.range, seed), topk, model_id);
    report.records.push_back(rec);
    DerivedMetric r;
    r.name = "accuracy_ratio";
    r.model_id = model_id;
    r.method = rec.method;
    r.epsilon_pixel = rec.epsilon_pixel;
    r.topk = topk;
    r.denominator = static_cast<std::size_t>(std::llround(clean.accuracy * static_cast<double>(clean.n)));
    if (clean.accuracy > 0.0) r.value = rec.accuracy / clean.accuracy;
    report.derived.push_back(r);
  }
  return report;
}

EvalReport capacity_sweep(const ModelConfig& base, const std::vector<double>& rhos,
                          const TrainConfig& clean_recipe, const TrainConfig& adv_recipe,
                          const std::vector<GridPoint>& grid, const SweepData& data,
                          const ProgressFn& progress) {
  if (rhos.empty()) throw std::invalid_argument("capacity sweep needs at least one rho");
  check_sweep_data(data);
  EvalReport report;
  for (double rho : rhos) {
    ModelConfig cfg = base;
    cfg.rho = rho;
    const std::string prefix = "rho=" + format_double(rho);
    for (const auto& [recipe, name] :
         {std::pair{&clean_recipe, "clean"}, std::pair{&adv_recipe, "adv"}}) {
      if (progress) progress("training " + model_tag(prefix, name));
      const TrainResult trained = train(cfg, *recipe, *data.train);
      tabulate(report, trained.model, *data.test, grid, model_tag(prefix, name));
    }
  }
  return report;
}

EvalReport kfrac_sweep(const ModelConfig& base, const std::vector<std::size_t>& ks,
                       const TrainConfig& recipe, const std::vector<GridPoint>& grid,
                       const SweepData& data, const ProgressFn& progress) {
  if (ks.empty()) throw std::invalid_argument("k sweep needs at least one k");
  check_sweep_data(data);
  EvalReport report;
  for (std::size_t k : ks) {
    TrainConfig cfg = recipe;
    cfg.k = k;
    const std::string id = "k=" + std::to_string(k);
    if (progress) progress("training " + id);
    const TrainResult trained = train(base, cfg, *data.train);
    tabulate(report, trained.model, *data.test, grid, id);
  }
  return report;
}

EvalReport activation_comparison(const ModelConfig& base,
                                 const std::vector<ActivationKind>& activations,
                                 const TrainConfig& recipe, const std::vector<GridPoint>& grid,
                                 const SweepData& data, const ProgressFn& progress) {
  if (activations.empty()) throw std::invalid_argument("activation comparison needs activations");
  check_sweep_data(data);
  EvalReport report;
  for (const ActivationKind& act : activations) {
    ModelConfig cfg = base;
    cfg.activation = act;
    const std::string id = act.to_string();
    if (progress) progress("training " + id);
    const TrainResult trained = train(cfg, recipe, *data.train);
    tabulate(report, trained.model, *data.test, grid, id);
  }
  return report;
}

}  // namespace advx
