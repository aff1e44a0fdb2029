#include "advx/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "advx/advtrain.hpp"
#include "advx/data_io.hpp"
#include "advx/evaluate.hpp"
#include "advx/keyvalue.hpp"

namespace advx::cli {
namespace {

namespace fs = std::filesystem;

// Thrown for anything the user can fix by changing flags or config.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

const std::map<std::string, std::vector<std::string>>& known_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"data",
       {"source", "mnist_dir", "train_n", "test_n", "seed", "synth_classes", "synth_per_class",
        "synth_test_per_class", "synth_dim", "synth_spread"}},
      {"model",
       {"input_dim", "num_classes", "hidden_widths", "rho", "extra_blocks", "activation",
        "dropout_rate", "seed"}},
      {"train",
       {"m", "k", "lambda", "attack", "alpha", "iters", "eps_schedule", "delay_steps",
        "optimizer", "lr", "decay", "opt_epsilon", "steps", "label_smoothing", "weight_decay",
        "seed", "eval_every", "eval_samples", "eval_eps"}},
      {"attack", {"checkpoint", "method", "eps", "eps_raw", "alpha", "iters", "seed", "topk", "n",
                  "dump"}},
      {"eval", {"checkpoint", "grid", "topk", "n", "seed", "model_id"}},
      {"transfer", {"source", "targets", "methods", "eps", "eps_raw", "n", "topk", "seed"}},
      {"sweep", {"kind", "rhos", "ks", "activations", "grid"}},
      {"leak", {"checkpoint", "eps", "eps_raw", "true_label", "label_free", "n", "seed"}},
  };
  return keys;
}

void reject_unknown_keys(const KeyValues& kv) {
  for (const auto& [key, value] : kv.entries()) {
    const auto dot = key.find('.');
    const auto section = known_keys().find(key.substr(0, dot));
    bool ok = dot != std::string::npos && section != known_keys().end();
    if (ok) {
      const auto& names = section->second;
      ok = std::find(names.begin(), names.end(), key.substr(dot + 1)) != names.end();
    }
    if (!ok) throw ValidationError("unknown config key '" + key + "'");
  }
}

// Flag values collected during parsing, keyed like the config file.
struct Overrides {
  std::map<std::string, std::string> values;
  std::vector<std::string> order;

  void set(const std::string& key, const std::string& value) {
    if (!values.count(key)) order.push_back(key);
    values[key] = value;
  }
  bool has(const std::string& key) const { return values.count(key) != 0; }
};

void bind_flag(CLI::App* app, Overrides& ov, const std::string& flag, const std::string& key,
          const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.set(key, v); }, help);
}

// --------------------------------------------------------------- settings

struct DataSettings {
  std::string source = "mnist";
  std::string mnist_dir;
  std::size_t train_n = 0;  // 0: whole split
  std::size_t test_n = 0;
  std::uint64_t seed = 1;
  std::size_t synth_classes = 3;
  std::size_t synth_per_class = 200;
  std::size_t synth_test_per_class = 100;
  std::size_t synth_dim = 16;
  double synth_spread = 0.08;
};

std::string default_mnist_dir() {
  if (const char* env = std::getenv("ADVX_MNIST_DIR"); env != nullptr && *env != '\0') return env;
  return "data/mnist";
}

DataSettings data_settings(const KeyValues& kv) {
  DataSettings d;
  d.source = kv.get("data.source", d.source);
  if (d.source != "mnist" && d.source != "synth") {
    throw ValidationError("data.source must be mnist or synth, got '" + d.source + "'");
  }
  d.mnist_dir = kv.get("data.mnist_dir", default_mnist_dir());
  d.train_n = kv.get_uint("data.train_n", d.train_n);
  d.test_n = kv.get_uint("data.test_n", d.test_n);
  d.seed = kv.get_uint("data.seed", d.seed);
  d.synth_classes = kv.get_uint("data.synth_classes", d.synth_classes);
  d.synth_per_class = kv.get_uint("data.synth_per_class", d.synth_per_class);
  d.synth_test_per_class = kv.get_uint("data.synth_test_per_class", d.synth_test_per_class);
  d.synth_dim = kv.get_uint("data.synth_dim", d.synth_dim);
  d.synth_spread = kv.get_number("data.synth_spread", d.synth_spread);
  if (d.source == "synth" && (d.synth_classes < 2 || d.synth_dim < 2 || d.synth_per_class == 0 ||
                              d.synth_test_per_class == 0)) {
    throw ValidationError("synthetic data needs >= 2 classes, >= 2 dims and non-empty splits");
  }
  return d;
}

void put(KeyValues& kv, const DataSettings& d) {
  kv.set("data.source", d.source);
  kv.set_int("data.train_n", static_cast<std::int64_t>(d.train_n));
  kv.set_int("data.test_n", static_cast<std::int64_t>(d.test_n));
  kv.set("data.seed", std::to_string(d.seed));
  if (d.source == "mnist") {
    kv.set("data.mnist_dir", d.mnist_dir);
  } else {
    kv.set_int("data.synth_classes", static_cast<std::int64_t>(d.synth_classes));
    kv.set_int("data.synth_per_class", static_cast<std::int64_t>(d.synth_per_class));
    kv.set_int("data.synth_test_per_class", static_cast<std::int64_t>(d.synth_test_per_class));
    kv.set_int("data.synth_dim", static_cast<std::int64_t>(d.synth_dim));
    kv.set_number("data.synth_spread", d.synth_spread);
  }
}

std::size_t data_dim(const DataSettings& d) { return d.source == "mnist" ? 784 : d.synth_dim; }
std::size_t data_classes(const DataSettings& d) {
  return d.source == "mnist" ? 10 : d.synth_classes;
}

Dataset limit(Dataset data, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= data.size()) return data;
  const auto idx = sample_indices(data.size(), n, seed);
  return data.subset(idx);
}

struct Splits {
  Dataset train;
  Dataset test;
};

Splits load_data(const DataSettings& d) {
  Splits s;
  if (d.source == "mnist") {
    s.train = load_mnist(d.mnist_dir, "train");
    s.test = load_mnist(d.mnist_dir, "test");
  } else {
    // One draw so both splits share the class centers; rows are interleaved
    // by class, so the first block is balanced.
    const Dataset all = synth_blobs(d.synth_classes, d.synth_per_class + d.synth_test_per_class,
                                    d.synth_dim, d.synth_spread, d.seed);
    const std::size_t n_train = d.synth_classes * d.synth_per_class;
    std::vector<std::size_t> train_idx(n_train), test_idx(all.size() - n_train);
    for (std::size_t i = 0; i < n_train; ++i) train_idx[i] = i;
    for (std::size_t i = 0; i < test_idx.size(); ++i) test_idx[i] = n_train + i;
    s.train = all.subset(train_idx);
    s.train.split = "train";
    s.test = all.subset(test_idx);
    s.test.split = "test";
  }
  s.train = limit(std::move(s.train), d.train_n, d.seed);
  s.test = limit(std::move(s.test), d.test_n, d.seed + 1);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_dataset_digests(const fs::path& out_dir, const Splits& s) {
  KeyValues kv;
  kv.set("train.digest", dataset_digest(s.train));
  kv.set_int("train.n", static_cast<std::int64_t>(s.train.size()));
  kv.set("train.provenance", s.train.provenance);
  kv.set("test.digest", dataset_digest(s.test));
  kv.set_int("test.n", static_cast<std::int64_t>(s.test.size()));
  kv.set("test.provenance", s.test.provenance);
  write_text(out_dir / "dataset.txt", kv.to_string());
}

ModelConfig model_settings(const KeyValues& kv, const DataSettings& d) {
  ModelConfig c = model_config_from_kv(kv);
  if (kv.has("model.input_dim") && c.input_dim != data_dim(d)) {
    throw ValidationError("model.input_dim=" + std::to_string(c.input_dim) + " but the " +
                          d.source + " data has " + std::to_string(data_dim(d)) + " features");
  }
  if (kv.has("model.num_classes") && c.num_classes != data_classes(d)) {
    throw ValidationError("model.num_classes=" + std::to_string(c.num_classes) + " but the " +
                          d.source + " data has " + std::to_string(data_classes(d)) +
                          " classes");
  }
  c.input_dim = data_dim(d);
  c.num_classes = data_classes(d);
  c.validate();
  return c;
}

const DataRange kRange{0.0, 1.0};

std::optional<double> optional_pixels(const KeyValues& kv, const std::string& key) {
  if (!kv.has(key)) return std::nullopt;
  return kv.get_number(key, 0.0);
}

TrainConfig train_settings(const KeyValues& kv) {
  TrainConfig t;
  t.m = kv.get_uint("train.m", t.m);
  t.k = kv.get_uint("train.k", t.k);
  t.lambda = kv.get_number("train.lambda", t.lambda);
  t.attack.method = parse_attack_method(kv.get("train.attack", to_string(t.attack.method)));
  if (auto a = optional_pixels(kv, "train.alpha")) t.attack.alpha = kRange.pixels_to_data(*a);
  if (kv.has("train.iters")) t.attack.iters = kv.get_uint("train.iters", 0);
  t.eps_schedule = EpsSchedule::parse(kv.get("train.eps_schedule", t.eps_schedule.to_string()));
  t.delay_steps = kv.get_uint("train.delay_steps", t.delay_steps);
  const std::string opt = kv.get("train.optimizer", "rmsprop");
  const double lr = kv.get_number("train.lr", opt == "sgd" ? 0.01 : 0.001);
  if (opt == "rmsprop") {
    t.optimizer = OptimizerConfig::rmsprop(lr, kv.get_number("train.decay", 0.9),
                                           kv.get_number("train.opt_epsilon", 1e-8));
  } else if (opt == "sgd") {
    t.optimizer = OptimizerConfig::sgd(lr);
  } else {
    throw ValidationError("train.optimizer must be rmsprop or sgd, got '" + opt + "'");
  }
  t.total_steps = kv.get_uint("train.steps", t.total_steps);
  t.label_smoothing = kv.get_number("train.label_smoothing", t.label_smoothing);
  t.weight_decay = kv.get_number("train.weight_decay", t.weight_decay);
  t.seed = kv.get_uint("train.seed", t.seed);
  t.eval_every = kv.get_uint("train.eval_every", t.eval_every);
  t.eval_samples = kv.get_uint("train.eval_samples", t.eval_samples);
  t.eval_epsilon_pixels = kv.get_number("train.eval_eps", t.eval_epsilon_pixels);
  t.validate();
  return t;
}

void put(KeyValues& kv, const TrainConfig& t) {
  kv.set_int("train.m", static_cast<std::int64_t>(t.m));
  kv.set_int("train.k", static_cast<std::int64_t>(t.k));
  kv.set_number("train.lambda", t.lambda);
  kv.set("train.attack", to_string(t.attack.method));
  if (t.attack.alpha) kv.set_number("train.alpha", kRange.data_to_pixels(*t.attack.alpha));
  if (t.attack.iters) kv.set_int("train.iters", static_cast<std::int64_t>(*t.attack.iters));
  kv.set("train.eps_schedule", t.eps_schedule.to_string());
  kv.set("train.delay_steps", std::to_string(t.delay_steps));
  if (t.optimizer.kind == OptimizerConfig::Kind::rmsprop) {
    kv.set("train.optimizer", "rmsprop");
    kv.set_number("train.decay", t.optimizer.decay);
    kv.set_number("train.opt_epsilon", t.optimizer.epsilon);
  } else {
    kv.set("train.optimizer", "sgd");
  }
  kv.set_number("train.lr", t.optimizer.lr);
  kv.set("train.steps", std::to_string(t.total_steps));
  kv.set_number("train.label_smoothing", t.label_smoothing);
  kv.set_number("train.weight_decay", t.weight_decay);
  kv.set("train.seed", std::to_string(t.seed));
  kv.set("train.eval_every", std::to_string(t.eval_every));
  kv.set_int("train.eval_samples", static_cast<std::int64_t>(t.eval_samples));
  kv.set_number("train.eval_eps", t.eval_epsilon_pixels);
}

// Budget list in data units, given as pixels (`eps`) or raw data values
// (`eps_raw`); the resolved form is written back as pixels or raw.
struct EpsList {
  std::vector<double> data;
  bool raw = false;
};

EpsList eps_settings(KeyValues& kv, const std::string& section, const std::string& fallback_px) {
  const std::string px_key = section + ".eps", raw_key = section + ".eps_raw";
  if (kv.has(px_key) && kv.has(raw_key)) {
    throw ValidationError("give either " + px_key + " (pixels) or " + raw_key + ", not both");
  }
  EpsList list;
  list.raw = kv.has(raw_key);
  const auto values = parse_number_list(list.raw ? kv.get(raw_key, "") : kv.get(px_key, fallback_px),
                                        list.raw ? raw_key : px_key);
  if (values.empty()) throw ValidationError(section + " needs at least one epsilon");
  for (double v : values) {
    if (!(v >= 0.0)) throw ValidationError(section + " epsilons must be >= 0");
    list.data.push_back(list.raw ? v : kRange.pixels_to_data(v));
  }
  std::string text;
  for (std::size_t i = 0; i < values.size(); ++i) text += (i ? "," : "") + format_double(values[i]);
  kv.set(list.raw ? raw_key : px_key, text);
  return list;
}

std::vector<GridPoint> grid_settings(const std::string& text, const std::string& key) {
  std::vector<GridPoint> grid;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(trim(item), ':');
    if (parts.size() != 2) {
      throw ValidationError(key + " entries look like method:eps_pixels, got '" + item + "'");
    }
    grid.push_back({parse_attack_method(trim(parts[0])),
                    parse_number_list(parts[1], key).at(0)});
  }
  if (grid.empty()) throw ValidationError(key + " is empty");
  return grid;
}

std::vector<AttackMethod> method_list(const std::string& text) {
  std::vector<AttackMethod> methods;
  for (const auto& item : split(text, ',')) methods.push_back(parse_attack_method(trim(item)));
  if (methods.empty()) throw ValidationError("method list is empty");
  return methods;
}

Model load_compatible(const std::string& path, const Dataset& data) {
  if (path.empty()) throw ValidationError("a checkpoint path is required");
  Model model = load_checkpoint(path);
  if (model.config().input_dim != data.dim() || model.config().num_classes != data.num_classes) {
    throw ValidationError("checkpoint " + path + " expects " +
                          std::to_string(model.config().input_dim) + " features and " +
                          std::to_string(model.config().num_classes) + " classes, data has " +
                          std::to_string(data.dim()) + " and " +
                          std::to_string(data.num_classes));
  }
  return model;
}

std::string model_id_for(const std::string& path) { return fs::path(path).stem().string(); }

// Raw dump of an adversarial batch: one text line "advx-tensor <rows> <cols>"
// followed by little-endian doubles.
void dump_tensor(const Tensor& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "advx-tensor " << t.dim(0) << ' ' << t.dim(1) << '\n';
  for (double v : t.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    out.write(bytes, 8);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ------------------------------------------------------------------ context

struct Context {
  KeyValues kv;  // resolved configuration
  fs::path out_dir;
  std::ostream& out;
};

void write_snapshot(const Context& ctx, const std::string& command) {
  fs::create_directories(ctx.out_dir);
  write_text(ctx.out_dir / "config.txt", "# advx " + command + "\n" + ctx.kv.to_string());
}

// --------------------------------------------------------------- commands

int cmd_train(Context& ctx) {
  const DataSettings d = data_settings(ctx.kv);
  const ModelConfig mc = model_settings(ctx.kv, d);
  const TrainConfig tc = train_settings(ctx.kv);
  put(ctx.kv, d);
  ctx.kv.merge(model_config_to_kv(mc));
  put(ctx.kv, tc);
  write_snapshot(ctx, "train");

  const Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  const std::uint64_t every = std::max<std::uint64_t>(1, tc.total_steps / 10);
  const TrainResult r = train(mc, tc, s.train, &s.test, [&](const StepRecord& rec) {
    if ((rec.step + 1) % every == 0) {
      ctx.out << "step " << rec.step + 1 << " loss " << format_double(rec.mixed_loss) << '\n';
    }
  });
  save_checkpoint(r.model, ctx.out_dir / "checkpoint.bin", r.rng_digest);
  write_text(ctx.out_dir / "train_log.csv", r.log.steps_csv());
  write_text(ctx.out_dir / "evals.csv", r.log.evals_csv());

  EvalReport report;
  report.records.push_back(accuracy(r.model, s.test, std::nullopt, 1, "final"));
  AttackSpec spec = tc.attack;
  spec.epsilon = kRange.pixels_to_data(tc.eval_epsilon_pixels);
  spec.rng_seed = tc.seed;
  report.records.push_back(accuracy(r.model, s.test, spec, 1, "final"));
  write_report(report, ctx.out_dir);
  ctx.out << "clean accuracy " << format_double(report.records[0].accuracy) << ", "
          << to_string(spec.method) << "@" << format_double(tc.eval_epsilon_pixels)
          << " accuracy " << format_double(report.records[1].accuracy) << '\n';
  ctx.out << "checkpoint digest " << file_digest(ctx.out_dir / "checkpoint.bin") << '\n';
  return kExitOk;
}

int cmd_attack(Context& ctx) {
  const DataSettings d = data_settings(ctx.kv);
  put(ctx.kv, d);
  const std::string ckpt = ctx.kv.get("attack.checkpoint", "");
  const AttackMethod method = parse_attack_method(ctx.kv.get("attack.method", "fgsm"));
  const EpsList eps = eps_settings(ctx.kv, "attack", "2,4,8,16");
  const auto alpha = optional_pixels(ctx.kv, "attack.alpha");
  std::optional<std::size_t> iters;
  if (ctx.kv.has("attack.iters")) iters = ctx.kv.get_uint("attack.iters", 0);
  const std::uint64_t seed = ctx.kv.get_uint("attack.seed", 0);
  const std::size_t topk = ctx.kv.get_uint("attack.topk", 1);
  const std::size_t n = ctx.kv.get_uint("attack.n", 0);
  const bool dump = ctx.kv.get("attack.dump", "false") == "true";
  ctx.kv.set("attack.method", to_string(method));
  ctx.kv.set("attack.seed", std::to_string(seed));
  ctx.kv.set_int("attack.topk", static_cast<std::int64_t>(topk));
  ctx.kv.set_int("attack.n", static_cast<std::int64_t>(n));
  ctx.kv.set("attack.dump", dump ? "true" : "false");
  if (ckpt.empty()) throw ValidationError("attack needs --checkpoint");
  write_snapshot(ctx, "attack");

  Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  const Dataset test = limit(std::move(s.test), n, seed);
  const Model model = load_compatible(ckpt, test);
  const std::string id = model_id_for(ckpt);

  EvalReport report;
  report.records.push_back(accuracy(model, test, std::nullopt, topk, id));
  for (double e : eps.data) {
    AttackSpec spec{method, e, alpha ? std::optional(kRange.pixels_to_data(*alpha)) : std::nullopt,
                    iters, seed};
    spec.validate();
    report.records.push_back(accuracy(model, test, spec, topk, id));
    const auto& rec = report.records.back();
    ctx.out << rec.method << " eps " << format_double(rec.epsilon_pixel) << " accuracy "
            << format_double(rec.accuracy) << '\n';
    if (dump) {
      const auto set = make_adversarial_set(model, test, spec);
      dump_tensor(set.adv, ctx.out_dir / ("adv_" + rec.method + "_eps" +
                                          format_double(rec.epsilon_pixel) + ".bin"));
    }
  }
  write_report(report, ctx.out_dir);
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  const DataSettings d = data_settings(ctx.kv);
  put(ctx.kv, d);
  const std::string ckpt = ctx.kv.get("eval.checkpoint", "");
  const std::string grid_text =
      ctx.kv.get("eval.grid", "fgsm:2,fgsm:4,fgsm:8,fgsm:16,step_ll:2,step_ll:4,step_ll:8,"
                              "step_ll:16,iter_basic:16,iter_ll:16");
  const auto grid = grid_settings(grid_text, "eval.grid");
  const std::size_t topk = ctx.kv.get_uint("eval.topk", 1);
  const std::size_t n = ctx.kv.get_uint("eval.n", 0);
  const std::uint64_t seed = ctx.kv.get_uint("eval.seed", 0);
  const std::string id = ctx.kv.get("eval.model_id", ckpt.empty() ? "" : model_id_for(ckpt));
  ctx.kv.set("eval.grid", grid_text);
  ctx.kv.set_int("eval.topk", static_cast<std::int64_t>(topk));
  ctx.kv.set_int("eval.n", static_cast<std::int64_t>(n));
  ctx.kv.set("eval.seed", std::to_string(seed));
  ctx.kv.set("eval.model_id", id);
  if (ckpt.empty()) throw ValidationError("eval needs --checkpoint");
  write_snapshot(ctx, "eval");

  Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  const Dataset test = limit(std::move(s.test), n, seed);
  const Model model = load_compatible(ckpt, test);
  const EvalReport report = attack_table(model, test, grid, id, topk, seed);
  for (const auto& rec : report.records) {
    ctx.out << rec.method << " eps " << format_double(rec.epsilon_pixel) << " accuracy "
            << format_double(rec.accuracy) << '\n';
  }
  write_report(report, ctx.out_dir);
  return kExitOk;
}

int cmd_transfer(Context& ctx) {
  const DataSettings d = data_settings(ctx.kv);
  put(ctx.kv, d);
  const std::string source = ctx.kv.get("transfer.source", "");
  std::vector<std::string> targets;
  for (const auto& t : split(ctx.kv.get("transfer.targets", ""), ',')) {
    if (!trim(t).empty()) targets.push_back(trim(t));
  }
  const std::string methods_text = ctx.kv.get("transfer.methods", "fgsm,iter_basic,iter_ll");
  const auto methods = method_list(methods_text);
  const EpsList eps = eps_settings(ctx.kv, "transfer", "16");
  const std::size_t n = ctx.kv.get_uint("transfer.n", 1000);
  const std::size_t topk = ctx.kv.get_uint("transfer.topk", 1);
  const std::uint64_t seed = ctx.kv.get_uint("transfer.seed", 0);
  ctx.kv.set("transfer.methods", methods_text);
  ctx.kv.set_int("transfer.n", static_cast<std::int64_t>(n));
  ctx.kv.set_int("transfer.topk", static_cast<std::int64_t>(topk));
  ctx.kv.set("transfer.seed", std::to_string(seed));
  if (source.empty()) throw ValidationError("transfer needs --source");
  if (targets.empty()) throw ValidationError("transfer needs at least one --target");
  if (n < 100) throw ValidationError("transfer.n must be at least 100");
  write_snapshot(ctx, "transfer");

  Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  if (s.test.size() < n) {
    throw ValidationError("transfer.n=" + std::to_string(n) + " exceeds the test split");
  }
  const Dataset sample = limit(std::move(s.test), n, seed);

  // Distinct ids even when two checkpoints share a file name.
  std::map<std::string, int> seen;
  auto unique_id = [&](const std::string& path) {
    std::string id = model_id_for(path);
    if (seen[id]++ > 0) id = path;
    return id;
  };
  std::map<std::string, std::string> id_of;
  std::vector<std::pair<std::string, Model>> loaded;
  auto ensure = [&](const std::string& path) -> const Model& {
    for (auto& [p, m] : loaded) {
      if (p == path) return m;
    }
    id_of[path] = unique_id(path);
    loaded.emplace_back(path, load_compatible(path, sample));
    return loaded.back().second;
  };
  loaded.reserve(targets.size() + 1);
  ensure(source);
  for (const auto& t : targets) ensure(t);

  std::vector<NamedModel> named;
  for (const auto& t : targets) named.push_back({id_of[t], &ensure(t)});
  const NamedModel src{id_of[source], &ensure(source)};

  EvalReport report;
  for (const auto& [path, model] : loaded) {
    report.records.push_back(accuracy(model, sample, std::nullopt, topk, id_of[path]));
  }
  for (AttackMethod method : methods) {
    for (double e : eps.data) {
      const AttackSpec spec{method, e, std::nullopt, std::nullopt, seed};
      for (auto& m : transfer_matrices(src, named, sample, spec, topk)) {
        for (const auto& cell : m.cells) {
          ctx.out << to_string(m.kind) << ' ' << m.method << " eps "
                  << format_double(m.epsilon_pixel) << ' ' << cell.source << "->" << cell.target
                  << ' ' << (cell.rate ? format_double(*cell.rate) : kUndefined) << " ("
                  << cell.numerator << '/' << cell.denominator << ")\n";
        }
        report.transfers.push_back(std::move(m));
      }
    }
  }
  write_report(report, ctx.out_dir);
  return kExitOk;
}

int cmd_sweep(Context& ctx) {
  const std::string kind = ctx.kv.get("sweep.kind", "");
  if (kind != "capacity" && kind != "kfrac" && kind != "activation") {
    throw ValidationError("sweep kind must be capacity, kfrac or activation, got '" + kind + "'");
  }
  // A k sweep supplies its own k values; train.k plays no part in it.
  if (kind == "kfrac") ctx.kv.set("train.k", "0");
  const DataSettings d = data_settings(ctx.kv);
  const ModelConfig mc = model_settings(ctx.kv, d);
  const TrainConfig tc = train_settings(ctx.kv);
  const std::string grid_text = ctx.kv.get("sweep.grid", "step_ll:16");
  const auto grid = grid_settings(grid_text, "sweep.grid");
  put(ctx.kv, d);
  ctx.kv.merge(model_config_to_kv(mc));
  put(ctx.kv, tc);
  ctx.kv.set("sweep.grid", grid_text);

  std::vector<double> rhos;
  std::vector<std::size_t> ks;
  std::vector<ActivationKind> acts;
  if (kind == "capacity") {
    rhos = ctx.kv.get_numbers("sweep.rhos", {0.5, 1.0, 2.0});
    if (rhos.empty()) throw ValidationError("sweep.rhos is empty");
    std::string text;
    for (double r : rhos) text += (text.empty() ? "" : ",") + format_double(r);
    ctx.kv.set("sweep.rhos", text);
  } else if (kind == "kfrac") {
    if (ctx.kv.has("sweep.ks")) {
      ks = ctx.kv.get_sizes("sweep.ks", {});
    } else {
      // Rows of the reference table, expressed for a minibatch of 32.
      for (std::size_t base : {0, 4, 8, 16, 24, 32}) {
        const std::size_t k = (base * tc.m + 16) / 32;
        if (ks.empty() || ks.back() != k) ks.push_back(k);
      }
    }
    if (ks.empty()) throw ValidationError("sweep.ks is empty");
    std::string text;
    for (std::size_t k : ks) {
      if (k > tc.m) throw ValidationError("sweep.ks entry " + std::to_string(k) + " exceeds m");
      text += (text.empty() ? "" : ",") + std::to_string(k);
    }
    ctx.kv.set("sweep.ks", text);
    ctx.kv.erase("train.k");
  } else {
    const std::string text = ctx.kv.get("sweep.activations", "relu,tanh");
    for (const auto& a : split(text, ',')) acts.push_back(ActivationKind::parse(trim(a)));
    if (acts.empty()) throw ValidationError("sweep.activations is empty");
    ctx.kv.set("sweep.activations", text);
  }
  write_snapshot(ctx, "sweep " + kind);

  const Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  const SweepData data{&s.train, &s.test};
  auto progress = [&](const std::string& msg) { ctx.out << msg << '\n' << std::flush; };
  EvalReport report;
  if (kind == "capacity") {
    TrainConfig clean = tc;
    clean.k = 0;
    report = capacity_sweep(mc, rhos, clean, tc, grid, data, progress);
  } else if (kind == "kfrac") {
    report = kfrac_sweep(mc, ks, tc, grid, data, progress);
  } else {
    report = activation_comparison(mc, acts, tc, grid, data, progress);
  }
  for (const auto& rec : report.records) {
    ctx.out << rec.model_id << ' ' << rec.method << " eps " << format_double(rec.epsilon_pixel)
            << " accuracy " << format_double(rec.accuracy) << '\n';
  }
  write_report(report, ctx.out_dir);
  return kExitOk;
}

int cmd_leak(Context& ctx) {
  const DataSettings d = data_settings(ctx.kv);
  put(ctx.kv, d);
  const std::string ckpt = ctx.kv.get("leak.checkpoint", "");
  if (!ctx.kv.has("leak.eps") && !ctx.kv.has("leak.eps_raw")) {
    ctx.kv.set("leak.eps_raw", "0.1,0.2,0.3,0.4");
  }
  const EpsList eps = eps_settings(ctx.kv, "leak", "");
  const AttackMethod true_label = parse_attack_method(ctx.kv.get("leak.true_label", "fgsm"));
  const AttackMethod label_free = parse_attack_method(ctx.kv.get("leak.label_free", "fgsm_pred"));
  if (!is_one_step(true_label) || !is_one_step(label_free)) {
    throw ValidationError("leak.true_label and leak.label_free must be one-step methods");
  }
  const std::size_t n = ctx.kv.get_uint("leak.n", 0);
  const std::uint64_t seed = ctx.kv.get_uint("leak.seed", 0);
  ctx.kv.set("leak.true_label", to_string(true_label));
  ctx.kv.set("leak.label_free", to_string(label_free));
  ctx.kv.set_int("leak.n", static_cast<std::int64_t>(n));
  ctx.kv.set("leak.seed", std::to_string(seed));
  if (ckpt.empty()) throw ValidationError("leak needs --checkpoint");
  write_snapshot(ctx, "leak");

  Splits s = load_data(d);
  write_dataset_digests(ctx.out_dir, s);
  const Dataset test = limit(std::move(s.test), n, seed);
  const Model model = load_compatible(ckpt, test);
  const std::string id = model_id_for(ckpt);

  EvalReport report;
  const AccuracyRecord clean = accuracy(model, test, std::nullopt, 1, id);
  report.records.push_back(clean);
  std::vector<std::string> flagged;
  for (double e : eps.data) {
    LeakRecord leak = label_leak_count(model, test, e, true_label, label_free, id);
    const AttackSpec spec{true_label, e, std::nullopt, std::nullopt, 0};
    const AccuracyRecord adv = accuracy(model, test, spec, 1, id);
    report.records.push_back(adv);
    const bool exceeds = adv.accuracy > clean.accuracy;
    report.derived.push_back(DerivedMetric{"adv_exceeds_clean", id, adv.method,
                                           adv.epsilon_pixel, 1, exceeds ? 1.0 : 0.0, test.size()});
    const std::string shown = eps.raw ? format_double(e) : format_double(leak.epsilon_pixel);
    if (exceeds) flagged.push_back(shown);
    ctx.out << "eps " << shown << " leaked " << leak.count << " of " << leak.clean_correct
            << " clean-correct; " << to_string(true_label) << " accuracy "
            << format_double(adv.accuracy) << " vs clean " << format_double(clean.accuracy)
            << '\n';
    report.leaks.push_back(std::move(leak));
  }
  if (flagged.empty()) {
    ctx.out << "no epsilon with adversarial accuracy above clean accuracy\n";
  } else {
    ctx.out << "adversarial accuracy above clean accuracy at eps";
    for (const auto& f : flagged) ctx.out << ' ' << f;
    ctx.out << '\n';
  }
  write_report(report, ctx.out_dir);
  return kExitOk;
}

// ------------------------------------------------------------------ parser

void add_common(CLI::App* sub, Overrides& ov, std::string& config_path, std::string& out_dir) {
  sub->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--out", out_dir, "output directory")->required();
  bind_flag(sub, ov, "--data", "data.source", "mnist or synth");
  bind_flag(sub, ov, "--mnist-dir", "data.mnist_dir", "directory with the MNIST IDX files");
  bind_flag(sub, ov, "--train-n", "data.train_n", "random training subset size (0: all)");
  bind_flag(sub, ov, "--test-n", "data.test_n", "random test subset size (0: all)");
  bind_flag(sub, ov, "--data-seed", "data.seed", "seed for synthetic data and subsets");
}

void add_training(CLI::App* sub, Overrides& ov) {
  bind_flag(sub, ov, "--hidden", "model.hidden_widths", "base hidden widths, e.g. 512,256");
  bind_flag(sub, ov, "--rho", "model.rho", "width multiplier");
  bind_flag(sub, ov, "--extra-blocks", "model.extra_blocks", "additional hidden layers");
  bind_flag(sub, ov, "--activation", "model.activation", "relu, relu6, tanh, elu, relu_decay:<beta>");
  bind_flag(sub, ov, "--dropout", "model.dropout_rate", "dropout rate");
  sub->add_option_function<std::string>(
      "--seed",
      [&ov](const std::string& v) {
        ov.set("model.seed", v);
        ov.set("train.seed", v);
      },
      "seed for initialization and training");
  bind_flag(sub, ov, "--m", "train.m", "minibatch size");
  bind_flag(sub, ov, "--k", "train.k", "adversarial examples per minibatch");
  bind_flag(sub, ov, "--lambda", "train.lambda", "weight of adversarial examples");
  bind_flag(sub, ov, "--attack", "train.attack", "attack used to build training examples");
  bind_flag(sub, ov, "--alpha", "train.alpha", "iterative step size in pixels");
  bind_flag(sub, ov, "--iters", "train.iters", "iteration count override");
  bind_flag(sub, ov, "--eps-schedule", "train.eps_schedule",
       "fixed:<px> or truncnormal[:<sigma>:<bound>]");
  bind_flag(sub, ov, "--delay", "train.delay_steps", "clean-only steps before adversarial training");
  bind_flag(sub, ov, "--optimizer", "train.optimizer", "rmsprop or sgd");
  bind_flag(sub, ov, "--lr", "train.lr", "learning rate");
  bind_flag(sub, ov, "--steps", "train.steps", "training steps");
  bind_flag(sub, ov, "--label-smoothing", "train.label_smoothing", "label smoothing s");
  bind_flag(sub, ov, "--weight-decay", "train.weight_decay", "L2 coefficient on weights");
  bind_flag(sub, ov, "--eval-every", "train.eval_every", "validation period in steps");
  bind_flag(sub, ov, "--eval-samples", "train.eval_samples", "validation examples");
  bind_flag(sub, ov, "--eval-eps", "train.eval_eps", "validation attack budget in pixels");
}

void add_eps(CLI::App* sub, Overrides& ov, const std::string& section) {
  bind_flag(sub, ov, "--eps", section + ".eps", "budgets in pixel units, e.g. 2,4,8,16");
  bind_flag(sub, ov, "--eps-raw", section + ".eps_raw", "budgets in data units, e.g. 0.3");
}

int dispatch(int argc, const char* const argv[], std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial training and evaluation of small dense networks"};
  app.require_subcommand(1);
  Overrides ov;
  std::string config_path, out_dir;

  auto* train_cmd = app.add_subcommand("train", "train a model, optionally adversarially");
  add_common(train_cmd, ov, config_path, out_dir);
  add_training(train_cmd, ov);

  auto* attack_cmd = app.add_subcommand("attack", "attack a checkpoint over a budget list");
  add_common(attack_cmd, ov, config_path, out_dir);
  bind_flag(attack_cmd, ov, "--checkpoint", "attack.checkpoint", "model checkpoint");
  bind_flag(attack_cmd, ov, "--method", "attack.method", "attack method");
  add_eps(attack_cmd, ov, "attack");
  bind_flag(attack_cmd, ov, "--alpha", "attack.alpha", "iterative step size in pixels");
  bind_flag(attack_cmd, ov, "--iters", "attack.iters", "iteration count override");
  bind_flag(attack_cmd, ov, "--topk", "attack.topk", "top-k level");
  bind_flag(attack_cmd, ov, "--n", "attack.n", "random test subset size (0: all)");
  bind_flag(attack_cmd, ov, "--seed", "attack.seed", "attack and subset seed");
  attack_cmd->add_flag_callback("--dump", [&ov] { ov.set("attack.dump", "true"); },
                                "write adversarial batches");

  auto* eval_cmd = app.add_subcommand("eval", "attack table with accuracy ratios");
  add_common(eval_cmd, ov, config_path, out_dir);
  bind_flag(eval_cmd, ov, "--checkpoint", "eval.checkpoint", "model checkpoint");
  bind_flag(eval_cmd, ov, "--grid", "eval.grid", "method:eps_pixels list");
  bind_flag(eval_cmd, ov, "--topk", "eval.topk", "top-k level");
  bind_flag(eval_cmd, ov, "--n", "eval.n", "random test subset size (0: all)");
  bind_flag(eval_cmd, ov, "--seed", "eval.seed", "attack and subset seed");
  bind_flag(eval_cmd, ov, "--model-id", "eval.model_id", "id used in the report");

  auto* transfer_cmd = app.add_subcommand("transfer", "transfer matrices between checkpoints");
  add_common(transfer_cmd, ov, config_path, out_dir);
  bind_flag(transfer_cmd, ov, "--source", "transfer.source", "source checkpoint");
  std::vector<std::string> target_flags;
  transfer_cmd->add_option("--target", target_flags, "target checkpoint (repeatable)");
  bind_flag(transfer_cmd, ov, "--methods", "transfer.methods", "attack methods");
  add_eps(transfer_cmd, ov, "transfer");
  bind_flag(transfer_cmd, ov, "--n", "transfer.n", "sample size");
  bind_flag(transfer_cmd, ov, "--topk", "transfer.topk", "top-k level");
  bind_flag(transfer_cmd, ov, "--seed", "transfer.seed", "attack and sample seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "capacity, kfrac or activation sweep");
  add_common(sweep_cmd, ov, config_path, out_dir);
  add_training(sweep_cmd, ov);
  sweep_cmd->add_option_function<std::string>(
      "kind", [&ov](const std::string& v) { ov.set("sweep.kind", v); },
      "capacity, kfrac or activation");
  bind_flag(sweep_cmd, ov, "--rhos", "sweep.rhos", "width multipliers");
  bind_flag(sweep_cmd, ov, "--ks", "sweep.ks", "adversarial counts per minibatch");
  bind_flag(sweep_cmd, ov, "--activations", "sweep.activations", "activation list");
  bind_flag(sweep_cmd, ov, "--grid", "sweep.grid", "method:eps_pixels list");

  auto* leak_cmd = app.add_subcommand("leak", "label leaking counts per budget");
  add_common(leak_cmd, ov, config_path, out_dir);
  bind_flag(leak_cmd, ov, "--checkpoint", "leak.checkpoint", "model checkpoint");
  add_eps(leak_cmd, ov, "leak");
  bind_flag(leak_cmd, ov, "--true-label", "leak.true_label", "one-step method using the label");
  bind_flag(leak_cmd, ov, "--label-free", "leak.label_free", "one-step method without the label");
  bind_flag(leak_cmd, ov, "--n", "leak.n", "random test subset size (0: all)");
  bind_flag(leak_cmd, ov, "--seed", "leak.seed", "subset seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }
  if (!target_flags.empty()) {
    std::string joined;
    for (const auto& t : target_flags) joined += (joined.empty() ? "" : ",") + t;
    ov.set("transfer.targets", joined);
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();

  KeyValues kv;
  if (!config_path.empty()) kv = KeyValues::load(config_path);
  for (const std::string section : {"attack", "transfer", "leak"}) {
    const bool px = ov.has(section + ".eps"), raw = ov.has(section + ".eps_raw");
    if (px && raw) throw ValidationError("--eps and --eps-raw cannot be given together");
    if (px) kv.erase(section + ".eps_raw");
    if (raw) kv.erase(section + ".eps");
  }
  for (const auto& key : ov.order) kv.set(key, ov.values.at(key));
  reject_unknown_keys(kv);

  Context ctx{kv, out_dir, out};
  if (command == "train") return cmd_train(ctx);
  if (command == "attack") return cmd_attack(ctx);
  if (command == "eval") return cmd_eval(ctx);
  if (command == "transfer") return cmd_transfer(ctx);
  if (command == "sweep") return cmd_sweep(ctx);
  return cmd_leak(ctx);
}

}  // namespace

int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace advx::cli
