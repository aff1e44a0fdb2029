#include "advx/data_io.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

namespace advx {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------- datasets

void Dataset::validate() const {
  if (features.rank() != 2) {
    throw std::invalid_argument("dataset features must be [n, d], got " +
                                shape_to_string(features.shape()));
  }
  if (features.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(features.dim(0)) +
                                " feature rows but " + std::to_string(labels.size()) +
                                " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("label of example " + std::to_string(i) +
                                  " outside [0, num_classes)");
    }
  }
  for (double v : features.data()) {
    if (!(v >= range.lo && v <= range.hi)) {
      throw std::invalid_argument("dataset feature outside the declared range");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = features.gather_rows(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.num_classes = num_classes;
  out.split = split;
  out.provenance = provenance + " subset(" + std::to_string(indices.size()) + ")";
  out.range = range;
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

std::vector<unsigned char> read_all(const std::string& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IdxError(IdxError::Kind::io, "cannot open " + path);
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  int got = 0;
  while ((got = gzread(f.get(), buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + got);
  if (got < 0) throw IdxError(IdxError::Kind::truncated, "corrupt compressed stream in " + path);
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (img.size() < 16) throw IdxError(IdxError::Kind::truncated, images_path + ": header truncated");
  if (lab.size() < 8) throw IdxError(IdxError::Kind::truncated, labels_path + ": header truncated");

  if (const auto magic = be32(img, 0); magic != 0x00000803) {
    std::ostringstream os;
    os << images_path << ": wrong magic 0x" << std::hex << magic << " (expected 0x00000803)";
    throw IdxError(IdxError::Kind::wrong_magic, os.str());
  }
  if (const auto magic = be32(lab, 0); magic != 0x00000801) {
    std::ostringstream os;
    os << labels_path << ": wrong magic 0x" << std::hex << magic << " (expected 0x00000801)";
    throw IdxError(IdxError::Kind::wrong_magic, os.str());
  }
  const std::size_t n = be32(img, 4);
  const std::size_t rows = be32(img, 8);
  const std::size_t cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) {
    throw IdxError(IdxError::Kind::count_mismatch,
                   "image count " + std::to_string(n) + " does not match label count " +
                       std::to_string(n_labels));
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) {
    throw IdxError(IdxError::Kind::truncated, images_path + ": expected " +
                                                  std::to_string(n * d) + " pixel bytes, found " +
                                                  std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + n) {
    throw IdxError(IdxError::Kind::truncated, labels_path + ": expected " + std::to_string(n) +
                                                  " label bytes, found " +
                                                  std::to_string(lab.size() - 8));
  }

  Dataset ds;
  ds.features = Tensor({n, d});
  auto f = ds.features.data();
  for (std::size_t i = 0; i < n * d; ++i) f[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  ds.split = split;
  ds.provenance = "idx:" + images_path;
  ds.range = DataRange{0.0, 1.0};
  return ds;
}

Dataset load_mnist(const fs::path& dir, const std::string& split) {
  const std::string stem = split == "test" ? "t10k" : split;
  if (stem != "train" && stem != "t10k") {
    throw std::invalid_argument("MNIST split must be 'train' or 'test', got '" + split + "'");
  }
  auto pick = [&](const std::string& name) {
    const fs::path plain = dir / name;
    if (fs::exists(plain)) return plain.string();
    const fs::path gz = dir / (name + ".gz");
    if (fs::exists(gz)) return gz.string();
    throw IdxError(IdxError::Kind::io, "missing MNIST file " + plain.string() + "[.gz]");
  };
  Dataset ds = load_idx(pick(stem + "-images-idx3-ubyte"), pick(stem + "-labels-idx1-ubyte"),
                        split);
  ds.provenance = "mnist:" + split;
  return ds;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                    double spread, std::uint64_t seed) {
  if (dim < 2) throw std::invalid_argument("synth_blobs: dimension must be at least 2");
  if (num_classes == 0) throw std::invalid_argument("synth_blobs: need at least one class");
  if (!(spread >= 0.0)) throw std::invalid_argument("synth_blobs: spread must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> center_dist(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor centers({num_classes, dim});
  for (double& c : centers.data()) c = center_dist(rng);

  Dataset ds;
  const std::size_t n = num_classes * per_class;
  ds.features = Tensor({n, dim});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % num_classes;
    ds.labels[i] = static_cast<int>(cls);
    auto row = ds.features.row(i);
    auto center = centers.row(cls);
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = center[j] + (spread > 0.0 ? spread * noise(rng) : 0.0);
      row[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  ds.num_classes = num_classes;
  ds.split = "synth";
  ds.provenance = "synth_blobs(classes=" + std::to_string(num_classes) +
                  ",per_class=" + std::to_string(per_class) + ",dim=" + std::to_string(dim) +
                  ",spread=" + format_double(spread) + ",seed=" + std::to_string(seed) + ")";
  ds.range = DataRange{0.0, 1.0};
  return ds;
}

std::string sha256_hex(const void* bytes, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes, size, digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

namespace {

void append_le64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void append_double_le(std::string& out, double v) { append_le64(out, std::bit_cast<std::uint64_t>(v)); }

double read_double_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(p[i])} << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::string dataset_digest(const Dataset& data) {
  std::string bytes;
  bytes.reserve(data.features.size() * 8 + data.labels.size() * 8 + 32);
  append_le64(bytes, data.size());
  append_le64(bytes, data.dim());
  append_le64(bytes, data.num_classes);
  for (double v : data.features.data()) append_double_le(bytes, v);
  for (int y : data.labels) append_le64(bytes, static_cast<std::uint64_t>(y));
  return sha256_hex(bytes.data(), bytes.size());
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed) {
  std::vector<std::size_t> all(population);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (n >= population) return all;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(n);
  std::sort(all.begin(), all.end());
  return all;
}

// ------------------------------------------------------------- checkpoints

KeyValues model_config_to_kv(const ModelConfig& config, const std::string& prefix) {
  KeyValues kv;
  kv.set_int(prefix + "input_dim", static_cast<std::int64_t>(config.input_dim));
  kv.set_int(prefix + "num_classes", static_cast<std::int64_t>(config.num_classes));
  std::string widths;
  for (std::size_t i = 0; i < config.hidden_widths.size(); ++i) {
    if (i) widths += ',';
    widths += std::to_string(config.hidden_widths[i]);
  }
  kv.set(prefix + "hidden_widths", widths);
  kv.set_number(prefix + "rho", config.rho);
  kv.set_int(prefix + "extra_blocks", static_cast<std::int64_t>(config.extra_blocks));
  kv.set(prefix + "activation", config.activation.to_string());
  kv.set_number(prefix + "dropout_rate", config.dropout_rate);
  kv.set(prefix + "seed", std::to_string(config.seed));
  return kv;
}

ModelConfig model_config_from_kv(const KeyValues& kv, const std::string& prefix,
                                 const ModelConfig& defaults) {
  ModelConfig c = defaults;
  auto non_negative = [&](const std::string& key, std::size_t fallback) {
    const auto v = kv.get_int(prefix + key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw std::invalid_argument(prefix + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.input_dim = non_negative("input_dim", c.input_dim);
  c.num_classes = non_negative("num_classes", c.num_classes);
  c.hidden_widths = kv.get_sizes(prefix + "hidden_widths", c.hidden_widths);
  c.rho = kv.get_number(prefix + "rho", c.rho);
  c.extra_blocks = non_negative("extra_blocks", c.extra_blocks);
  if (kv.has(prefix + "activation")) {
    c.activation = ActivationKind::parse(kv.get(prefix + "activation", "relu"));
  }
  c.dropout_rate = kv.get_number(prefix + "dropout_rate", c.dropout_rate);
  c.seed = kv.get_uint(prefix + "seed", c.seed);
  return c;
}

namespace {
constexpr const char* kCheckpointMagic = "advx-checkpoint";
constexpr const char* kHeaderEnd = "end_header";
}  // namespace

void save_checkpoint(const Model& model, const fs::path& path, const std::string& rng_digest) {
  KeyValues header = model_config_to_kv(model.config());
  header.set_int("format_version", kCheckpointVersion);
  header.set("train_steps_done", std::to_string(model.train_steps_done()));
  header.set("rng_digest", rng_digest.empty() ? "none" : rng_digest);
  const auto specs = param_specs(model.config());
  header.set_int("param.count", static_cast<std::int64_t>(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::string dims;
    for (std::size_t d = 0; d < specs[i].shape.size(); ++d) {
      if (d) dims += ',';
      dims += std::to_string(specs[i].shape[d]);
    }
    header.set("param." + std::to_string(i) + ".name", specs[i].name);
    header.set("param." + std::to_string(i) + ".shape", dims);
  }

  std::string bytes = std::string(kCheckpointMagic) + "\n" + header.to_string() + kHeaderEnd + "\n";
  for (const Tensor& p : model.params()) {
    for (double v : p.data()) append_double_le(bytes, v);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const std::string magic_line = std::string(kCheckpointMagic) + "\n";
  if (bytes.rfind(magic_line, 0) != 0) {
    throw CheckpointError(CheckpointError::Kind::parse, path.string() + " is not a checkpoint");
  }
  const std::string end_marker = std::string("\n") + kHeaderEnd + "\n";
  const auto end = bytes.find(end_marker);
  if (end == std::string::npos) {
    throw CheckpointError(CheckpointError::Kind::parse, path.string() + ": header not terminated");
  }
  KeyValues header;
  try {
    header = KeyValues::parse(bytes.substr(magic_line.size(), end + 1 - magic_line.size()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::parse, e.what());
  }
  const std::size_t blob_start = end + end_marker.size();

  const auto version = header.get_int("format_version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          "checkpoint format_version " + std::to_string(version) +
                              ", this build reads version " +
                              std::to_string(kCheckpointVersion));
  }

  ModelConfig config;
  try {
    config = model_config_from_kv(header);
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Kind::parse, std::string("bad model config: ") + e.what());
  }

  const auto specs = param_specs(config);
  const auto stored = header.get_int("param.count", -1);
  if (stored != static_cast<std::int64_t>(specs.size())) {
    throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                          "checkpoint stores " + std::to_string(stored) +
                              " parameters, config implies " + std::to_string(specs.size()));
  }
  std::size_t expected_doubles = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const std::string key = "param." + std::to_string(i);
    const std::string name = header.get(key + ".name", "");
    std::vector<std::size_t> shape;
    try {
      shape = header.get_sizes(key + ".shape", {});
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(CheckpointError::Kind::parse, e.what());
    }
    if (name != specs[i].name || shape != specs[i].shape) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "parameter " + specs[i].name + ": stored as '" + name + "' " +
                                shape_to_string(shape) + ", config implies " +
                                shape_to_string(specs[i].shape));
    }
    expected_doubles += shape_size(shape);
  }

  const std::size_t blob_bytes = bytes.size() - blob_start;
  if (blob_bytes != expected_doubles * 8) {
    throw CheckpointError(CheckpointError::Kind::corrupt_blob_length,
                          "corrupt blob length: expected " + std::to_string(expected_doubles * 8) +
                              " bytes, found " + std::to_string(blob_bytes));
  }

  std::vector<Tensor> params;
  const char* p = bytes.data() + blob_start;
  for (const auto& spec : specs) {
    Tensor t(spec.shape);
    for (double& v : t.data()) {
      v = read_double_le(p);
      p += 8;
    }
    params.push_back(std::move(t));
  }
  Checkpoint ck{Model(config, std::move(params), header.get_uint("train_steps_done", 0)),
                header.get("rng_digest", "none")};
  return ck;
}

Model load_checkpoint(const fs::path& path) { return read_checkpoint(path).model; }

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes.data(), bytes.size());
}

// ----------------------------------------------------------------- reports

namespace {

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(kUndefined);
}

std::optional<double> read_optional(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != kUndefined) {
      throw std::invalid_argument("unexpected rate string '" + j.get<std::string>() + "'");
    }
    return std::nullopt;
  }
  return j.get<double>();
}

std::string optional_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string(kUndefined);
}

}  // namespace

std::string report_csv(const EvalReport& report) {
  std::string out = "model_id,method,epsilon_pixel,topk,accuracy,n\n";
  for (const auto& r : report.records) {
    out += r.model_id + "," + r.method + "," + format_double(r.epsilon_pixel) + "," +
           std::to_string(r.topk) + "," + format_double(r.accuracy) + "," + std::to_string(r.n) +
           "\n";
  }
  return out;
}

std::vector<AccuracyRecord> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<AccuracyRecord> out;
  if (!std::getline(in, line) || line != "model_id,method,epsilon_pixel,topk,accuracy,n") {
    throw std::invalid_argument("report CSV: unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw std::invalid_argument("report CSV: expected 6 fields: " + line);
    AccuracyRecord r;
    r.model_id = f[0];
    r.method = f[1];
    r.epsilon_pixel = parse_number_list(f[2], "epsilon_pixel").at(0);
    r.topk = static_cast<std::size_t>(std::stoull(f[3]));
    r.accuracy = parse_number_list(f[4], "accuracy").at(0);
    r.n = static_cast<std::size_t>(std::stoull(f[5]));
    out.push_back(std::move(r));
  }
  return out;
}

std::string report_json(const EvalReport& report) {
  json j;
  j["records"] = json::array();
  for (const auto& r : report.records) {
    j["records"].push_back({{"model_id", r.model_id},
                            {"method", r.method},
                            {"epsilon_pixel", r.epsilon_pixel},
                            {"topk", r.topk},
                            {"accuracy", r.accuracy},
                            {"n", r.n}});
  }
  j["derived"] = json::array();
  for (const auto& d : report.derived) {
    j["derived"].push_back({{"name", d.name},
                            {"model_id", d.model_id},
                            {"method", d.method},
                            {"epsilon_pixel", d.epsilon_pixel},
                            {"topk", d.topk},
                            {"value", optional_number(d.value)},
                            {"denominator", d.denominator}});
  }
  j["leaks"] = json::array();
  for (const auto& l : report.leaks) {
    j["leaks"].push_back({{"model_id", l.model_id},
                          {"epsilon_pixel", l.epsilon_pixel},
                          {"count", l.count},
                          {"clean_correct", l.clean_correct},
                          {"clean_accuracy", l.clean_accuracy},
                          {"true_label_accuracy", l.true_label_accuracy},
                          {"label_free_accuracy", l.label_free_accuracy},
                          {"leaked_ids", l.leaked_ids}});
  }
  j["transfers"] = json::array();
  for (const auto& t : report.transfers) {
    json cells = json::array();
    for (const auto& c : t.cells) {
      cells.push_back({{"source", c.source},
                       {"target", c.target},
                       {"rate", optional_number(c.rate)},
                       {"numerator", c.numerator},
                       {"denominator", c.denominator}});
    }
    j["transfers"].push_back({{"kind", to_string(t.kind)},
                              {"method", t.method},
                              {"epsilon_pixel", t.epsilon_pixel},
                              {"topk", t.topk},
                              {"cells", cells}});
  }
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport report;
  for (const auto& r : j.at("records")) {
    report.records.push_back({r.at("model_id").get<std::string>(),
                              r.at("method").get<std::string>(),
                              r.at("epsilon_pixel").get<double>(),
                              r.at("topk").get<std::size_t>(),
                              r.at("accuracy").get<double>(),
                              r.at("n").get<std::size_t>()});
  }
  for (const auto& d : j.at("derived")) {
    report.derived.push_back({d.at("name").get<std::string>(),
                              d.at("model_id").get<std::string>(),
                              d.at("method").get<std::string>(),
                              d.at("epsilon_pixel").get<double>(),
                              d.at("topk").get<std::size_t>(),
                              read_optional(d.at("value")),
                              d.at("denominator").get<std::size_t>()});
  }
  for (const auto& l : j.at("leaks")) {
    LeakRecord rec;
    rec.model_id = l.at("model_id").get<std::string>();
    rec.epsilon_pixel = l.at("epsilon_pixel").get<double>();
    rec.count = l.at("count").get<std::size_t>();
    rec.clean_correct = l.at("clean_correct").get<std::size_t>();
    rec.clean_accuracy = l.at("clean_accuracy").get<double>();
    rec.true_label_accuracy = l.at("true_label_accuracy").get<double>();
    rec.label_free_accuracy = l.at("label_free_accuracy").get<double>();
    rec.leaked_ids = l.at("leaked_ids").get<std::vector<std::size_t>>();
    report.leaks.push_back(std::move(rec));
  }
  for (const auto& t : j.at("transfers")) {
    TransferMatrix m;
    m.kind = parse_transfer_kind(t.at("kind").get<std::string>());
    m.method = t.at("method").get<std::string>();
    m.epsilon_pixel = t.at("epsilon_pixel").get<double>();
    m.topk = t.at("topk").get<std::size_t>();
    for (const auto& c : t.at("cells")) {
      m.cells.push_back({c.at("source").get<std::string>(), c.at("target").get<std::string>(),
                         read_optional(c.at("rate")), c.at("numerator").get<std::size_t>(),
                         c.at("denominator").get<std::size_t>()});
    }
    report.transfers.push_back(std::move(m));
  }
  return report;
}

void write_report(const EvalReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + (dir / name).string());
  };
  write("report.csv", report_csv(report));
  write("report.json", report_json(report));

  if (!report.derived.empty()) {
    std::string csv = "name,model_id,method,epsilon_pixel,topk,value,denominator\n";
    for (const auto& d : report.derived) {
      csv += d.name + "," + d.model_id + "," + d.method + "," + format_double(d.epsilon_pixel) +
             "," + std::to_string(d.topk) + "," + optional_text(d.value) + "," +
             std::to_string(d.denominator) + "\n";
    }
    write("derived.csv", csv);
  }
  if (!report.transfers.empty()) {
    std::string csv = "kind,method,epsilon_pixel,topk,source,target,rate,numerator,denominator\n";
    for (const auto& t : report.transfers) {
      for (const auto& c : t.cells) {
        csv += to_string(t.kind) + "," + t.method + "," + format_double(t.epsilon_pixel) + "," +
               std::to_string(t.topk) + "," + c.source + "," + c.target + "," +
               optional_text(c.rate) + "," + std::to_string(c.numerator) + "," +
               std::to_string(c.denominator) + "\n";
      }
    }
    write("transfer.csv", csv);
  }
  if (!report.leaks.empty()) {
    std::string csv =
        "model_id,epsilon_pixel,count,clean_correct,clean_accuracy,true_label_accuracy,"
        "label_free_accuracy\n";
    for (const auto& l : report.leaks) {
      csv += l.model_id + "," + format_double(l.epsilon_pixel) + "," + std::to_string(l.count) +
             "," + std::to_string(l.clean_correct) + "," + format_double(l.clean_accuracy) + "," +
             format_double(l.true_label_accuracy) + "," + format_double(l.label_free_accuracy) +
             "\n";
    }
    write("leaks.csv", csv);
  }
}

}  // namespace advx
