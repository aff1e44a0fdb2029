#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "advx/attacks.hpp"
#include "advx/keyvalue.hpp"
#include "advx/model.hpp"
#include "advx/report.hpp"
#include "advx/tensor.hpp"

namespace advx {

struct Dataset {
  Tensor features;  // [n, d]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split;
  std::string provenance;
  DataRange range;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  // Labels in [0, num_classes), features in range, consistent lengths.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, wrong_magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Big-endian IDX image (magic 0x00000803, u8, [n,rows,cols]) and label (magic
// 0x00000801, u8, [n]) files; gzip-compressed files are read transparently.
// Pixels are scaled by 1/255 and flattened.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& split = "");

// Loads "<split>-images-idx3-ubyte[.gz]" style MNIST files from a directory;
// split is "train" or "test" (t10k).
Dataset load_mnist(const std::filesystem::path& dir, const std::string& split);

// Gaussian clusters around seeded uniform centers in [0.2, 0.8]^d, clamped to
// [0, 1]; exactly `per_class` examples of each class, interleaved by class.
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                    double spread, std::uint64_t seed);

// SHA-256 hex digest of the canonical bytes (shape, little-endian features,
// labels, class count).
std::string dataset_digest(const Dataset& data);
std::string sha256_hex(const void* bytes, std::size_t size);

// Seeded subsample without replacement (sorted indices).
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed);

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, parse, version_mismatch, shape_mismatch, corrupt_blob_length };
  CheckpointError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::string rng_digest;
};

KeyValues model_config_to_kv(const ModelConfig& config, const std::string& prefix = "model.");
ModelConfig model_config_from_kv(const KeyValues& kv, const std::string& prefix = "model.",
                                 const ModelConfig& defaults = {});

// Text header followed by the parameter blobs as little-endian doubles.
void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const std::string& rng_digest = "");
Checkpoint read_checkpoint(const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
// SHA-256 of the checkpoint file bytes.
std::string file_digest(const std::filesystem::path& path);

// report.csv (model_id,method,epsilon_pixel,topk,accuracy,n), report.json
// (full mirror) and, when present, transfer.csv and leaks.csv.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);
std::vector<AccuracyRecord> parse_report_csv(const std::string& text);

}  // namespace advx
