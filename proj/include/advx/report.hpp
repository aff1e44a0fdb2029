#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace advx {

// One accuracy measurement: `model_id` evaluated on examples perturbed by
// `method` at budget `epsilon_pixel` ("clean" with epsilon 0 for no attack).
struct AccuracyRecord {
  std::string model_id;
  std::string method;
  double epsilon_pixel = 0.0;
  std::size_t topk = 1;
  double accuracy = 0.0;
  std::size_t n = 0;

  friend bool operator==(const AccuracyRecord&, const AccuracyRecord&) = default;
};

// A named scalar computed from records. An absent value means undefined
// (empty denominator), which is serialized as a sentinel rather than 0.
struct DerivedMetric {
  std::string name;  // accuracy_ratio, leak_count, ...
  std::string model_id;
  std::string method;
  double epsilon_pixel = 0.0;
  std::size_t topk = 1;
  std::optional<double> value;
  std::size_t denominator = 0;

  friend bool operator==(const DerivedMetric&, const DerivedMetric&) = default;
};

struct LeakRecord {
  std::string model_id;
  double epsilon_pixel = 0.0;
  std::size_t count = 0;
  std::size_t clean_correct = 0;  // examples eligible for the predicate
  double clean_accuracy = 0.0;
  double true_label_accuracy = 0.0;
  double label_free_accuracy = 0.0;
  std::vector<std::size_t> leaked_ids;

  friend bool operator==(const LeakRecord&, const LeakRecord&) = default;
};

enum class TransferKind { transfer_rate, error_rate };

struct TransferCell {
  std::string source;
  std::string target;
  std::optional<double> rate;
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  friend bool operator==(const TransferCell&, const TransferCell&) = default;
};

struct TransferMatrix {
  TransferKind kind = TransferKind::transfer_rate;
  std::string method;
  double epsilon_pixel = 0.0;
  std::size_t topk = 1;
  std::vector<TransferCell> cells;

  const TransferCell* find(const std::string& source, const std::string& target) const;
  friend bool operator==(const TransferMatrix&, const TransferMatrix&) = default;
};

struct EvalReport {
  std::vector<AccuracyRecord> records;
  std::vector<DerivedMetric> derived;
  std::vector<LeakRecord> leaks;
  std::vector<TransferMatrix> transfers;

  void append(const EvalReport& other);
  // First record matching all fields, or nullptr.
  const AccuracyRecord* find(const std::string& model_id, const std::string& method,
                             double epsilon_pixel, std::size_t topk = 1) const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string to_string(TransferKind kind);
TransferKind parse_transfer_kind(const std::string& text);

inline constexpr const char* kUndefined = "undefined";

}  // namespace advx
