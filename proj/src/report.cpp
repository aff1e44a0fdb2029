#include "advx/report.hpp"

#include <stdexcept>

namespace advx {

const TransferCell* TransferMatrix::find(const std::string& source,
                                         const std::string& target) const {
  for (const auto& c : cells) {
    if (c.source == source && c.target == target) return &c;
  }
  return nullptr;
}

void EvalReport::append(const EvalReport& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  derived.insert(derived.end(), other.derived.begin(), other.derived.end());
  leaks.insert(leaks.end(), other.leaks.begin(), other.leaks.end());
  transfers.insert(transfers.end(), other.transfers.begin(), other.transfers.end());
}

const AccuracyRecord* EvalReport::find(const std::string& model_id, const std::string& method,
                                       double epsilon_pixel, std::size_t topk) const {
  for (const auto& r : records) {
    if (r.model_id == model_id && r.method == method && r.epsilon_pixel == epsilon_pixel &&
        r.topk == topk) {
      return &r;
    }
  }
  return nullptr;
}

std::string to_string(TransferKind kind) {
  return kind == TransferKind::transfer_rate ? "transfer_rate" : "error_rate";
}

TransferKind parse_transfer_kind(const std::string& text) {
  if (text == "transfer_rate") return TransferKind::transfer_rate;
  if (text == "error_rate") return TransferKind::error_rate;
  throw std::invalid_argument("unknown transfer matrix kind '" + text + "'");
}

}  // namespace advx
