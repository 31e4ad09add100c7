#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace logitbal {

enum class Domain { kSource, kTarget };

inline const char* domain_name(Domain d) { return d == Domain::kSource ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw std::invalid_argument("unknown domain '" + s + "' (expected source|target)");
}

/// One scored sample: the per-class logit vector, its (pseudo-)label,
/// originating domain and pseudo-label quality weight. label == -1 marks an
/// unlabeled target record.
struct LogitRecord {
  std::vector<double> logits;
  int label = -1;
  Domain domain = Domain::kSource;
  double quality = 1.0;
};

struct LogitBatch {
  std::vector<LogitRecord> records;
  int num_classes = 0;

  void validate() const {
    if (num_classes <= 0) throw std::invalid_argument("LogitBatch: num_classes must be positive");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (static_cast<int>(r.logits.size()) != num_classes)
        throw std::invalid_argument("LogitBatch: record " + std::to_string(i) + " has " +
                                    std::to_string(r.logits.size()) + " logits, expected " +
                                    std::to_string(num_classes));
      if (r.label < -1 || r.label >= num_classes)
        throw std::invalid_argument("LogitBatch: record " + std::to_string(i) + " label out of range");
      if (r.label == -1 && r.domain != Domain::kTarget)
        throw std::invalid_argument("LogitBatch: record " + std::to_string(i) +
                                    " is unlabeled but not in the target domain");
      if (!(r.quality >= 0.0 && r.quality <= 1.0))
        throw std::invalid_argument("LogitBatch: record " + std::to_string(i) + " quality outside [0,1]");
    }
  }
};

/// argmax with ties broken toward the lower class index.
inline int argmax_class(const std::vector<double>& logits) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(logits.size()); ++c)
    if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
  return best;
}

}  // namespace logitbal
