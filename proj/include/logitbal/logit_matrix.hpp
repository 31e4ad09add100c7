#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "logitbal/logit_data.hpp"
#include "logitbal/random.hpp"

namespace logitbal {

/// C x C buffers of streamed logits. Cell (c, l) holds logits predicted for
/// class l over records whose (pseudo-)label is c: the diagonal collects the
/// positive distribution of each class, off-diagonal cells the negatives.
/// Buffers are capped; past the cap, uniform reservoir replacement keeps each
/// buffer an unbiased sample of everything streamed through it.
class LogitSetMatrix {
 public:
  LogitSetMatrix(int num_classes, std::size_t cell_cap = 10000, std::uint64_t seed = 0)
      : num_classes_(num_classes),
        cell_cap_(cell_cap),
        cells_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes)),
        seen_(cells_.size(), 0),
        rng_(derive_seed(seed, 0x9d1f)) {
    if (num_classes <= 0) throw std::invalid_argument("LogitSetMatrix: num_classes must be positive");
    if (cell_cap == 0) throw std::invalid_argument("LogitSetMatrix: cell_cap must be positive");
  }

  int num_classes() const { return num_classes_; }
  std::size_t cell_cap() const { return cell_cap_; }

  const std::vector<double>& cell(int label, int cls) const { return cells_[index(label, cls)]; }
  std::uint64_t seen(int label, int cls) const { return seen_[index(label, cls)]; }

  /// Streams one labeled logit vector into row `label`.
  void add(int label, const std::vector<double>& logits) {
    if (label < 0 || label >= num_classes_) throw std::invalid_argument("LogitSetMatrix::add: label out of range");
    if (static_cast<int>(logits.size()) != num_classes_)
      throw std::invalid_argument("LogitSetMatrix::add: logit vector length mismatch");
    for (int l = 0; l < num_classes_; ++l) {
      auto& buf = cells_[index(label, l)];
      auto& count = seen_[index(label, l)];
      if (buf.size() < cell_cap_) {
        buf.push_back(logits[static_cast<std::size_t>(l)]);
      } else {
        const std::uint64_t j = rng_.below(count + 1);
        if (j < cell_cap_) buf[static_cast<std::size_t>(j)] = logits[static_cast<std::size_t>(l)];
      }
      ++count;
    }
  }

  std::string rng_state() const { return rng_.state(); }
  void restore_rng_state(const std::string& s) { rng_.restore_state(s); }

  /// Replaces one buffer wholesale (snapshot restore).
  void set_cell(int label, int cls, std::vector<double> values, std::uint64_t seen_count) {
    if (values.size() > cell_cap_ || seen_count < values.size())
      throw std::invalid_argument("LogitSetMatrix::set_cell: inconsistent buffer");
    cells_[index(label, cls)] = std::move(values);
    seen_[index(label, cls)] = seen_count;
  }

 private:
  std::size_t index(int label, int cls) const {
    return static_cast<std::size_t>(label) * static_cast<std::size_t>(num_classes_) +
           static_cast<std::size_t>(cls);
  }

  int num_classes_;
  std::size_t cell_cap_;
  std::vector<std::vector<double>> cells_;
  std::vector<std::uint64_t> seen_;
  RandomEngine rng_;
};

/// Streams a batch into a matrix. Unlabeled target records are pseudo-labeled
/// by argmax; target records with zero quality carry no training signal and
/// are dropped. `only` restricts ingestion to a single domain.
inline void accumulate(LogitSetMatrix& matrix, const LogitBatch& batch,
                       std::optional<Domain> only = std::nullopt) {
  if (batch.num_classes != matrix.num_classes())
    throw std::invalid_argument("accumulate: class count mismatch between batch and matrix");
  batch.validate();
  for (const auto& r : batch.records) {
    if (only && r.domain != *only) continue;
    if (r.domain == Domain::kTarget && !(r.quality > 0.0)) continue;
    const int label = r.label >= 0 ? r.label : argmax_class(r.logits);
    matrix.add(label, r.logits);
  }
}

/// Per-cell sample lists drawn from a matrix for one estimation round.
struct CellSamples {
  int num_classes = 0;
  std::size_t n_sample = 0;
  std::vector<std::vector<double>> cells;  // row-major C x C; empty vector == skipped
  std::vector<bool> skipped;

  const std::vector<double>& at(int label, int cls) const {
    return cells[static_cast<std::size_t>(label) * static_cast<std::size_t>(num_classes) +
                 static_cast<std::size_t>(cls)];
  }
  bool is_skipped(int label, int cls) const {
    return skipped[static_cast<std::size_t>(label) * static_cast<std::size_t>(num_classes) +
                   static_cast<std::size_t>(cls)];
  }
};

/// Draws n_sample values from every cell holding at least n_min entries;
/// smaller cells are marked skipped. Cells at least n_min big but smaller
/// than n_sample are drawn with replacement, larger ones without. When
/// n_sample is not given it defaults to the smallest nonempty cell size,
/// floored at n_min.
inline CellSamples sample_cells(const LogitSetMatrix& matrix, std::size_t n_min,
                                std::optional<std::size_t> n_sample, std::uint64_t seed) {
  if (n_min == 0) throw std::invalid_argument("sample_cells: n_min must be positive");
  const int c = matrix.num_classes();
  std::size_t draw = 0;
  if (n_sample) {
    if (*n_sample == 0) throw std::invalid_argument("sample_cells: n_sample must be positive");
    draw = *n_sample;
  } else {
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        const std::size_t sz = matrix.cell(i, j).size();
        if (sz > 0) smallest = std::min(smallest, sz);
      }
    draw = smallest == std::numeric_limits<std::size_t>::max() ? n_min : std::max(smallest, n_min);
  }

  CellSamples out;
  out.num_classes = c;
  out.n_sample = draw;
  out.cells.resize(static_cast<std::size_t>(c) * static_cast<std::size_t>(c));
  out.skipped.assign(out.cells.size(), true);
  RandomEngine rng(derive_seed(seed, 0x5ce1));
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      const auto& buf = matrix.cell(i, j);
      const std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(c) +
                              static_cast<std::size_t>(j);
      if (buf.size() < n_min) continue;
      auto& dst = out.cells[idx];
      dst.reserve(draw);
      if (buf.size() >= draw) {
        for (std::size_t s : rng.sample_indices(buf.size(), draw)) dst.push_back(buf[s]);
      } else {
        for (std::size_t s = 0; s < draw; ++s) dst.push_back(buf[rng.below(buf.size())]);
      }
      out.skipped[idx] = false;
    }
  }
  return out;
}

}  // namespace logitbal
