#pragma once

// Per-sample head selection for multi-head inference.
//
// For each head, DMaxP is the gap between its two largest probabilities and
// DMinP the gap between its two smallest. If the head with the largest DMaxP
// is also the head with the smallest DMinP, that head decides; otherwise the
// largest-DMaxP head decides. Ties resolve to the lowest head index, and ties
// inside a distribution's argmax resolve to the lowest class index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "iosda/datahub.hpp"
#include "iosda/errors.hpp"
#include "iosda/matrix.hpp"

namespace iosda {

/// A validated probability distribution over K+1 output slots.
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> p, double tol = 1e-9) : p_(std::move(p)) {
    double sum = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("ProbVector: entry outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) throw DataError("ProbVector: entries sum to " + std::to_string(sum));
  }
  static ProbVector from_row(std::span<const double> row) { return ProbVector({row.begin(), row.end()}); }

  [[nodiscard]] std::size_t size() const noexcept { return p_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return p_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept { return p_; }
  [[nodiscard]] std::size_t argmax() const { return iosda::argmax(p_); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> p_;
};

struct HeadConfidence {
  std::size_t head_index = 0;
  double dmaxp = 0.0;
  double dminp = 0.0;
};

struct EnsembleDecision {
  std::size_t chosen_head = 0;
  ClassLabel predicted = ClassLabel::open();
  ProbVector probs;
  bool agreement = false;  // DMaxP and DMinP extremes came from the same head
};

/// (DMaxP, DMinP) of one distribution.
inline HeadConfidence head_confidence(const ProbVector& probs, std::size_t head_index = 0) {
  if (probs.size() < 2) throw DimensionError("head_confidence: need at least two probabilities");
  std::vector<double> s(probs.values().begin(), probs.values().end());
  std::sort(s.begin(), s.end(), std::greater<>());
  const std::size_t n = s.size();
  return {head_index, std::abs(s[0] - s[1]), std::abs(s[n - 2] - s[n - 1])};
}

inline EnsembleDecision ensemble_predict(std::span<const ProbVector> per_head) {
  if (per_head.empty()) throw DimensionError("ensemble_predict: no heads");
  const std::size_t width = per_head.front().size();
  std::size_t best_max = 0, best_min = 0;
  double top_dmax = 0.0, low_dmin = 0.0;
  for (std::size_t h = 0; h < per_head.size(); ++h) {
    if (per_head[h].size() != width) throw DimensionError("ensemble_predict: heads disagree on width");
    const auto c = head_confidence(per_head[h], h);
    if (h == 0 || c.dmaxp > top_dmax) {
      top_dmax = c.dmaxp;
      best_max = h;
    }
    if (h == 0 || c.dminp < low_dmin) {
      low_dmin = c.dminp;
      best_min = h;
    }
  }
  EnsembleDecision d;
  d.agreement = (best_max == best_min);
  d.chosen_head = best_max;  // both branches of the rule land on the max-DMaxP head
  d.probs = per_head[d.chosen_head];
  d.predicted = ClassLabel::from_slot(d.probs.argmax(), width - 1);
  return d;
}

/// Applies the rule row by row to per-head probability matrices
/// (one matrix per head, one row per sample).
inline std::vector<EnsembleDecision> ensemble_rows(std::span<const RealMatrix> head_probs) {
  if (head_probs.empty()) throw DimensionError("ensemble_rows: no heads");
  const std::size_t n = head_probs.front().rows();
  std::vector<EnsembleDecision> out;
  out.reserve(n);
  std::vector<ProbVector> row(head_probs.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < head_probs.size(); ++h) row[h] = ProbVector::from_row(head_probs[h].row(r));
    out.push_back(ensemble_predict(row));
  }
  return out;
}

/// Runs every head of `state` on `features` and applies the rule per row.
/// `State` must provide head_probabilities(state, features) via ADL.
template <class State>
std::vector<EnsembleDecision> batch_predict(const State& state, const RealMatrix& features) {
  const std::vector<RealMatrix> probs = head_probabilities(state, features);
  return ensemble_rows(probs);
}

}  // namespace iosda
