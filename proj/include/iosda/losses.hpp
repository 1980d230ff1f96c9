#pragma once

// Scalar losses over logits, each returning its value and the exact gradient
// of that value with respect to the logits (or the fake features for the L2
// regularizer). Every log argument is clamped below at kLogFloor, and the
// gradient is that of the clamped function.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "iosda/errors.hpp"
#include "iosda/matrix.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

inline constexpr double kLogFloor = 1e-12;

inline double clamped_log(double x) noexcept { return std::log(x > kLogFloor ? x : kLogFloor); }

struct LossGrad {
  double value = 0.0;
  RealMatrix grad;
};

/// scale * Σ_rows −log p(target | row). With scale = 1/N this is the mean NLL.
inline LossGrad softmax_nll(const RealMatrix& logits, std::span<const std::size_t> targets, double scale) {
  if (targets.size() != logits.rows())
    throw DimensionError("softmax_nll: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " rows");
  LossGrad out;
  out.grad = softmax_rows(logits);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t y = targets[r];
    if (y >= logits.cols()) throw DimensionError("softmax_nll: target index out of range");
    auto p = out.grad.row(r);
    const double py = p[y];
    out.value -= scale * clamped_log(py);
    if (py > kLogFloor) {
      // d(−log p_y)/dl_j = p_j − δ_jy
      for (double& v : p) v *= scale;
      p[y] -= scale;
    } else {
      for (double& v : p) v = 0.0;
    }
  }
  return out;
}

/// Mean NLL over the rows.
inline LossGrad softmax_nll(const RealMatrix& logits, std::span<const std::size_t> targets) {
  const double n = static_cast<double>(logits.rows());
  return softmax_nll(logits, targets, n > 0 ? 1.0 / n : 0.0);
}

/// Binary boundary loss on the unknown slot:
///   scale * Σ_rows [ −t log p_u − (1−t) log(1 − p_u) ],  p_u = softmax(row)[unknown_index].
inline LossGrad open_boundary_loss(const RealMatrix& logits, std::size_t unknown_index, double t,
                                   double scale) {
  if (unknown_index >= logits.cols()) throw DimensionError("open_boundary_loss: unknown index out of range");
  LossGrad out;
  out.grad = softmax_rows(logits);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto p = out.grad.row(r);
    const double pu = p[unknown_index];
    double rest = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c)
      if (c != unknown_index) rest += p[c];
    out.value += scale * (-t * clamped_log(pu) - (1.0 - t) * clamped_log(rest));
    double dl_dp = 0.0;
    if (pu > kLogFloor) dl_dp -= t / pu;
    if (rest > kLogFloor) dl_dp += (1.0 - t) / rest;
    // dp_u/dl_j = p_u (δ_ju − p_j)
    const double coeff = scale * dl_dp * pu;
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = -coeff * p[c];
    p[unknown_index] += coeff;
  }
  return out;
}

inline LossGrad open_boundary_loss(const RealMatrix& logits, std::size_t unknown_index, double t = 0.5) {
  const double n = static_cast<double>(logits.rows());
  return open_boundary_loss(logits, unknown_index, t, n > 0 ? 1.0 / n : 0.0);
}

/// Mean over rows of ||fake_i − real_i||², gradient taken w.r.t. `fake`.
inline LossGrad paired_sq_distance(const RealMatrix& fake, const RealMatrix& real) {
  fake.require_same_shape(real, "paired_sq_distance");
  LossGrad out;
  out.grad = RealMatrix(fake.rows(), fake.cols());
  if (fake.rows() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(fake.rows());
  for (std::size_t k = 0; k < fake.size(); ++k) {
    const double d = fake.data()[k] - real.data()[k];
    out.value += d * d * inv_n;
    out.grad.data()[k] = 2.0 * d * inv_n;
  }
  return out;
}

}  // namespace iosda
