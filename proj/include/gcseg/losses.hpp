#pragma once

// Pixel losses on the t-link probability maps and the coefficient-of-variation
// weighting that combines them with the residual graph-cut loss.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"

namespace gcseg {

struct PixelLoss {
  double value = 0.0;
  std::vector<double> grad_phi_s;
  std::vector<double> grad_phi_t;
};

namespace detail {

inline void check_prob_maps(std::span<const float> phi_s, std::span<const float> phi_t, const Labeling& gt) {
  if (phi_s.size() != gt.size() || phi_t.size() != gt.size())
    throw InvalidArgument("probability maps (" + std::to_string(phi_s.size()) + ", " +
                          std::to_string(phi_t.size()) + ") do not match mask of " + std::to_string(gt.size()));
}

}  // namespace detail

constexpr double kProbClamp = 1e-7;

// Binary cross entropy, probabilities clamped to [1e-7, 1 - 1e-7] before the log.
inline PixelLoss bce(std::span<const float> phi_s, std::span<const float> phi_t, const Labeling& gt) {
  detail::check_prob_maps(phi_s, phi_t, gt);
  const std::size_t n = gt.size();
  PixelLoss out{0.0, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < n; ++p) {
    if (gt[p]) {
      const double raw = phi_s[p];
      const double v = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
      out.value -= std::log(v);
      if (raw > kProbClamp && raw < 1.0 - kProbClamp) out.grad_phi_s[p] = -inv_n / v;
    } else {
      const double raw = phi_t[p];
      const double v = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
      out.value -= std::log(v);
      if (raw > kProbClamp && raw < 1.0 - kProbClamp) out.grad_phi_t[p] = -inv_n / v;
    }
  }
  out.value *= inv_n;
  return out;
}

constexpr double kDiceEps = 1e-8;

// Generalised Dice over the two classes with inverse squared-volume weights
//   w_s = 1 / ((sum g)^2 + eps),  w_t = 1 / ((sum (1-g))^2 + eps)
//   L = 1 - 2 (w_s sum g phi_s + w_t sum (1-g) phi_t)
//         / (w_s sum (g + phi_s) + w_t sum ((1-g) + phi_t) + eps)
inline PixelLoss generalized_dice(std::span<const float> phi_s, std::span<const float> phi_t, const Labeling& gt) {
  detail::check_prob_maps(phi_s, phi_t, gt);
  const std::size_t n = gt.size();
  double fg = 0.0, sum_s = 0.0, sum_t = 0.0, inter_s = 0.0, inter_t = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double g = gt[p];
    fg += g;
    sum_s += phi_s[p];
    sum_t += phi_t[p];
    inter_s += g * phi_s[p];
    inter_t += (1.0 - g) * phi_t[p];
  }
  const double bg = static_cast<double>(n) - fg;
  const double ws = 1.0 / (fg * fg + kDiceEps);
  const double wt = 1.0 / (bg * bg + kDiceEps);
  const double num = ws * inter_s + wt * inter_t;
  const double den = ws * (fg + sum_s) + wt * (bg + sum_t) + kDiceEps;

  PixelLoss out{1.0 - 2.0 * num / den, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  // dL/dx = -2 (num' den - num den') / den^2
  for (std::size_t p = 0; p < n; ++p) {
    const double g = gt[p];
    out.grad_phi_s[p] = -2.0 * (ws * g * den - num * ws) / (den * den);
    out.grad_phi_t[p] = -2.0 * (wt * (1.0 - g) * den - num * wt) / (den * den);
  }
  return out;
}

// Online coefficient-of-variation loss weighting for a fixed number of terms.
// Each step the ratio r_i = L_i / mean(L_i over previous steps) is appended
// to a full-history Welford accumulator; the weight of term i is
// (sigma(r_i) / mean(r_i)) / z with z the sum over terms.
template <std::size_t Terms>
class CovWeights {
public:
  using Values = std::array<double, Terms>;

  static constexpr double kMeanFloor = 1e-12;
  static constexpr double kNormFloor = 1e-12;

  // Advances the state by one optimiser step and returns the weights to use at it.
  Values update(const Values& losses) {
    for (double v : losses)
      if (!std::isfinite(v) || v < 0.0) throw NumericError("loss values for weighting must be finite and >= 0");
    ++step_;
    for (std::size_t i = 0; i < Terms; ++i) {
      // the first step divides by its own value, so r = 1 unless the loss is zero
      const double denom = step_ == 1 ? losses[i] : loss_mean_[i];
      const double ratio = losses[i] / std::max(denom, kMeanFloor);
      // ratio statistics (Welford)
      const double delta = ratio - ratio_mean_[i];
      ratio_mean_[i] += delta / static_cast<double>(step_);
      ratio_m2_[i] += delta * (ratio - ratio_mean_[i]);
      // running mean of the raw losses, used as next step's denominator
      loss_mean_[i] += (losses[i] - loss_mean_[i]) / static_cast<double>(step_);
    }
    last_ = weights();
    return last_;
  }

  Values weights() const {
    Values w;
    if (step_ < 2) {
      w.fill(1.0 / static_cast<double>(Terms));
      return w;
    }
    double z = 0.0;
    for (std::size_t i = 0; i < Terms; ++i) {
      const double sigma = std::sqrt(std::max(0.0, ratio_m2_[i] / static_cast<double>(step_)));
      w[i] = sigma / std::max(ratio_mean_[i], kMeanFloor);
      z += w[i];
    }
    if (z < kNormFloor) {
      w.fill(1.0 / static_cast<double>(Terms));
      return w;
    }
    for (double& v : w) v /= z;
    return w;
  }

  std::size_t step() const { return step_; }
  const Values& last() const { return last_; }

private:
  std::size_t step_ = 0;
  Values ratio_mean_{};
  Values ratio_m2_{};
  Values loss_mean_{};
  Values last_{};
};

using CovWeightState = CovWeights<3>;

struct LossBundle {
  double l_ce = 0.0;
  double l_dice = 0.0;
  double l_rgc = 0.0;
  std::array<double, 3> alpha{};
  double l_total = 0.0;
};

inline LossBundle total_loss(double l_ce, double l_dice, double l_rgc, const std::array<double, 3>& alpha) {
  LossBundle b{l_ce, l_dice, std::max(0.0, l_rgc), alpha, 0.0};
  b.l_total = alpha[0] * b.l_ce + alpha[1] * b.l_dice + alpha[2] * b.l_rgc;
  return b;
}

}  // namespace gcseg
