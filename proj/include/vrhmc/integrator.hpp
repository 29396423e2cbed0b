#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "vrhmc/potential.hpp"

namespace vrhmc {

/// Underdamped Langevin parameters: dissipation gamma, inverse mass xi, step h.
struct DynamicsParams {
  double gamma = 2.0;
  double xi = 1.0;
  double step = 0.1;

  double delta() const noexcept { return gamma * xi * step; }

  void validate() const {
    if (!(gamma > 0) || !(xi > 0) || !(step > 0) || !std::isfinite(delta())) {
      throw std::invalid_argument("DynamicsParams: gamma, xi and h must be positive and finite");
    }
  }
};

/// Drift coefficients and 2x2 per-coordinate noise covariance of one exact
/// step of the gradient-frozen dynamics, with its Cholesky factor
///   [e_x]   [l_xx   0  ] [z1]
///   [e_v] = [l_vx  l_vv] [z2].
struct NoiseCoefficients {
  double c_vv = 1.0;
  double c_vg = 0.0;
  double c_xv = 0.0;
  double c_xg = 0.0;
  double s_vv = 0.0;
  double s_xv = 0.0;
  double s_xx = 0.0;
  double l_xx = 0.0;
  double l_vx = 0.0;
  double l_vv = 0.0;
};

namespace detail {

/// 1 - exp(-t)
inline double one_minus_exp(double t) noexcept { return -std::expm1(-t); }

/// t - 1 + exp(-t) = sum_{n>=2} (-t)^n / n!
inline double exp_remainder2(double t) noexcept {
  if (t < 1.0) {
    double term = t * t / 2.0;
    double s = 0.0;
    for (int n = 2; n < 40 && term != 0.0; ++n) {
      s += term;
      term *= -t / static_cast<double>(n + 1);
    }
    return s;
  }
  return t - one_minus_exp(t);
}

/// 2t - 3 + 4 exp(-t) - exp(-2t) = sum_{n>=3} (-1)^n (4 - 2^n) t^n / n!
inline double position_variance_kernel(double t) noexcept {
  if (t < 1.0) {
    double s = 0.0;
    double tn_over_fact = t * t * t / 6.0;  // t^n / n!
    double pow2 = 8.0;
    double sign = -1.0;
    for (int n = 3; n < 60; ++n) {
      const double term = sign * (4.0 - pow2) * tn_over_fact;
      s += term;
      if (std::abs(term) <= 1e-18 * std::abs(s)) break;
      tn_over_fact *= t / static_cast<double>(n + 1);
      pow2 *= 2.0;
      sign = -sign;
    }
    return s;
  }
  const double a = one_minus_exp(t);
  return 2.0 * exp_remainder2(t) - a * a;
}

}  // namespace detail

/// Closed-form coefficients, evaluated so that small delta = gamma*xi*h does
/// not lose precision to cancellation.
inline NoiseCoefficients noise_coefficients(const DynamicsParams& p) {
  p.validate();
  const double g = p.gamma;
  const double xi = p.xi;
  const double dl = p.delta();

  const double a1 = detail::one_minus_exp(dl);        // 1 - e^{-d}
  const double a1_double = -std::expm1(-2.0 * dl);     // 1 - e^{-2d}
  const double a2 = detail::exp_remainder2(dl);        // d - 1 + e^{-d}
  const double kx = detail::position_variance_kernel(dl);

  NoiseCoefficients c;
  c.c_vv = std::exp(-dl);
  c.c_vg = a1 / (g * xi);
  c.c_xv = a1 / g;
  c.c_xg = a2 / (g * g * xi);
  c.s_vv = a1_double / xi;
  c.s_xv = a1 * a1 / (g * xi);
  c.s_xx = kx / (g * g * xi);

  // det = s_vv s_xx - s_xv^2 = (a1_double * kx - a1^4) / (g^2 xi^2)
  const double det_kernel = a1_double * kx - a1 * a1 * a1 * a1;
  if (det_kernel < -1e-12 * a1_double * kx) {
    throw std::runtime_error("noise_coefficients: covariance not positive semidefinite (delta=" +
                             std::to_string(dl) + ")");
  }
  c.l_xx = std::sqrt(c.s_xx);
  c.l_vx = c.l_xx > 0 ? c.s_xv / c.l_xx : 0.0;
  // l_vv^2 = det / s_xx = max(det_kernel, 0) / (xi * kx)
  c.l_vv = kx > 0 ? std::sqrt(std::max(det_kernel, 0.0) / (xi * kx)) : std::sqrt(c.s_vv);
  return c;
}

/// Position and momentum of one chain.
struct ChainState {
  Vector x;
  Vector v;
  std::uint64_t iteration = 0;
};

struct NoisePair {
  Vector e_x;
  Vector e_v;
};

/// Independent per coordinate: e_x = l_xx z1, e_v = l_vx z1 + l_vv z2.
template <class Rng>
NoisePair sample_noise(const NoiseCoefficients& c, std::size_t d, Rng& rng) {
  if (!(c.l_xx >= 0) || !(c.l_vv >= 0) || !std::isfinite(c.l_vx)) {
    throw std::invalid_argument("sample_noise: invalid Cholesky factor");
  }
  const auto n = static_cast<Eigen::Index>(d);
  NoisePair out{Vector(n), Vector(n)};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    out.e_x(j) = c.l_xx * z1;
    out.e_v(j) = c.l_vx * z1 + c.l_vv * z2;
  }
  return out;
}

namespace detail {

inline void check_step_inputs(const ChainState& s, const Vector& gradient) {
  if (s.x.size() != s.v.size() || gradient.size() != s.x.size()) {
    throw std::invalid_argument("step: dimension mismatch between x, v and gradient");
  }
  if (!gradient.allFinite()) {
    throw std::domain_error("step: non-finite gradient at iteration " +
                            std::to_string(s.iteration));
  }
}

}  // namespace detail

/// Noise-free part of the update (drift only).
inline ChainState step_drift(const ChainState& s, const Vector& gradient,
                             const NoiseCoefficients& c) {
  detail::check_step_inputs(s, gradient);
  ChainState next;
  next.x = s.x + c.c_xv * s.v - c.c_xg * gradient;
  next.v = c.c_vv * s.v - c.c_vg * gradient;
  next.iteration = s.iteration + 1;
  return next;
}

/// x' = x + c_xv v - c_xg g + e_x,  v' = c_vv v - c_vg g + e_v.
template <class Rng>
ChainState step(const ChainState& s, const Vector& gradient, const NoiseCoefficients& c,
                Rng& rng) {
  ChainState next = step_drift(s, gradient, c);
  const NoisePair e = sample_noise(c, static_cast<std::size_t>(s.x.size()), rng);
  next.x += e.e_x;
  next.v += e.e_v;
  return next;
}

}  // namespace vrhmc
