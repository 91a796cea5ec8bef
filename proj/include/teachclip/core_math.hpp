#pragma once

// Numeric primitives shared by the student, teachers and losses. All of them
// work in 64-bit floats on contiguous spans and are pure.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "teachclip/errors.hpp"

namespace teachclip {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kVarianceFloor = 1e-24;
inline constexpr double kNormFloor = 1e-12;

namespace detail {

inline void require_finite(std::span<const double> x, const char* what) {
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite input");
  }
}

inline void require_same_length(std::span<const double> a, std::span<const double> b,
                                const char* what) {
  if (a.size() != b.size()) throw InvalidInput(std::string(what) + ": length mismatch");
}

}  // namespace detail

/// Max-shifted softmax of `x / temperature`.
inline std::vector<double> softmax(std::span<const double> x, double temperature = 1.0) {
  if (x.empty()) throw InvalidInput("softmax: empty input");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("softmax: temperature must be positive");
  }
  detail::require_finite(x, "softmax");
  const double top = *std::max_element(x.begin(), x.end()) / temperature;
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] / temperature - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a, b, "cosine");
  if (a.empty()) throw InvalidInput("cosine: empty input");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInput("cosine: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Pearson correlation, i.e. the cosine of the mean-centred vectors.
/// Returns 0 when either input is (numerically) constant.
inline double pearson_rho(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a, b, "pearson_rho");
  const std::size_t n = a.size();
  if (n < 2) throw InvalidInput("pearson_rho: need at least two entries");
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a < kVarianceFloor || var_b < kVarianceFloor) return 0.0;
  return std::clamp(cov / std::sqrt(var_a * var_b), -1.0, 1.0);
}

inline double pearson_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - pearson_rho(a, b);
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

/// -sum target_k log pred_k with pred clamped below at kLogClamp.
inline double cross_entropy(std::span<const double> target, std::span<const double> pred) {
  detail::require_same_length(target, pred, "cross_entropy");
  double ce = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    ce -= target[k] * std::log(std::max(pred[k], kLogClamp));
  }
  return ce;
}

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  detail::require_same_length(p, q, "kl_divergence");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) kl += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kLogClamp)));
  }
  return kl;
}

}  // namespace teachclip
