#pragma once

// Independent reference computations used by the tests. None of these call
// into the library's numerical code.

#include "episodic/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using episodic::Index;
using episodic::Matrix;
using episodic::Vector;

// High-precision reference values (50-digit evaluation, rounded to double).
inline constexpr double kBoltzmann123Beta2 = 2.8509370922208681048;
inline constexpr double kMellowmax123Omega75 = 2.8535921264720571470;
inline constexpr double kMellowmax01Omega75 = 0.90765410012205539826;
inline constexpr double kCubicRoot = 1.5213797068045675696;  // x^3 - x - 2

inline double bisect(const std::function<double(double)>& f, double lo, double hi, double tol) {
  double flo = f(lo);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Direct, unshifted long-double mellowmax; safe for moderate omega * q.
inline long double mellowmax_direct(const std::vector<double>& q, long double omega) {
  long double s = 0.0L;
  for (double x : q) s += std::exp(omega * static_cast<long double>(x));
  return std::log(s / static_cast<long double>(q.size())) / omega;
}

/// E_p[q] for p proportional to exp(beta q), long double, shift by max.
inline long double boltzmann_mean(const std::vector<double>& q, long double beta) {
  long double m = -INFINITY;
  for (double x : q) m = std::max(m, beta * x);
  long double num = 0.0L, den = 0.0L;
  for (double x : q) {
    const long double w = std::exp(beta * x - m);
    num += w * x;
    den += w;
  }
  return num / den;
}

/// Exhaustive kNN: full sort on (squared distance, recency).
inline std::vector<Index> brute_knn(const Matrix& keys, const std::vector<std::uint64_t>& recency,
                                    const Vector& h, Index k) {
  std::vector<double> d(static_cast<std::size_t>(keys.cols()));
  for (Index j = 0; j < keys.cols(); ++j) {
    double s = 0.0;
    for (Index i = 0; i < keys.rows(); ++i) s += (keys(i, j) - h(i)) * (keys(i, j) - h(i));
    d[static_cast<std::size_t>(j)] = s;
  }
  std::vector<Index> order(d.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    return d[ua] != d[ub] ? d[ua] < d[ub] : recency[ua] < recency[ub];
  });
  order.resize(static_cast<std::size_t>(std::min<Index>(k, keys.cols())));
  return order;
}

inline double kernel_loop(const Vector& a, const Vector& b, double delta) {
  double s = 0.0;
  for (Index i = 0; i < a.size(); ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  return 1.0 / (s + delta);
}

/// Kernel-weighted average of `values` over the given key columns.
inline double weighted_estimate(const Matrix& keys, const Vector& values, const Vector& h, double delta) {
  double num = 0.0, den = 0.0;
  for (Index j = 0; j < keys.cols(); ++j) {
    const double w = kernel_loop(h, keys.col(j), delta);
    num += w * values(j);
    den += w;
  }
  return num / den;
}

/// Forward pass of a fully connected net with explicit loops. Layer l has
/// weights W_l (out x in) and biases b_l; hidden layers use ReLU when relu.
inline Vector mlp_forward(const std::vector<Matrix>& w, const std::vector<Vector>& b, const Vector& x,
                          bool relu) {
  std::vector<double> cur(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    std::vector<double> next(static_cast<std::size_t>(w[l].rows()));
    for (Index r = 0; r < w[l].rows(); ++r) {
      double s = b[l](r);
      for (Index c = 0; c < w[l].cols(); ++c) s += w[l](r, c) * cur[static_cast<std::size_t>(c)];
      const bool hidden = l + 1 < w.size();
      next[static_cast<std::size_t>(r)] = (hidden && relu) ? std::max(0.0, s) : s;
    }
    cur = std::move(next);
  }
  return Eigen::Map<Vector>(cur.data(), static_cast<Index>(cur.size()));
}

/// Cart-pole Euler step written from the textbook equations of motion
/// (separate pole/cart accelerations, no shared temporaries).
inline std::array<double, 4> cartpole_step(const std::array<double, 4>& s, int action) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5, tau = 0.02;
  const double f = action == 1 ? 10.0 : -10.0;
  const double x = s[0], xd = s[1], th = s[2], thd = s[3];
  const double m = mc + mp;
  const double num = g * std::sin(th) + std::cos(th) * ((-f - mp * l * thd * thd * std::sin(th)) / m);
  const double den = l * (4.0 / 3.0 - mp * std::cos(th) * std::cos(th) / m);
  const double thdd = num / den;
  const double xdd = (f + mp * l * (thd * thd * std::sin(th) - thdd * std::cos(th))) / m;
  return {x + tau * xd, xd + tau * xdd, th + tau * thd, thd + tau * thdd};
}

inline std::uint32_t fnv1a(const std::string& bytes) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

}  // namespace oracle
