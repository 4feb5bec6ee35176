#pragma once

// Softmax operators over action-value vectors: the Boltzmann operator, the
// mellowmax operator, the maximum-entropy mellowmax inverse temperature and
// a bracketing scalar root finder.
//
// Everything here is a pure function of its arguments. Operators accept any
// dense Eigen expression; the scalar type follows the expression.

#include "episodic/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace episodic {

/// Estimated action values, one per action.
using ValueVector = Vector;

struct RootFindResult {
  double root = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

struct BrentOptions {
  double f_tol = 1e-8;  // stop when |f(x)| <= f_tol
  double x_tol = 1e-8;  // stop when the bracket half-width falls below x_tol
  int max_iter = 100;
};

namespace detail {

template <typename Derived>
void check_values(const Eigen::DenseBase<Derived>& q) {
  if (q.size() == 0) throw DomainError("value vector is empty");
  if (!q.allFinite()) throw DomainError("value vector has non-finite entries");
}

}  // namespace detail

/// Boltzmann-weighted average sum_i q_i e^{beta q_i} / sum_i e^{beta q_i}.
template <typename Derived>
typename Derived::Scalar boltzmann_operator(const Eigen::DenseBase<Derived>& q,
                                            typename Derived::Scalar beta) {
  using Scalar = typename Derived::Scalar;
  detail::check_values(q);
  if (!std::isfinite(beta)) throw DomainError("beta must be finite");
  const VectorT<Scalar> z = beta * q.derived().template cast<Scalar>();
  const VectorT<Scalar> w = (z.array() - z.maxCoeff()).exp().matrix();
  const Scalar result = w.dot(q.derived().template cast<Scalar>()) / w.sum();
  // Rounding can leave the weighted mean a hair outside the hull.
  return std::clamp(result, q.minCoeff(), q.maxCoeff());
}

/// Mellowmax log((1/n) sum_i e^{omega q_i}) / omega, evaluated around the
/// entry that dominates the exponent so that no term exceeds one.
template <typename Derived>
typename Derived::Scalar mellowmax(const Eigen::DenseBase<Derived>& q,
                                   typename Derived::Scalar omega) {
  using Scalar = typename Derived::Scalar;
  using std::exp;
  using std::log1p;
  detail::check_values(q);
  if (omega == Scalar(0) || !std::isfinite(omega)) {
    throw DomainError("mellowmax requires a finite, nonzero omega");
  }
  Index pivot = 0;
  if (omega > 0) {
    q.maxCoeff(&pivot);
  } else {
    q.minCoeff(&pivot);
  }
  const Scalar anchor = q(pivot);
  Scalar rest = 0;
  for (Index i = 0; i < q.size(); ++i) {
    if (i != pivot) rest += exp(omega * (q(i) - anchor));
  }
  // log1p on both sides keeps the result on the correct side of the anchor.
  const Scalar log_n = log1p(static_cast<Scalar>(q.size() - 1));
  const Scalar result = anchor + (log1p(rest) - log_n) / omega;
  return std::clamp(result, q.minCoeff(), q.maxCoeff());
}

/// Probability vector over a discrete action set.
class PolicyDistribution {
 public:
  PolicyDistribution() = default;
  explicit PolicyDistribution(Vector probabilities)
      : probabilities_(std::move(probabilities)) {
    if (probabilities_.size() == 0) throw DomainError("empty distribution");
    if (!probabilities_.allFinite() || (probabilities_.array() < 0.0).any()) {
      throw DomainError("distribution has negative or non-finite entries");
    }
    if (std::abs(probabilities_.sum() - 1.0) > 1e-12) {
      throw DomainError("distribution does not sum to one");
    }
  }

  static PolicyDistribution uniform(Index n) {
    return PolicyDistribution(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

  const Vector& probabilities() const { return probabilities_; }
  double operator[](Index i) const { return probabilities_(i); }
  Index size() const { return probabilities_.size(); }

  Index argmax() const {
    Index best = 0;
    probabilities_.maxCoeff(&best);
    return best;
  }

 private:
  Vector probabilities_;
};

/// p_i proportional to e^{beta q_i}.
template <typename Derived>
PolicyDistribution boltzmann_policy(const Eigen::DenseBase<Derived>& q, double beta) {
  detail::check_values(q);
  if (!std::isfinite(beta) || beta < 0.0) {
    throw DomainError("boltzmann policy requires finite beta >= 0");
  }
  const Vector z = beta * q.derived().template cast<double>();
  Vector w = (z.array() - z.maxCoeff()).exp().matrix();
  w /= w.sum();
  return PolicyDistribution(std::move(w));
}

/// Brent's bracketing root finder (inverse quadratic interpolation, secant
/// and bisection steps). Requires f(lo) and f(hi) of opposite sign.
template <typename F>
RootFindResult brent_root(F&& f, double lo, double hi, const BrentOptions& opt) {
  if (!(opt.f_tol > 0.0) || !(opt.x_tol > 0.0)) {
    throw DomainError("brent tolerances must be positive");
  }
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  double a = lo;
  double b = hi;
  double fa = f(a);
  double fb = f(b);
  if (!std::isfinite(fa) || !std::isfinite(fb)) {
    throw DomainError("function is not finite at the bracket ends");
  }
  if ((fa > 0.0 && fb > 0.0) || (fa < 0.0 && fb < 0.0)) {
    throw DomainError("root is not bracketed");
  }
  if (std::abs(fa) <= opt.f_tol && std::abs(fa) < std::abs(fb)) return {a, 0, fa};

  double c = b;
  double fc = fb;
  double d = b - a;
  double e = d;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    if ((fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol1 = 2.0 * kEps * std::abs(b) + 0.5 * opt.x_tol;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || std::abs(fb) <= opt.f_tol) return {b, iter, fb};

    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      const double s = fb / fa;
      double p;
      double q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qa = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
        q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      const double min1 = 3.0 * xm * q - std::abs(tol1 * q);
      const double min2 = std::abs(e * q);
      if (2.0 * p < std::min(min1, min2)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : std::copysign(tol1, xm);
    fb = f(b);
  }
  throw SolverFailure("brent: iteration limit reached", std::min(b, c), std::max(b, c));
}

template <typename F>
RootFindResult brent_root(F&& f, double lo, double hi, double tol = 1e-8, int max_iter = 100) {
  return brent_root(std::forward<F>(f), lo, hi, BrentOptions{tol, tol, max_iter});
}

/// E_p[q] - target where p is the Boltzmann distribution at inverse
/// temperature beta. Uses normalized weights so it never overflows.
template <typename Derived>
double expected_value_gap(const Eigen::DenseBase<Derived>& q, double beta, double target) {
  const Vector z = beta * q.derived().template cast<double>();
  const Vector w = (z.array() - z.maxCoeff()).exp().matrix();
  const Vector centered = (q.derived().template cast<double>().array() - target).matrix();
  return w.dot(centered) / w.sum();
}

/// Inverse temperature whose Boltzmann policy has expected value equal to
/// mellowmax(q, omega). Constant q yields beta = 0.
template <typename Derived>
RootFindResult max_entropy_beta(const Eigen::DenseBase<Derived>& q, double omega,
                                double tol = 1e-8, int max_iter = 100) {
  detail::check_values(q);
  if (!(omega > 0.0) || !std::isfinite(omega)) throw DomainError("omega must be positive");
  if (!(tol > 0.0)) throw DomainError("tolerance must be positive");
  const double range = static_cast<double>(q.maxCoeff() - q.minCoeff());
  if (range == 0.0) return {0.0, 0, 0.0};

  const double mm = static_cast<double>(mellowmax(q, static_cast<typename Derived::Scalar>(omega)));
  auto residual = [&](double beta) { return expected_value_gap(q, beta, mm); };

  const double scale = 1.0 / std::max(1.0, range);
  double lo = -scale;
  double hi = scale;
  double flo = residual(lo);
  double fhi = residual(hi);
  int doublings = 0;
  while ((flo > 0.0) == (fhi > 0.0) && flo != 0.0 && fhi != 0.0) {
    if (++doublings > 60) throw SolverFailure("max_entropy_beta: bracket expansion exhausted", lo, hi);
    lo *= 2.0;
    hi *= 2.0;
    flo = residual(lo);
    fhi = residual(hi);
  }
  // x_tol at machine resolution: the residual slope (the Boltzmann variance
  // of q) can be large, so only the residual test is meaningful.
  const BrentOptions opt{tol, 4.0 * std::numeric_limits<double>::epsilon(), max_iter};
  return brent_root(residual, lo, hi, opt);
}

/// Boltzmann policy whose temperature is re-solved for the given values.
template <typename Derived>
PolicyDistribution mellowmax_policy(const Eigen::DenseBase<Derived>& q, double omega,
                                    double tol = 1e-8) {
  const RootFindResult beta = max_entropy_beta(q, omega, tol);
  // mm >= mean puts the exact root at beta >= 0; Brent may stop just below.
  return boltzmann_policy(q, std::max(0.0, beta.root));
}

}  // namespace episodic
