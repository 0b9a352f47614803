#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <variant>

#include "biascorr/common.hpp"
#include "biascorr/data.hpp"
#include "biascorr/gauss.hpp"

namespace biascorr {

// Closed-form expectations of score-function products under f(.,theta),
// enough for the integral (plug-in) analytical bias correction.
//   hessian_mean      E[d^2 log f / d theta^2]
//   third_mean        E[d^3 log f / d theta^3]
//   score_hessian_mean E[(d log f)(d^2 log f)]
//   score_sq_mean     E[(d log f)^2]
struct ScoreMoments {
  double hessian_mean;
  double third_mean;
  double score_hessian_mean;
  double score_sq_mean;
};

// A scalar model exposes an evaluator prepared at a fixed theta. prepare()
// hoists theta-only work (square roots etc.) out of the per-observation loop,
// which matters when corrections refit the model millions of times.
template <class M>
concept ScalarModelType =
    requires(const M& m, double th, const typename M::Obs& z) {
      { m.domain() } -> std::convertible_to<Interval>;
      { m.prepare(th).loglik(z) } -> std::convertible_to<double>;
      { m.prepare(th).score(z) } -> std::convertible_to<double>;
      { m.prepare(th).d2(z) } -> std::convertible_to<double>;
      { m.prepare(th).d3(z) } -> std::convertible_to<double>;
    };

template <class M>
concept PanelModelType =
    requires(const M& m, double th, const typename M::Obs& z, double a) {
      { m.domain() } -> std::convertible_to<Interval>;
      { m.prepare(th).loglik(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).u(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).v(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).u_alpha(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).u_alphaalpha(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).v_alpha(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).v_alphaalpha(z, a) } -> std::convertible_to<double>;
      { m.prepare(th).u_theta(z, a) } -> std::convertible_to<double>;
    };

template <class M>
concept HasExpectations = requires(const M& m, double th) {
  { m.expectations(th) } -> std::convertible_to<ScoreMoments>;
};

template <class M>
concept HasDegenerateUnitRule =
    requires(const M& m, std::span<const typename M::Obs> row) {
      { m.is_degenerate_unit(row) } -> std::convertible_to<bool>;
    };

// ---------------------------------------------------------------------------
// z ~ N(sqrt(theta), 1), theta > 0. The MLE is the squared sample mean.

struct SqrtMeanNormal {
  using Obs = double;

  Interval domain() const { return {0.0, std::numeric_limits<double>::infinity()}; }

  struct Eval {
    double s;        // sqrt(theta)
    double inv2s;    // 1/(2 sqrt(theta))
    double inv4t;    // 1/(4 theta)
    double inv4t32;  // 1/(4 theta^(3/2))
    double d3c;      // 3/(8 theta^2)
    double d3e;      // (3/8) theta^(-5/2)

    double loglik(double z) const {
      const double e = z - s;
      return -0.5 * e * e - kLogSqrt2Pi;
    }
    double score(double z) const { return (z - s) * inv2s; }
    double d2(double z) const { return -inv4t - (z - s) * inv4t32; }
    double d3(double z) const { return d3c + (z - s) * d3e; }
  };

  Eval prepare(double th) const {
    const double s = std::sqrt(th);
    return {s, 0.5 / s, 0.25 / th, 0.25 / (th * s), 0.375 / (th * th),
            0.375 / (th * th * s)};
  }

  ScoreMoments expectations(double th) const {
    return {-0.25 / th, 0.375 / (th * th), -0.125 / (th * th), 0.25 / th};
  }

  static double moment_init(std::span<const double> data) {
    double m = 0.0;
    for (double z : data) m += z;
    m /= static_cast<double>(data.size());
    return std::max(m * m, 1e-8);
  }
};

// ---------------------------------------------------------------------------
// Cross-section probit without fixed effect, y = 1{theta x + eps > 0}.
// Kept simple deliberately; it exists so the scalar solver can be checked
// against a grid-search oracle on a nonlinear likelihood.

struct ProbitCross {
  using Obs = YX;

  Interval domain() const { return {}; }

  struct Eval {
    double th;

    // First three derivatives of the observation log likelihood in w.
    static void chain(double w, double y, double& l0, double& l1, double& l2,
                      double& l3) {
      if (y > 0.5) {
        const LogCdfDerivs d = log_ncdf_derivs(w);
        l0 = d.value, l1 = d.d1, l2 = d.d2, l3 = d.d3;
      } else {
        const LogCdfDerivs d = log_ncdf_derivs(-w);
        l0 = d.value, l1 = -d.d1, l2 = d.d2, l3 = -d.d3;
      }
    }

    double loglik(const YX& z) const {
      double l0, l1, l2, l3;
      chain(th * z.x, z.y, l0, l1, l2, l3);
      return l0;
    }
    double score(const YX& z) const {
      double l0, l1, l2, l3;
      chain(th * z.x, z.y, l0, l1, l2, l3);
      return l1 * z.x;
    }
    double d2(const YX& z) const {
      double l0, l1, l2, l3;
      chain(th * z.x, z.y, l0, l1, l2, l3);
      return l2 * z.x * z.x;
    }
    double d3(const YX& z) const {
      double l0, l1, l2, l3;
      chain(th * z.x, z.y, l0, l1, l2, l3);
      return l3 * z.x * z.x * z.x;
    }
  };

  Eval prepare(double th) const { return {th}; }

  static double moment_init(std::span<const YX>) { return 0.0; }
};

// ---------------------------------------------------------------------------
// Conditional Gaussian AR(1): observation is a (lag, current) pair, the
// innovation variance is held fixed at sigma2 (concentrated out before the
// theta solve; it does not move the maximizer).

struct Ar1Conditional {
  using Obs = Transition;

  double sigma2 = 1.0;

  Interval domain() const { return {}; }

  struct Eval {
    double th;
    double inv_s2;

    double loglik(const Transition& z) const {
      const double r = z.cur - th * z.prev;
      return -0.5 * std::log(2.0 * 3.141592653589793238462643383280 / inv_s2) -
             0.5 * r * r * inv_s2;
    }
    double score(const Transition& z) const {
      return z.prev * (z.cur - th * z.prev) * inv_s2;
    }
    double d2(const Transition& z) const { return -z.prev * z.prev * inv_s2; }
    double d3(const Transition&) const { return 0.0; }
  };

  Eval prepare(double th) const { return {th, 1.0 / sigma2}; }

  static double moment_init(std::span<const Transition> data) {
    double num = 0.0, den = 0.0;
    for (const auto& z : data) {
      num += z.prev * z.cur;
      den += z.prev * z.prev;
    }
    return den > 0.0 ? num / den : 0.0;
  }
};

// ---------------------------------------------------------------------------
// Neyman-Scott variance model: z_it ~ N(alpha_i, theta), theta > 0.

struct NeymanScott {
  using Obs = double;

  Interval domain() const { return {0.0, std::numeric_limits<double>::infinity()}; }

  struct Eval {
    double th, inv_t, inv_t2, inv_t3;

    double loglik(double z, double a) const {
      const double e = z - a;
      return -0.5 * std::log(th) - kLogSqrt2Pi - 0.5 * e * e * inv_t;
    }
    double u(double z, double a) const {
      const double e = z - a;
      return -0.5 * inv_t + 0.5 * e * e * inv_t2;
    }
    double v(double z, double a) const { return (z - a) * inv_t; }
    double u_alpha(double z, double a) const { return -(z - a) * inv_t2; }
    double u_alphaalpha(double, double) const { return inv_t2; }
    double v_alpha(double, double) const { return -inv_t; }
    double v_alphaalpha(double, double) const { return 0.0; }
    double u_theta(double z, double a) const {
      const double e = z - a;
      return 0.5 * inv_t2 - e * e * inv_t3;
    }
  };

  Eval prepare(double th) const {
    const double it = 1.0 / th;
    return {th, it, it * it, it * it * it};
  }

  // Per-unit population moments at theta (alpha drops out); used as oracles
  // for the higher-order variance machinery.
  struct UnitMoments {
    double v_sq;             // E[v^2]
    double eff_score_sq;     // E[U^2] with U the efficient theta-score
    double u_alphaalpha;     // E[d^2 u / d alpha^2]
    double v_u_alpha;        // E[v du/dalpha]
    double u_alpha_sq;       // E[(du/dalpha)^2]
    double delta;            // E[uv]/E[v^2]
  };
  UnitMoments population_moments(double th) const {
    const double it = 1.0 / th;
    return {it, 0.5 * it * it, it * it, -it * it, it * it * it, 0.0};
  }

  static double moment_init(const Panel<double>& p) {
    double ss = 0.0;
    for (std::size_t i = 0; i < p.n; ++i) {
      double m = 0.0;
      for (std::size_t t = 0; t < p.T; ++t) m += p.cell(i, t);
      m /= static_cast<double>(p.T);
      for (std::size_t t = 0; t < p.T; ++t) {
        const double e = p.cell(i, t) - m;
        ss += e * e;
      }
    }
    return std::max(ss / static_cast<double>(p.n * p.T), 1e-10);
  }
};

// ---------------------------------------------------------------------------
// Panel probit with individual effects: y_it = 1{theta x_it + alpha_i + eps > 0}.

struct PanelProbit {
  using Obs = YX;

  Interval domain() const { return {}; }

  struct Eval {
    double th;

    double loglik(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l0;
    }
    double u(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l1 * z.x;
    }
    double v(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l1;
    }
    double u_alpha(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l2 * z.x;
    }
    double u_alphaalpha(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l3 * z.x;
    }
    double v_alpha(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l2;
    }
    double v_alphaalpha(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l3;
    }
    double u_theta(const YX& z, double a) const {
      double l0, l1, l2, l3;
      ProbitCross::Eval::chain(th * z.x + a, z.y, l0, l1, l2, l3);
      return l2 * z.x * z.x;
    }
  };

  Eval prepare(double th) const { return {th}; }

  // Stayers: constant outcome within the unit, so the unit effect has no
  // interior maximizer and the unit is dropped from estimation of theta.
  bool is_degenerate_unit(std::span<const YX> row) const {
    for (const auto& z : row)
      if (z.y != row.front().y) return false;
    return true;
  }

  static double moment_init(const Panel<YX>&) { return 0.0; }
};

// ---------------------------------------------------------------------------

enum class Builtin { sqrt_mean_normal, neyman_scott, probit, ar1 };

using BuiltinModel =
    std::variant<SqrtMeanNormal, NeymanScott, PanelProbit, Ar1Conditional>;

inline Builtin builtin_from_name(const std::string& name) {
  if (name == "sqrt-mean-normal") return Builtin::sqrt_mean_normal;
  if (name == "neyman-scott") return Builtin::neyman_scott;
  if (name == "probit") return Builtin::probit;
  if (name == "ar1") return Builtin::ar1;
  throw ConfigError("unknown model '" + name + "'");
}

inline BuiltinModel builtin_model(Builtin which) {
  switch (which) {
    case Builtin::sqrt_mean_normal:
      return SqrtMeanNormal{};
    case Builtin::neyman_scott:
      return NeymanScott{};
    case Builtin::probit:
      return PanelProbit{};
    case Builtin::ar1:
      return Ar1Conditional{};
  }
  throw ConfigError("unknown builtin model");
}

}  // namespace biascorr
