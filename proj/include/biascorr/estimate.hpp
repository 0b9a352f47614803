#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/data.hpp"
#include "biascorr/models.hpp"

namespace biascorr {

struct SolverOpts {
  double score_tol = 1e-10;  // on the mean score
  double step_tol = 1e-12;   // on |delta theta|
  int max_iter = 100;
  int max_halvings = 40;
};

struct Estimate {
  double theta_hat = 0.0;
  double se = 0.0;
  double loglik_at_max = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct PanelEstimate {
  double theta_hat = 0.0;
  std::vector<double> alpha_hat;      // NaN for dropped units
  double se = 0.0;
  std::vector<std::size_t> dropped_units;
  double loglik_at_max = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

template <class Eval, class Obs>
void score_hessian(const Eval& ev, std::span<const Obs> data, double& mean_score,
                   double& mean_d2) {
  KahanSum s, h;
  for (const auto& z : data) {
    s.add(ev.score(z));
    h.add(ev.d2(z));
  }
  const double n = static_cast<double>(data.size());
  mean_score = s.value() / n;
  mean_d2 = h.value() / n;
}

}  // namespace detail

// Newton on the mean score with step-halving. Halving first pulls the step
// back inside the open parameter domain, then backs off until the score
// magnitude does not increase.
template <ScalarModelType M>
Estimate fit_mle(std::span<const typename M::Obs> data, const M& model,
                 double init, const SolverOpts& opts = {}) {
  if (data.empty()) throw ParseError("fit_mle: empty dataset");
  const Interval dom = model.domain();
  if (!dom.contains(init)) throw DomainExit("fit_mle: init outside parameter domain");

  const double n = static_cast<double>(data.size());
  double th = init;
  double mean_score = 0.0, mean_d2 = 0.0;
  detail::score_hessian(model.prepare(th), data, mean_score, mean_d2);

  Estimate out;
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    out.iterations = iter;
    if (std::abs(mean_score) <= opts.score_tol) {
      out.converged = true;
      break;
    }
    double step;
    if (std::isfinite(mean_d2) && mean_d2 < 0.0) {
      step = -mean_score / mean_d2;
    } else {
      // non-concave spot: move uphill along the score with a bounded step
      step = (mean_score > 0.0 ? 1.0 : -1.0) * 0.1 * std::max(1.0, std::abs(th));
    }

    int halvings = 0;
    double th_new = th + step;
    while (!dom.contains(th_new)) {
      if (++halvings > opts.max_halvings)
        throw DomainExit("fit_mle: step-halving cannot re-enter parameter domain");
      step *= 0.5;
      th_new = th + step;
    }
    double new_score = 0.0, new_d2 = 0.0;
    detail::score_hessian(model.prepare(th_new), data, new_score, new_d2);
    while ((!std::isfinite(new_score) ||
            std::abs(new_score) > std::abs(mean_score) * (1.0 + 1e-9)) &&
           halvings < opts.max_halvings) {
      ++halvings;
      step *= 0.5;
      th_new = th + step;
      detail::score_hessian(model.prepare(th_new), data, new_score, new_d2);
    }

    const double delta = th_new - th;
    th = th_new;
    mean_score = new_score;
    mean_d2 = new_d2;
    if (std::abs(delta) <= opts.step_tol &&
        std::abs(mean_score) <= opts.score_tol * 1e2) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) throw NonConvergence("fit_mle: no convergence after max_iter");

  out.theta_hat = th;
  const auto ev = model.prepare(th);
  KahanSum ll;
  for (const auto& z : data) ll.add(ev.loglik(z));
  out.loglik_at_max = ll.value();
  if (!(mean_d2 < 0.0))
    throw NonConvergence("fit_mle: non-negative curvature at the maximum");
  out.se = 1.0 / std::sqrt(-n * mean_d2);
  return out;
}

// Convenience: conditional AR(1) fit from an ordered series. The innovation
// variance is concentrated out (set to the mean squared OLS residual) before
// the theta solve so the reported standard error has the right scale.
inline Estimate fit_ar1(std::span<const double> series, const SolverOpts& opts = {},
                        std::vector<Transition>* out_data = nullptr,
                        Ar1Conditional* out_model = nullptr) {
  std::vector<Transition> data = transitions(series);
  const double init = Ar1Conditional::moment_init(data);
  double rss = 0.0;
  for (const auto& z : data) {
    const double r = z.cur - init * z.prev;
    rss += r * r;
  }
  Ar1Conditional model{std::max(rss / static_cast<double>(data.size()), 1e-12)};
  Estimate est = fit_mle<Ar1Conditional>(data, model, init, opts);
  if (out_data) *out_data = std::move(data);
  if (out_model) *out_model = model;
  return est;
}

namespace detail {

// Inner Newton for one unit effect at fixed theta.
template <class Eval, class Obs>
double solve_alpha(const Eval& ev, std::span<const Obs> row, double a,
                   const SolverOpts& opts, std::size_t unit) {
  auto mean_v = [&](double alpha) {
    KahanSum s;
    for (const auto& z : row) s.add(ev.v(z, alpha));
    return s.value() / static_cast<double>(row.size());
  };
  double sv = mean_v(a);
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    if (std::abs(sv) <= opts.score_tol) return a;
    KahanSum h;
    for (const auto& z : row) h.add(ev.v_alpha(z, a));
    const double mean_va = h.value() / static_cast<double>(row.size());
    double step = (std::isfinite(mean_va) && mean_va < 0.0)
                      ? -sv / mean_va
                      : (sv > 0.0 ? 1.0 : -1.0);
    double a_new = a + step;
    double sv_new = mean_v(a_new);
    int halvings = 0;
    while ((!std::isfinite(sv_new) || std::abs(sv_new) > std::abs(sv) * (1.0 + 1e-9)) &&
           halvings < opts.max_halvings) {
      ++halvings;
      step *= 0.5;
      a_new = a + step;
      sv_new = mean_v(a_new);
    }
    const double delta = a_new - a;
    a = a_new;
    sv = sv_new;
    if (std::abs(delta) <= opts.step_tol && std::abs(sv) <= opts.score_tol * 1e2)
      return a;
  }
  if (std::abs(sv) <= opts.score_tol) return a;
  throw NonConvergence("unit " + std::to_string(unit) + ": effect solve diverged");
}

}  // namespace detail

// Nested Newton for the fixed-effects MLE: inner solves per-unit effects at
// the current theta (warm-started across outer iterations), outer Newton on
// the profile score. Units flagged degenerate by the model (probit stayers)
// are excluded from every sum.
template <PanelModelType PM>
PanelEstimate fit_panel_mle(const Panel<typename PM::Obs>& panel, const PM& model,
                            double init, const SolverOpts& opts = {},
                            std::span<const double> alpha_init = {}) {
  using Obs = typename PM::Obs;
  if (panel.n == 0 || panel.T == 0) throw ParseError("fit_panel_mle: empty panel");
  const Interval dom = model.domain();
  if (!dom.contains(init))
    throw DomainExit("fit_panel_mle: init outside parameter domain");

  PanelEstimate out;
  out.alpha_hat.assign(panel.n, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> keep(panel.n, 1);
  for (std::size_t i = 0; i < panel.n; ++i) {
    if constexpr (HasDegenerateUnitRule<PM>) {
      if (model.is_degenerate_unit(panel.unit(i))) {
        keep[i] = 0;
        out.dropped_units.push_back(i);
      }
    }
  }
  std::size_t n_kept = panel.n - out.dropped_units.size();
  if (n_kept == 0) throw StayerUnits("fit_panel_mle: every unit is degenerate");
  const double obs_count = static_cast<double>(n_kept * panel.T);

  std::vector<double> alpha(panel.n, 0.0);
  for (std::size_t i = 0; i < panel.n; ++i)
    if (i < alpha_init.size() && std::isfinite(alpha_init[i])) alpha[i] = alpha_init[i];

  // profile score and its theta-derivative at (theta, alpha_hat(theta))
  auto profile = [&](double th, bool want_slope, double& score, double& slope) {
    const auto ev = model.prepare(th);
    KahanSum s, d;
    for (std::size_t i = 0; i < panel.n; ++i) {
      if (!keep[i]) continue;
      alpha[i] = detail::solve_alpha<typename PM::Eval, Obs>(ev, panel.unit(i),
                                                             alpha[i], opts, i);
      KahanSum su, sua, sva, sut;
      for (const auto& z : panel.unit(i)) {
        su.add(ev.u(z, alpha[i]));
        if (want_slope) {
          sua.add(ev.u_alpha(z, alpha[i]));
          sva.add(ev.v_alpha(z, alpha[i]));
          sut.add(ev.u_theta(z, alpha[i]));
        }
      }
      s.add(su.value());
      if (want_slope) {
        const double va = sva.value();
        d.add(sut.value() - (va != 0.0 ? sua.value() * sua.value() / va : 0.0));
      }
    }
    score = s.value() / obs_count;
    slope = want_slope ? d.value() / obs_count : 0.0;
  };

  double th = init;
  double score, slope;
  profile(th, true, score, slope);
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    out.iterations = iter;
    if (std::abs(score) <= opts.score_tol) {
      out.converged = true;
      break;
    }
    double step = (std::isfinite(slope) && slope < 0.0)
                      ? -score / slope
                      : (score > 0.0 ? 1.0 : -1.0) * 0.1 * std::max(1.0, std::abs(th));
    int halvings = 0;
    double th_new = th + step;
    while (!dom.contains(th_new)) {
      if (++halvings > opts.max_halvings)
        throw DomainExit("fit_panel_mle: step-halving cannot re-enter domain");
      step *= 0.5;
      th_new = th + step;
    }
    double score_new, slope_new;
    profile(th_new, true, score_new, slope_new);
    while ((!std::isfinite(score_new) ||
            std::abs(score_new) > std::abs(score) * (1.0 + 1e-9)) &&
           halvings < opts.max_halvings) {
      ++halvings;
      step *= 0.5;
      th_new = th + step;
      profile(th_new, true, score_new, slope_new);
    }
    const double delta = th_new - th;
    th = th_new;
    score = score_new;
    slope = slope_new;
    if (std::abs(delta) <= opts.step_tol && std::abs(score) <= opts.score_tol * 1e2) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw NonConvergence("fit_panel_mle: no convergence after max_iter");

  out.theta_hat = th;
  for (std::size_t i = 0; i < panel.n; ++i)
    out.alpha_hat[i] =
        keep[i] ? alpha[i] : std::numeric_limits<double>::quiet_NaN();

  // theta-theta element of the inverse of the full (theta, alpha_1..alpha_n)
  // Hessian via its arrowhead structure; also the total log likelihood.
  const auto ev = model.prepare(th);
  KahanSum h_tt, correction, ll;
  for (std::size_t i = 0; i < panel.n; ++i) {
    if (!keep[i]) continue;
    KahanSum sut, sua, sva;
    for (const auto& z : panel.unit(i)) {
      sut.add(ev.u_theta(z, alpha[i]));
      sua.add(ev.u_alpha(z, alpha[i]));
      sva.add(ev.v_alpha(z, alpha[i]));
      ll.add(ev.loglik(z, alpha[i]));
    }
    h_tt.add(sut.value());
    if (sva.value() != 0.0) correction.add(sua.value() * sua.value() / sva.value());
  }
  out.loglik_at_max = ll.value();
  const double profile_hessian = h_tt.value() - correction.value();
  if (!(profile_hessian < 0.0))
    throw NonConvergence("fit_panel_mle: non-negative profile curvature");
  out.se = 1.0 / std::sqrt(-profile_hessian);
  return out;
}

}  // namespace biascorr
