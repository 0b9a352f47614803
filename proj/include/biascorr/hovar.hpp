#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/estimate.hpp"
#include "biascorr/models.hpp"

namespace biascorr {

// leading     inverse information, the asymptotic variance of the scaled
//             estimator (per observation cross-section, per cell in panels)
// upsilon     the O(1/size) higher-order variance term
// combined    leading + factor * upsilon / size, factor 1 for corrections with
//             root-n consistent bias estimates and 2 for the split sample.
//             For the panel leave-one-out jackknife pass size = T - 1.
struct HigherOrderVariance {
  double leading = 0.0;
  double upsilon = 0.0;
  double combined(double size, double factor = 1.0) const {
    return leading + factor * upsilon / size;
  }
};

// Cross-section higher-order variance
//   Upsilon = E[X^2] E[Y^2] + E[XY]^2,
//   X_i = score_i / I,  Y_i = q1 score_i / (2 I^2) + centered_hessian_i / I,
// with every moment replaced by its sample average at theta_hat.
template <ScalarModelType M>
HigherOrderVariance estimate_upsilon_cross(std::span<const typename M::Obs> data,
                                           const M& model, double theta_hat) {
  const std::size_t n = data.size();
  if (n == 0) throw ParseError("estimate_upsilon_cross: empty dataset");
  const auto ev = model.prepare(theta_hat);

  KahanSum sum_d2, sum_d3;
  for (const auto& z : data) {
    sum_d2.add(ev.d2(z));
    sum_d3.add(ev.d3(z));
  }
  const double nn = static_cast<double>(n);
  const double mean_d2 = sum_d2.value() / nn;
  const double q1 = sum_d3.value() / nn;
  const double info = -mean_d2;
  if (std::abs(info) < 1e-12)
    throw SingularInformation("estimate_upsilon_cross: information near zero");

  const double inv_i = 1.0 / info;
  const double ycoef = 0.5 * q1 * inv_i * inv_i;
  KahanSum xx, yy, xy;
  for (const auto& z : data) {
    const double x = ev.score(z) * inv_i;
    const double y = ycoef * ev.score(z) + (ev.d2(z) - mean_d2) * inv_i;
    xx.add(x * x);
    yy.add(y * y);
    xy.add(x * y);
  }
  const double exx = xx.value() / nn;
  const double eyy = yy.value() / nn;
  const double exy = xy.value() / nn;

  HigherOrderVariance out;
  out.leading = inv_i;
  out.upsilon = exx * eyy + exy * exy;
  return out;
}

// Panel higher-order variance. Per-unit expectations are replaced by time
// averages at (theta_hat, alpha_hat_i); the per-unit slope of the efficient
// score is delta_i = mean(u v) / mean(v^2). Dropped units are excluded.
template <PanelModelType PM>
HigherOrderVariance estimate_hovar_panel(const Panel<typename PM::Obs>& panel,
                                         const PM& model, const PanelEstimate& fit) {
  const auto ev = model.prepare(fit.theta_hat);
  std::vector<char> keep(panel.n, 1);
  for (std::size_t i : fit.dropped_units) keep[i] = 0;

  KahanSum info_sum, term_sum;
  std::size_t n_kept = 0;
  const double T = static_cast<double>(panel.T);
  for (std::size_t i = 0; i < panel.n; ++i) {
    if (!keep[i]) continue;
    ++n_kept;
    const double a = fit.alpha_hat[i];

    KahanSum s_uv, s_vv;
    for (const auto& z : panel.unit(i)) {
      const double u = ev.u(z, a);
      const double v = ev.v(z, a);
      s_uv.add(u * v);
      s_vv.add(v * v);
    }
    const double m_vv = s_vv.value() / T;
    if (m_vv < 1e-12) throw DegenerateUnit(i);
    const double delta = (s_uv.value() / T) / m_vv;

    KahanSum s_eff2, s_uaa, s_v_ua, s_ua2;
    for (const auto& z : panel.unit(i)) {
      const double u = ev.u(z, a);
      const double v = ev.v(z, a);
      const double eff = u - delta * v;
      const double eff_a = ev.u_alpha(z, a) - delta * ev.v_alpha(z, a);
      const double eff_aa = ev.u_alphaalpha(z, a) - delta * ev.v_alphaalpha(z, a);
      s_eff2.add(eff * eff);
      s_uaa.add(eff_aa);
      s_v_ua.add(v * eff_a);
      s_ua2.add(eff_a * eff_a);
    }
    info_sum.add(s_eff2.value() / T);

    const double m_uaa = s_uaa.value() / T;
    const double m_v_ua = s_v_ua.value() / T;
    const double m_ua2 = s_ua2.value() / T;
    term_sum.add((0.5 * m_uaa * m_uaa + 2.0 * m_uaa * m_v_ua + m_vv * m_ua2 +
                  m_v_ua * m_v_ua) /
                 (m_vv * m_vv));
  }
  if (n_kept == 0) throw StayerUnits("estimate_hovar_panel: no usable units");

  const double info = info_sum.value() / static_cast<double>(n_kept);
  if (std::abs(info) < 1e-12)
    throw SingularInformation("estimate_hovar_panel: information near zero");

  HigherOrderVariance out;
  out.leading = 1.0 / info;
  out.upsilon = term_sum.value() / static_cast<double>(n_kept) / (info * info);
  return out;
}

}  // namespace biascorr
