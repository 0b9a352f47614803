#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/estimate.hpp"
#include "biascorr/models.hpp"
#include "biascorr/rng.hpp"

namespace biascorr {

enum class BiasMethod {
  jackknife_loo,
  split_sample,
  bootstrap,
  analytic_sample,
  analytic_infoeq,
  analytic_integral,
  panel_jackknife_loo,
  panel_split_sample,
  ar1_analytic,
};

// Whether the bias estimate lives on the observation-count scale (divide by n
// to correct) or the period-count scale (divide by T).
enum class BiasScale { per_observation, per_period };

struct BiasEstimate {
  double value = 0.0;  // estimate of the scaled higher-order bias
  BiasMethod method = BiasMethod::jackknife_loo;
  BiasScale scale = BiasScale::per_observation;
  double scale_size = 0.0;  // n or T
  std::vector<double> replicate_values;  // leave-out / resample fits, optional
};

inline Estimate apply_correction(const Estimate& full, const BiasEstimate& b) {
  if (b.scale != BiasScale::per_observation && b.method != BiasMethod::ar1_analytic)
    throw ScaleMismatch("panel-scale bias estimate applied to a scalar estimate");
  Estimate out = full;
  out.theta_hat = full.theta_hat - b.value / b.scale_size;
  return out;
}

inline PanelEstimate apply_correction(const PanelEstimate& full, const BiasEstimate& b) {
  if (b.scale != BiasScale::per_period)
    throw ScaleMismatch("cross-section bias estimate applied to a panel estimate");
  PanelEstimate out = full;
  out.theta_hat = full.theta_hat - b.value / b.scale_size;
  return out;
}

// ---------------------------------------------------------------------------
// Cross-section resampling corrections. All subsample refits warm-start at the
// full-sample estimate.

template <ScalarModelType M>
BiasEstimate jackknife_bias(std::span<const typename M::Obs> data, const M& model,
                            const Estimate& full, const SolverOpts& opts = {}) {
  const std::size_t n = data.size();
  if (n < 2) throw ParseError("jackknife_bias: need at least two observations");

  BiasEstimate out;
  out.method = BiasMethod::jackknife_loo;
  out.scale = BiasScale::per_observation;
  out.scale_size = static_cast<double>(n);
  out.replicate_values.resize(n);

  // buf holds the sample minus observation i; replacing slot i afterwards
  // yields the sample minus observation i+1.
  std::vector<typename M::Obs> buf(data.begin() + 1, data.end());
  KahanSum mean_loo;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const Estimate sub = fit_mle<M>(buf, model, full.theta_hat, opts);
      out.replicate_values[i] = sub.theta_hat;
      mean_loo.add(sub.theta_hat);
    } catch (const Error& e) {
      throw SubfitFailure(i, e.what());
    }
    if (i < n - 1) buf[i] = data[i];
  }
  const double nn = static_cast<double>(n);
  out.value = nn * (nn - 1.0) * (mean_loo.value() / nn - full.theta_hat);
  return out;
}

// First ceil(n/2) observations versus the rest, in the order given. The
// estimate is order-dependent by construction.
template <ScalarModelType M>
BiasEstimate split_sample_bias(std::span<const typename M::Obs> data, const M& model,
                               const Estimate& full, const SolverOpts& opts = {}) {
  const std::size_t n = data.size();
  if (n < 2) throw ParseError("split_sample_bias: need at least two observations");
  const std::size_t m = (n + 1) / 2;

  BiasEstimate out;
  out.method = BiasMethod::split_sample;
  out.scale = BiasScale::per_observation;
  out.scale_size = static_cast<double>(n);
  out.replicate_values.resize(2);
  for (int half = 0; half < 2; ++half) {
    const auto block = half == 0 ? data.subspan(0, m) : data.subspan(m);
    try {
      out.replicate_values[half] =
          fit_mle<M>(block, model, full.theta_hat, opts).theta_hat;
    } catch (const Error& e) {
      throw SubfitFailure(static_cast<std::size_t>(half), e.what());
    }
  }
  out.value = static_cast<double>(n) *
              (0.5 * (out.replicate_values[0] + out.replicate_values[1]) -
               full.theta_hat);
  return out;
}

// Nonparametric bootstrap of the bias: B resamples with replacement, each
// refit from the full-sample estimate. Resampling happens on an order-
// canonicalized (sorted) copy so the result depends on the sample only
// through its empirical distribution. Resample b draws from the substream
// (seed, b), so enlarging B never changes earlier resamples.
template <ScalarModelType M>
BiasEstimate bootstrap_bias(std::span<const typename M::Obs> data, const M& model,
                            const Estimate& full, std::size_t B, std::uint64_t seed,
                            const SolverOpts& opts = {}, bool keep_replicates = false) {
  const std::size_t n = data.size();
  if (n == 0 || B == 0) throw ParseError("bootstrap_bias: empty input");

  std::vector<typename M::Obs> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return obs_less(a, b); });

  BiasEstimate out;
  out.method = BiasMethod::bootstrap;
  out.scale = BiasScale::per_observation;
  out.scale_size = static_cast<double>(n);
  if (keep_replicates) out.replicate_values.reserve(B);

  std::vector<typename M::Obs> resample(n);
  KahanSum mean_star;
  std::size_t failures = 0;
  std::size_t last_failure = 0;
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(substream_seed(seed, b));
    for (std::size_t i = 0; i < n; ++i) resample[i] = sorted[rng.below(n)];
    try {
      const Estimate sub = fit_mle<M>(resample, model, full.theta_hat, opts);
      mean_star.add(sub.theta_hat);
      if (keep_replicates) out.replicate_values.push_back(sub.theta_hat);
    } catch (const Error&) {
      ++failures;
      last_failure = b;
    }
  }
  if (failures * 100 > B)
    throw SubfitFailure(last_failure,
                        std::to_string(failures) + " of " + std::to_string(B) +
                            " resample fits failed");
  const std::size_t good = B - failures;
  if (good == 0) throw SubfitFailure(last_failure, "all resample fits failed");
  out.value = static_cast<double>(n) *
              (mean_star.value() / static_cast<double>(good) - full.theta_hat);
  return out;
}

// ---------------------------------------------------------------------------
// Analytical corrections. Sample-average version (no information equality):
//   b = - (mean d2 loglik)(mean score^2) / (2 (mean d2)^3)
//       + (mean score*d2) / (mean d2)^2
// evaluated at theta_hat; the information-equality variant replaces the first
// factor pair with mean d3 / (2 (mean d2)^2).

namespace detail {

template <ScalarModelType M>
void score_cross_moments(std::span<const typename M::Obs> data, const M& model,
                         double th, double& m_d2, double& m_d3, double& m_s_d2,
                         double& m_s2) {
  const auto ev = model.prepare(th);
  KahanSum a, b, c, d;
  for (const auto& z : data) {
    const double s = ev.score(z);
    const double h = ev.d2(z);
    a.add(h);
    b.add(ev.d3(z));
    c.add(s * h);
    d.add(s * s);
  }
  const double n = static_cast<double>(data.size());
  m_d2 = a.value() / n;
  m_d3 = b.value() / n;
  m_s_d2 = c.value() / n;
  m_s2 = d.value() / n;
}

}  // namespace detail

template <ScalarModelType M>
BiasEstimate analytic_bias_sample(std::span<const typename M::Obs> data,
                                  const M& model, const Estimate& full) {
  double m_d2, m_d3, m_s_d2, m_s2;
  detail::score_cross_moments(data, model, full.theta_hat, m_d2, m_d3, m_s_d2, m_s2);
  if (std::abs(m_d2) < 1e-12)
    throw SingularInformation("analytic_bias_sample: mean hessian near zero");
  BiasEstimate out;
  out.method = BiasMethod::analytic_sample;
  out.scale = BiasScale::per_observation;
  out.scale_size = static_cast<double>(data.size());
  out.value = -m_d3 * m_s2 / (2.0 * m_d2 * m_d2 * m_d2) + m_s_d2 / (m_d2 * m_d2);
  return out;
}

template <ScalarModelType M>
BiasEstimate analytic_bias_infoeq(std::span<const typename M::Obs> data,
                                  const M& model, const Estimate& full) {
  double m_d2, m_d3, m_s_d2, m_s2;
  detail::score_cross_moments(data, model, full.theta_hat, m_d2, m_d3, m_s_d2, m_s2);
  if (std::abs(m_d2) < 1e-12)
    throw SingularInformation("analytic_bias_infoeq: mean hessian near zero");
  BiasEstimate out;
  out.method = BiasMethod::analytic_infoeq;
  out.scale = BiasScale::per_observation;
  out.scale_size = static_cast<double>(data.size());
  out.value = m_d3 / (2.0 * m_d2 * m_d2) + m_s_d2 / (m_d2 * m_d2);
  return out;
}

// Plug-in correction using the model's closed-form expectations at theta_hat.
template <class M>
BiasEstimate analytic_bias_integral(const M& model, double theta_hat,
                                    double sample_size) {
  if constexpr (HasExpectations<M>) {
    const ScoreMoments mo = model.expectations(theta_hat);
    if (std::abs(mo.hessian_mean) < 1e-12)
      throw SingularInformation("analytic_bias_integral: information near zero");
    BiasEstimate out;
    out.method = BiasMethod::analytic_integral;
    out.scale = BiasScale::per_observation;
    out.scale_size = sample_size;
    out.value = mo.third_mean / (2.0 * mo.hessian_mean * mo.hessian_mean) +
                mo.score_hessian_mean / (mo.hessian_mean * mo.hessian_mean);
    return out;
  } else {
    (void)theta_hat;
    (void)sample_size;
    throw MissingExpectations(
        "analytic_bias_integral: model supplies no closed-form expectations");
  }
}

// ---------------------------------------------------------------------------
// Panel corrections: delete one period (for all units at once) or split the
// panel into its first and second halves of periods.

namespace detail {

template <class Obs>
Panel<Obs> drop_period(const Panel<Obs>& p, std::size_t t_drop) {
  Panel<Obs> out;
  out.n = p.n;
  out.T = p.T - 1;
  out.cells.resize(out.n * out.T);
  for (std::size_t i = 0; i < p.n; ++i) {
    std::size_t c = 0;
    for (std::size_t t = 0; t < p.T; ++t) {
      if (t == t_drop) continue;
      out.cell(i, c++) = p.cell(i, t);
    }
  }
  return out;
}

template <class Obs>
Panel<Obs> period_block(const Panel<Obs>& p, std::size_t t0, std::size_t t1) {
  Panel<Obs> out;
  out.n = p.n;
  out.T = t1 - t0;
  out.cells.resize(out.n * out.T);
  for (std::size_t i = 0; i < p.n; ++i)
    for (std::size_t t = t0; t < t1; ++t) out.cell(i, t - t0) = p.cell(i, t);
  return out;
}

}  // namespace detail

template <PanelModelType PM>
BiasEstimate panel_jackknife_bias(const Panel<typename PM::Obs>& panel,
                                  const PM& model, const PanelEstimate& full,
                                  const SolverOpts& opts = {}) {
  if (panel.T < 2) throw ParseError("panel_jackknife_bias: need T >= 2");
  BiasEstimate out;
  out.method = BiasMethod::panel_jackknife_loo;
  out.scale = BiasScale::per_period;
  out.scale_size = static_cast<double>(panel.T);
  out.replicate_values.resize(panel.T);

  KahanSum mean_loo;
  for (std::size_t t = 0; t < panel.T; ++t) {
    const auto sub = detail::drop_period(panel, t);
    try {
      const PanelEstimate fit =
          fit_panel_mle<PM>(sub, model, full.theta_hat, opts, full.alpha_hat);
      out.replicate_values[t] = fit.theta_hat;
      mean_loo.add(fit.theta_hat);
    } catch (const Error& e) {
      throw SubfitFailure(t, e.what());
    }
  }
  const double T = static_cast<double>(panel.T);
  out.value = T * (T - 1.0) * (mean_loo.value() / T - full.theta_hat);
  return out;
}

template <PanelModelType PM>
BiasEstimate panel_split_sample_bias(const Panel<typename PM::Obs>& panel,
                                     const PM& model, const PanelEstimate& full,
                                     const SolverOpts& opts = {}) {
  if (panel.T < 2) throw ParseError("panel_split_sample_bias: need T >= 2");
  const std::size_t mid = (panel.T + 1) / 2;

  BiasEstimate out;
  out.method = BiasMethod::panel_split_sample;
  out.scale = BiasScale::per_period;
  out.scale_size = static_cast<double>(panel.T);
  out.replicate_values.resize(2);
  for (int half = 0; half < 2; ++half) {
    const auto block = half == 0 ? detail::period_block(panel, 0, mid)
                                 : detail::period_block(panel, mid, panel.T);
    try {
      out.replicate_values[half] =
          fit_panel_mle<PM>(block, model, full.theta_hat, opts, full.alpha_hat)
              .theta_hat;
    } catch (const Error& e) {
      throw SubfitFailure(static_cast<std::size_t>(half), e.what());
    }
  }
  out.value = static_cast<double>(panel.T) *
              (0.5 * (out.replicate_values[0] + out.replicate_values[1]) -
               full.theta_hat);
  return out;
}

// ---------------------------------------------------------------------------
// AR(1): the limiting scaled bias is -2 theta, so the corrected estimator is
// theta_hat (1 + 2/T). T counts the transitions entering the fit.

inline BiasEstimate ar1_analytic_bias(const Estimate& fit, std::size_t T) {
  BiasEstimate out;
  out.method = BiasMethod::ar1_analytic;
  out.scale = BiasScale::per_period;
  out.scale_size = static_cast<double>(T);
  out.value = -2.0 * fit.theta_hat;
  return out;
}

inline Estimate ar1_analytic_correct(const Estimate& fit, std::size_t T) {
  Estimate out = fit;
  out.theta_hat = fit.theta_hat * (1.0 + 2.0 / static_cast<double>(T));
  return out;
}

}  // namespace biascorr
