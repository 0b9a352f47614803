#pragma once

#include <cmath>

namespace biascorr {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178032973640562;
inline constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;

inline double norm_logpdf(double w) { return -0.5 * w * w - kLogSqrt2Pi; }
inline double norm_pdf(double w) { return std::exp(norm_logpdf(w)); }
inline double norm_cdf(double w) { return 0.5 * std::erfc(-w * kInvSqrt2); }

// phi(w)/Phi(w). erfc is fine down to w ~ -26; the asymptotic tail series
// takes over well before that so ratios never overflow. The two branches
// agree to ~1e-10 relative at the switch point.
inline double mills_ratio(double w) {
  if (w < -10.0) {
    const double x = -w;
    const double v = 1.0 / (x * x);
    // Phi(-x)/phi(x) ~ (1/x)(1 - v + 3v^2 - 15v^3 + ...), truncation < 1e-9 here
    const double series =
        1.0 + v * (-1.0 + v * (3.0 + v * (-15.0 + v * (105.0 + v * (-945.0 + v * (10395.0 - v * 135135.0))))));
    return x / series;
  }
  return norm_pdf(w) / norm_cdf(w);
}

inline double norm_logcdf(double w) {
  if (w < -10.0) return norm_logpdf(w) - std::log(mills_ratio(w));
  return std::log(norm_cdf(w));
}

// log Phi(w) together with its first three derivatives in w.
struct LogCdfDerivs {
  double value;
  double d1;
  double d2;
  double d3;
};

inline LogCdfDerivs log_ncdf_derivs(double w) {
  const double g = mills_ratio(w);
  const double d2 = -g * (w + g);
  const double d3 = g * (w * w + 3.0 * g * w + 2.0 * g * g - 1.0);
  return {norm_logcdf(w), g, d2, d3};
}

// Inverse standard normal CDF. Acklam's rational approximation polished with
// two Halley steps against erfc, accurate to ~1e-15 over (0,1).
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) return std::numeric_limits<double>::quiet_NaN();
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const double e = norm_cdf(x) - p;
    const double u = e / norm_pdf(x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace biascorr
