#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/rng.hpp"

namespace biascorr {

// Normalized V-statistics: W = T^(m/2) * kbar_1 * ... * kbar_m for a set of m
// kernels evaluated along a series, together with their leave-one-out
// jackknife and half-sample transforms. The transforms are algebraic in the
// kernel values, so everything here operates on the evaluated kernel matrix.

using Kernel = std::function<double(double)>;

struct KernelSet {
  std::vector<Kernel> kernels;
  bool center = true;  // subtract each kernel's sample mean before use
};

struct KernelValues {
  std::size_t T = 0;
  std::vector<std::vector<double>> k;  // k[j][t]
  std::size_t order() const { return k.size(); }
};

inline KernelValues evaluate_kernels(const KernelSet& kset,
                                     std::span<const double> series) {
  if (kset.kernels.empty()) throw UnsupportedOrder("kernel set is empty");
  if (series.size() < kset.kernels.size())
    throw ParseError("series shorter than the kernel order");
  KernelValues kv;
  kv.T = series.size();
  kv.k.resize(kset.kernels.size());
  for (std::size_t j = 0; j < kset.kernels.size(); ++j) {
    auto& col = kv.k[j];
    col.resize(kv.T);
    for (std::size_t t = 0; t < kv.T; ++t) col[t] = kset.kernels[j](series[t]);
    if (kset.center) {
      // two passes leave the residual mean at rounding level (<= 1e-14)
      for (int pass = 0; pass < 2; ++pass) {
        KahanSum s;
        for (double x : col) s.add(x);
        const double m = s.value() / static_cast<double>(kv.T);
        for (double& x : col) x -= m;
      }
    }
  }
  return kv;
}

namespace vdetail {

inline std::vector<double> full_sums(const KernelValues& kv) {
  std::vector<double> a(kv.order());
  for (std::size_t j = 0; j < kv.order(); ++j) {
    KahanSum s;
    for (double x : kv.k[j]) s.add(x);
    a[j] = s.value();
  }
  return a;
}

// sum over t of k_j1(t) * k_j2(t) (pointwise product sum)
inline double pair_sum(const KernelValues& kv, std::size_t j1, std::size_t j2) {
  KahanSum s;
  for (std::size_t t = 0; t < kv.T; ++t) s.add(kv.k[j1][t] * kv.k[j2][t]);
  return s.value();
}

inline double triple_sum(const KernelValues& kv) {
  KahanSum s;
  for (std::size_t t = 0; t < kv.T; ++t)
    s.add(kv.k[0][t] * kv.k[1][t] * kv.k[2][t]);
  return s.value();
}

}  // namespace vdetail

// W computed through the product-of-means identity, O(mT).
inline double vstat_value(const KernelValues& kv) {
  const double T = static_cast<double>(kv.T);
  double w = std::pow(T, 0.5 * static_cast<double>(kv.order()));
  for (std::size_t j = 0; j < kv.order(); ++j) {
    KahanSum s;
    for (double x : kv.k[j]) s.add(x);
    w *= s.value() / T;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Jackknifed statistic  T W - (T-1) (T/(T-1))^(m/2) (1/T) sum_t W^(-t).

// Definition-based evaluator: each delete-t statistic from its deleted sums,
// O(mT) per delete.
inline double jackknife_vstat_direct(const KernelValues& kv) {
  const std::size_t m = kv.order();
  const double T = static_cast<double>(kv.T);
  const auto a = vdetail::full_sums(kv);

  KahanSum sum_loo;
  for (std::size_t t = 0; t < kv.T; ++t) {
    double w = 1.0;
    for (std::size_t j = 0; j < m; ++j) w *= a[j] - kv.k[j][t];
    sum_loo.add(w);
  }
  const double scale = std::pow(T - 1.0, 0.5 * static_cast<double>(m));
  const double mean_loo = sum_loo.value() / scale / T;
  return T * vstat_value(kv) -
         (T - 1.0) * std::pow(T / (T - 1.0), 0.5 * static_cast<double>(m)) * mean_loo;
}

// Closed forms for m <= 3, written with full-sample sums:
//   m=1:  W
//   m=2:  (A1 A2 - A12) / (T-1)
//   m=3:  (T+1)/(sqrt(T)(T-1)^2) A1 A2 A3
//         - sqrt(T)/(T-1)^2 (A1 A23 + A2 A13 + A3 A12)
//         + sqrt(T)/(T-1)^2 A123
// coeff_perturb is a verification hook: it scales the leading coefficient by
// (1 + coeff_perturb) so a deliberately wrong constant is caught downstream.
inline double jackknife_vstat_closed(const KernelValues& kv,
                                     double coeff_perturb = 0.0) {
  const std::size_t m = kv.order();
  if (m > 3)
    throw UnsupportedOrder("jackknife closed form available for m <= 3 only");
  const double T = static_cast<double>(kv.T);
  const double bump = 1.0 + coeff_perturb;
  const auto a = vdetail::full_sums(kv);
  if (m == 1) return bump * vstat_value(kv);
  if (m == 2)
    return bump * (a[0] * a[1] - vdetail::pair_sum(kv, 0, 1)) / (T - 1.0);
  const double d = (T - 1.0) * (T - 1.0);
  const double a12 = vdetail::pair_sum(kv, 0, 1);
  const double a13 = vdetail::pair_sum(kv, 0, 2);
  const double a23 = vdetail::pair_sum(kv, 1, 2);
  return bump * (T + 1.0) / (std::sqrt(T) * d) * a[0] * a[1] * a[2] -
         std::sqrt(T) / d * (a[0] * a23 + a[1] * a13 + a[2] * a12) +
         std::sqrt(T) / d * vdetail::triple_sum(kv);
}

// The same m=3 statistic regrouped over distinct-index sums, the arrangement
// used alongside the product form in derivations:
//   W~ = T(T+1)/(T-1)^2 W - sqrt(T)/(T-1)^2 P2 - 2 sqrt(T)/(T-1)^2 A123
// where P2 sums k-products over index pairs with exactly the listed slot
// distinct. Verified against the direct evaluator like the product form.
inline double jackknife_vstat_closed_permsum(const KernelValues& kv,
                                             double coeff_perturb = 0.0) {
  const std::size_t m = kv.order();
  if (m > 3)
    throw UnsupportedOrder("jackknife closed form available for m <= 3 only");
  if (m < 3) return jackknife_vstat_closed(kv, coeff_perturb);
  const double T = static_cast<double>(kv.T);
  const double bump = 1.0 + coeff_perturb;
  const auto a = vdetail::full_sums(kv);
  const double a12 = vdetail::pair_sum(kv, 0, 1);
  const double a13 = vdetail::pair_sum(kv, 0, 2);
  const double a23 = vdetail::pair_sum(kv, 1, 2);
  const double a123 = vdetail::triple_sum(kv);
  // sum over t1 != t2 of the three one-slot-out permutations
  const double p2 = (a[0] * a23 - a123) + (a[1] * a13 - a123) + (a[2] * a12 - a123);
  const double d = (T - 1.0) * (T - 1.0);
  return bump * T * (T + 1.0) / d * vstat_value(kv) - std::sqrt(T) / d * p2 -
         2.0 * std::sqrt(T) / d * a123;
}

// ---------------------------------------------------------------------------
// Half-sample statistic  2 W - 2^(m/2) (W^(1) + W^(2)) / 2  with the halves
// tau_1 = {1..T/2}, tau_2 = {T/2+1..T}. Requires an even series length.

namespace vdetail {

inline void require_even(const KernelValues& kv) {
  if (kv.T % 2 != 0)
    throw OddLength("half-sample V-statistic requires an even series length");
}

// W restricted to [t0, t1), normalized by the block length.
inline double block_vstat(const KernelValues& kv, std::size_t t0, std::size_t t1) {
  const double len = static_cast<double>(t1 - t0);
  double w = std::pow(len, 0.5 * static_cast<double>(kv.order()));
  for (std::size_t j = 0; j < kv.order(); ++j) {
    KahanSum s;
    for (std::size_t t = t0; t < t1; ++t) s.add(kv.k[j][t]);
    w *= s.value() / len;
  }
  return w;
}

}  // namespace vdetail

inline double split_vstat_direct(const KernelValues& kv) {
  vdetail::require_even(kv);
  const std::size_t half = kv.T / 2;
  const double m = static_cast<double>(kv.order());
  const double w1 = vdetail::block_vstat(kv, 0, half);
  const double w2 = vdetail::block_vstat(kv, half, kv.T);
  return 2.0 * vstat_value(kv) - std::pow(2.0, 0.5 * m) * 0.5 * (w1 + w2);
}

// Closed forms for m <= 4 via block sums B_j (first half), C_j (second half):
//   m=1: W
//   m=2: (2/T) (B1 C2 + C1 B2)
//   m=3: 2W - (4/T^(3/2)) (B1 B2 B3 + C1 C2 C3)
//   m=4: 2W - (8/T^2) (B1 B2 B3 B4 + C1 C2 C3 C4)
inline double split_vstat_closed(const KernelValues& kv, double coeff_perturb = 0.0) {
  const std::size_t m = kv.order();
  if (m > 4) throw UnsupportedOrder("split closed form available for m <= 4 only");
  vdetail::require_even(kv);
  const std::size_t half = kv.T / 2;
  const double T = static_cast<double>(kv.T);
  const double bump = 1.0 + coeff_perturb;

  std::vector<double> b(m), c(m);
  for (std::size_t j = 0; j < m; ++j) {
    KahanSum sb, sc;
    for (std::size_t t = 0; t < half; ++t) sb.add(kv.k[j][t]);
    for (std::size_t t = half; t < kv.T; ++t) sc.add(kv.k[j][t]);
    b[j] = sb.value();
    c[j] = sc.value();
  }
  if (m == 1) return bump * vstat_value(kv);
  if (m == 2) return bump * 2.0 / T * (b[0] * c[1] + c[0] * b[1]);
  double pb = 1.0, pc = 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    pb *= b[j];
    pc *= c[j];
  }
  if (m == 3)
    return 2.0 * vstat_value(kv) - bump * 4.0 / (T * std::sqrt(T)) * (pb + pc);
  return 2.0 * vstat_value(kv) - bump * 8.0 / (T * T) * (pb + pc);
}

// Convenience wrappers taking a raw series plus a kernel set.
inline double vstat(std::span<const double> series, const KernelSet& kset) {
  return vstat_value(evaluate_kernels(kset, series));
}
inline double jackknife_vstat_direct(std::span<const double> series,
                                     const KernelSet& kset) {
  return jackknife_vstat_direct(evaluate_kernels(kset, series));
}
inline double jackknife_vstat_closed(std::span<const double> series,
                                     const KernelSet& kset) {
  return jackknife_vstat_closed(evaluate_kernels(kset, series));
}
inline double split_vstat_direct(std::span<const double> series,
                                 const KernelSet& kset) {
  return split_vstat_direct(evaluate_kernels(kset, series));
}
inline double split_vstat_closed(std::span<const double> series,
                                 const KernelSet& kset) {
  return split_vstat_closed(evaluate_kernels(kset, series));
}

// ---------------------------------------------------------------------------
// Randomized identity suite: closed versus direct on random polynomial
// kernels and random series, reported per lemma. Used by the CLI `verify`
// subcommand and by the acceptance tests.

struct IdentityReport {
  struct Row {
    std::string name;
    int cases = 0;
    int failures = 0;
    double max_rel_err = 0.0;
  };
  std::vector<Row> rows;
  bool ok() const {
    for (const auto& r : rows)
      if (r.failures > 0) return false;
    return true;
  }
};

inline IdentityReport run_vstat_identity_suite(int cases_per_lemma,
                                               std::uint64_t seed,
                                               double tol = 1e-10,
                                               double coeff_perturb = 0.0) {
  IdentityReport rep;
  auto random_case = [](Rng& rng, std::size_t m, bool even_T) {
    std::size_t T = 4 + rng.below(21);  // 4..24
    if (even_T && T % 2 == 1) ++T;
    std::vector<double> series(T);
    for (auto& x : series) x = rng.normal() + 0.4 * rng.uniform(-1.0, 1.0);
    KernelSet kset;
    kset.center = rng.uniform() < 0.5;
    for (std::size_t j = 0; j < m; ++j) {
      double c0 = rng.uniform(-1.0, 1.0), c1 = rng.uniform(-1.0, 1.0);
      double c2 = rng.uniform(-1.0, 1.0), c3 = rng.uniform(-0.5, 0.5);
      kset.kernels.push_back(
          [c0, c1, c2, c3](double x) { return c0 + x * (c1 + x * (c2 + x * c3)); });
    }
    return evaluate_kernels(kset, series);
  };

  auto run = [&](const std::string& name, std::size_t m, bool even_T,
                 auto&& closed, auto&& direct) {
    IdentityReport::Row row;
    row.name = name;
    Rng rng(substream_seed(seed, std::hash<std::string>{}(name)));
    for (int c = 0; c < cases_per_lemma; ++c) {
      const KernelValues kv = random_case(rng, m, even_T);
      const double lhs = closed(kv);
      const double rhs = direct(kv);
      const double err = relative_gap(lhs, rhs);
      row.max_rel_err = std::max(row.max_rel_err, err);
      if (!(err <= tol)) ++row.failures;
      ++row.cases;
    }
    rep.rows.push_back(std::move(row));
  };

  for (std::size_t m = 1; m <= 3; ++m)
    run("jackknife order " + std::to_string(m), m, false,
        [&](const KernelValues& kv) { return jackknife_vstat_closed(kv, coeff_perturb); },
        [](const KernelValues& kv) { return jackknife_vstat_direct(kv); });
  run("jackknife order 3 (regrouped)", 3, false,
      [&](const KernelValues& kv) {
        return jackknife_vstat_closed_permsum(kv, coeff_perturb);
      },
      [](const KernelValues& kv) { return jackknife_vstat_direct(kv); });
  for (std::size_t m = 1; m <= 4; ++m)
    run("split order " + std::to_string(m), m, true,
        [&](const KernelValues& kv) { return split_vstat_closed(kv, coeff_perturb); },
        [](const KernelValues& kv) { return split_vstat_direct(kv); });
  return rep;
}

}  // namespace biascorr
