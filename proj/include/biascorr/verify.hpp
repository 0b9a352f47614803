#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "biascorr/corrections.hpp"
#include "biascorr/estimate.hpp"
#include "biascorr/models.hpp"
#include "biascorr/montecarlo.hpp"
#include "biascorr/rng.hpp"
#include "biascorr/vstat.hpp"

namespace biascorr {

// Randomized algebraic checks of the correction identities:
//   jackknife corrected = n theta_hat - ((n-1)/n) sum of leave-one-out fits
//   split corrected     = 2 theta_hat - (first-half + second-half fits)/2
// and their by-period panel analogues, on simulated draws.
inline IdentityReport run_correction_identity_suite(int cases, std::uint64_t seed,
                                                    double tol = 1e-10) {
  IdentityReport rep;

  IdentityReport::Row jack{"jackknife correction identity", 0, 0, 0.0};
  IdentityReport::Row split{"split correction identity", 0, 0, 0.0};
  {
    Rng rng(substream_seed(seed, 1));
    SqrtMeanNormal model;
    for (int c = 0; c < cases; ++c) {
      const std::size_t n = 6 + rng.below(20);
      std::vector<double> z = gen_sqrt_normal(0.5 + rng.uniform(), n, rng);
      const Estimate full =
          fit_mle<SqrtMeanNormal>(z, model, SqrtMeanNormal::moment_init(z));
      {
        const BiasEstimate b = jackknife_bias<SqrtMeanNormal>(z, model, full);
        KahanSum loo;
        for (double th : b.replicate_values) loo.add(th);
        const double direct = static_cast<double>(n) * full.theta_hat -
                              (static_cast<double>(n) - 1.0) / static_cast<double>(n) *
                                  loo.value();
        const double err =
            relative_gap(apply_correction(full, b).theta_hat, direct);
        jack.max_rel_err = std::max(jack.max_rel_err, err);
        if (!(err <= tol)) ++jack.failures;
        ++jack.cases;
      }
      {
        const BiasEstimate b = split_sample_bias<SqrtMeanNormal>(z, model, full);
        const double direct =
            2.0 * full.theta_hat -
            0.5 * (b.replicate_values[0] + b.replicate_values[1]);
        const double err =
            relative_gap(apply_correction(full, b).theta_hat, direct);
        split.max_rel_err = std::max(split.max_rel_err, err);
        if (!(err <= tol)) ++split.failures;
        ++split.cases;
      }
    }
  }
  rep.rows.push_back(jack);
  rep.rows.push_back(split);

  IdentityReport::Row pjack{"panel jackknife correction identity", 0, 0, 0.0};
  IdentityReport::Row psplit{"panel split correction identity", 0, 0, 0.0};
  IdentityReport::Row closed{"neyman-scott closed-form fit", 0, 0, 0.0};
  {
    Rng rng(substream_seed(seed, 2));
    NeymanScott model;
    for (int c = 0; c < std::max(1, cases / 10); ++c) {
      const std::size_t n = 3 + rng.below(6);
      const std::size_t T = 4 + 2 * rng.below(4);
      const Panel<double> panel =
          gen_neyman_scott(0.5 + rng.uniform(), n, T, rng);
      const PanelEstimate full =
          fit_panel_mle<NeymanScott>(panel, model, NeymanScott::moment_init(panel));
      {
        // closed form: within-unit mean squared deviation
        const double direct = NeymanScott::moment_init(panel);
        const double err = relative_gap(full.theta_hat, direct);
        closed.max_rel_err = std::max(closed.max_rel_err, err);
        if (!(err <= tol)) ++closed.failures;
        ++closed.cases;
      }
      {
        const BiasEstimate b = panel_jackknife_bias<NeymanScott>(panel, model, full);
        KahanSum loo;
        for (double th : b.replicate_values) loo.add(th);
        const double direct = static_cast<double>(T) * full.theta_hat -
                              (static_cast<double>(T) - 1.0) / static_cast<double>(T) *
                                  loo.value();
        const double err =
            relative_gap(apply_correction(full, b).theta_hat, direct);
        pjack.max_rel_err = std::max(pjack.max_rel_err, err);
        if (!(err <= tol)) ++pjack.failures;
        ++pjack.cases;
      }
      {
        const BiasEstimate b =
            panel_split_sample_bias<NeymanScott>(panel, model, full);
        const double direct =
            2.0 * full.theta_hat -
            0.5 * (b.replicate_values[0] + b.replicate_values[1]);
        const double err =
            relative_gap(apply_correction(full, b).theta_hat, direct);
        psplit.max_rel_err = std::max(psplit.max_rel_err, err);
        if (!(err <= tol)) ++psplit.failures;
        ++psplit.cases;
      }
    }
  }
  rep.rows.push_back(pjack);
  rep.rows.push_back(psplit);
  rep.rows.push_back(closed);
  return rep;
}

}  // namespace biascorr
