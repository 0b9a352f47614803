#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/corrections.hpp"
#include "biascorr/data.hpp"
#include "biascorr/estimate.hpp"
#include "biascorr/gauss.hpp"
#include "biascorr/models.hpp"
#include "biascorr/rng.hpp"

namespace biascorr {

struct ExcessFailures : Error {
  using Error::Error;
};

// Runs body(i) for i in [0, count) on `workers` threads. Work is handed out
// through an atomic counter but every result must be written to a slot keyed
// by i, so output never depends on the schedule. body must not throw for
// per-item failures (record them); a thrown exception aborts the whole loop.
inline void parallel_for(std::size_t count, unsigned workers,
                         const std::function<void(std::size_t)>& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const std::size_t chunk = std::max<std::size_t>(1, count / (workers * 128));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= count) return;
      const std::size_t end = std::min(begin + chunk, count);
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Data-generating processes.

enum class DgpKind {
  sqrt_normal,
  neyman_scott,
  panel_probit_serial,
  panel_probit_iid,
  ar1,
};

inline DgpKind dgp_from_name(const std::string& name) {
  if (name == "sqrt-normal") return DgpKind::sqrt_normal;
  if (name == "neyman-scott") return DgpKind::neyman_scott;
  if (name == "panel-probit-serial") return DgpKind::panel_probit_serial;
  if (name == "panel-probit-iid") return DgpKind::panel_probit_iid;
  if (name == "ar1") return DgpKind::ar1;
  throw ConfigError("unknown dgp '" + name + "'");
}

inline std::string dgp_name(DgpKind k) {
  switch (k) {
    case DgpKind::sqrt_normal: return "sqrt-normal";
    case DgpKind::neyman_scott: return "neyman-scott";
    case DgpKind::panel_probit_serial: return "panel-probit-serial";
    case DgpKind::panel_probit_iid: return "panel-probit-iid";
    case DgpKind::ar1: return "ar1";
  }
  return "?";
}

struct DgpSpec {
  DgpKind kind = DgpKind::sqrt_normal;
  double theta = 1.0;
  double sigma = 1.0;  // AR(1) innovation sd
  std::size_t n = 100;
  std::size_t T = 8;   // unused for cross-section kinds
};

// Serially dependent regressor path x_t = t/10 + x_{t-1}/2 + u_t, x_0 = u_0,
// from given shocks u_0..u_T; returns x_1..x_T. Factored out so the recursion
// can be checked with pinned shocks.
inline std::vector<double> serial_x_path(std::span<const double> u) {
  if (u.empty()) return {};
  std::vector<double> x(u.size() - 1);
  double prev = u[0];
  for (std::size_t t = 1; t < u.size(); ++t) {
    prev = static_cast<double>(t) / 10.0 + 0.5 * prev + u[t];
    x[t - 1] = prev;
  }
  return x;
}

inline std::vector<double> gen_sqrt_normal(double theta, std::size_t n, Rng& rng) {
  const double root = std::sqrt(theta);
  std::vector<double> z(n);
  for (auto& v : z) v = root + rng.normal();
  return z;
}

inline Panel<double> gen_neyman_scott(double theta, std::size_t n, std::size_t T,
                                      Rng& rng) {
  Panel<double> p;
  p.n = n;
  p.T = T;
  p.cells.resize(n * T);
  const double sd = std::sqrt(theta);
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = rng.normal();
    for (std::size_t t = 0; t < T; ++t) p.cell(i, t) = alpha + sd * rng.normal();
  }
  return p;
}

inline Panel<YX> gen_panel_probit(double theta, std::size_t n, std::size_t T,
                                  bool serial_x, Rng& rng) {
  Panel<YX> p;
  p.n = n;
  p.T = T;
  p.cells.resize(n * T);
  std::vector<double> u(T + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = rng.normal();
    std::vector<double> x;
    if (serial_x) {
      for (auto& v : u) v = rng.uniform(-0.5, 0.5);
      x = serial_x_path(u);
    } else {
      x.resize(T);
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double latent = theta * x[t] + alpha + rng.normal();
      p.cell(i, t) = {latent > 0.0 ? 1.0 : 0.0, x[t]};
    }
  }
  return p;
}

// Stationary start: y_0 ~ N(0, sigma^2/(1-theta^2)); series has T transitions.
inline std::vector<double> gen_ar1(double theta, double sigma, std::size_t T,
                                   Rng& rng) {
  std::vector<double> y(T + 1);
  y[0] = rng.normal(0.0, sigma / std::sqrt(1.0 - theta * theta));
  for (std::size_t t = 1; t <= T; ++t)
    y[t] = theta * y[t - 1] + sigma * rng.normal();
  return y;
}

using GeneratedData =
    std::variant<std::vector<double>, Panel<double>, Panel<YX>>;

// Deterministic in (spec, replicate_seed). AR(1) output is the raw series in
// the first variant alternative.
inline GeneratedData generate(const DgpSpec& spec, std::uint64_t replicate_seed) {
  Rng rng(replicate_seed);
  switch (spec.kind) {
    case DgpKind::sqrt_normal:
      return gen_sqrt_normal(spec.theta, spec.n, rng);
    case DgpKind::neyman_scott:
      return gen_neyman_scott(spec.theta, spec.n, spec.T, rng);
    case DgpKind::panel_probit_serial:
      return gen_panel_probit(spec.theta, spec.n, spec.T, true, rng);
    case DgpKind::panel_probit_iid:
      return gen_panel_probit(spec.theta, spec.n, spec.T, false, rng);
    case DgpKind::ar1:
      return gen_ar1(spec.theta, spec.sigma, spec.T, rng);
  }
  throw ConfigError("unknown dgp kind");
}

// ---------------------------------------------------------------------------
// Estimators by name.

enum class EstimatorKind {
  mle,
  jackknife,
  split,
  bootstrap,
  analytic_sample,
  analytic_infoeq,
  analytic_integral,
  ar1_analytic,
};

inline EstimatorKind estimator_from_name(const std::string& name) {
  if (name == "mle") return EstimatorKind::mle;
  if (name == "jackknife") return EstimatorKind::jackknife;
  if (name == "split") return EstimatorKind::split;
  if (name == "bootstrap") return EstimatorKind::bootstrap;
  if (name == "analytic-sample") return EstimatorKind::analytic_sample;
  if (name == "analytic-infoeq") return EstimatorKind::analytic_infoeq;
  if (name == "analytic-integral") return EstimatorKind::analytic_integral;
  if (name == "ar1-analytic") return EstimatorKind::ar1_analytic;
  throw ConfigError("unknown estimator '" + name + "'");
}

inline std::string estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::mle: return "mle";
    case EstimatorKind::jackknife: return "jackknife";
    case EstimatorKind::split: return "split";
    case EstimatorKind::bootstrap: return "bootstrap";
    case EstimatorKind::analytic_sample: return "analytic-sample";
    case EstimatorKind::analytic_infoeq: return "analytic-infoeq";
    case EstimatorKind::analytic_integral: return "analytic-integral";
    case EstimatorKind::ar1_analytic: return "ar1-analytic";
  }
  return "?";
}

struct SimulationConfig {
  DgpSpec dgp;
  std::vector<EstimatorKind> estimators{EstimatorKind::mle};
  std::size_t replications = 1000;
  std::uint64_t master_seed = 1;
  std::size_t bootstrap_B = 1000;
  std::vector<double> test_levels{0.10, 0.05};
  double null_value = std::numeric_limits<double>::quiet_NaN();  // defaults to dgp.theta
  unsigned workers = 0;  // 0 = hardware concurrency
  SolverOpts solver;
};

struct EstimatorSummary {
  std::string name;
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double se_sd_ratio = 0.0;
  double mse = 0.0;
  std::vector<double> rejection;  // one per test level
  std::size_t failures = 0;
};

struct SimulationSummary {
  std::vector<double> levels;
  std::size_t replications = 0;
  double theta0 = 0.0;
  double null_value = 0.0;
  std::vector<EstimatorSummary> rows;
};

namespace mcdetail {

inline void check_estimators(const SimulationConfig& cfg) {
  const bool panel = cfg.dgp.kind == DgpKind::neyman_scott ||
                     cfg.dgp.kind == DgpKind::panel_probit_serial ||
                     cfg.dgp.kind == DgpKind::panel_probit_iid;
  for (EstimatorKind e : cfg.estimators) {
    bool ok = false;
    switch (cfg.dgp.kind) {
      case DgpKind::sqrt_normal:
        ok = e != EstimatorKind::ar1_analytic;
        break;
      case DgpKind::neyman_scott:
      case DgpKind::panel_probit_serial:
      case DgpKind::panel_probit_iid:
        ok = e == EstimatorKind::mle || e == EstimatorKind::jackknife ||
             e == EstimatorKind::split;
        break;
      case DgpKind::ar1:
        ok = e == EstimatorKind::mle || e == EstimatorKind::ar1_analytic;
        break;
    }
    if (!ok)
      throw ConfigError("estimator '" + estimator_name(e) +
                        "' is not available for dgp '" + dgp_name(cfg.dgp.kind) +
                        "'" + (panel ? " (panel)" : ""));
  }
}

// One replicate of a cross-section experiment.
template <ScalarModelType M>
void scalar_replicate(const SimulationConfig& cfg, const M& model,
                      std::span<const typename M::Obs> data, std::uint64_t rep_seed,
                      std::span<double> thetas, double& se) {
  const double init = M::moment_init(data);
  const Estimate full = fit_mle<M>(data, model, init, cfg.solver);
  se = full.se;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    try {
      switch (cfg.estimators[e]) {
        case EstimatorKind::mle:
          thetas[e] = full.theta_hat;
          break;
        case EstimatorKind::jackknife:
          thetas[e] =
              apply_correction(full, jackknife_bias(data, model, full, cfg.solver))
                  .theta_hat;
          break;
        case EstimatorKind::split:
          thetas[e] = apply_correction(
                          full, split_sample_bias(data, model, full, cfg.solver))
                          .theta_hat;
          break;
        case EstimatorKind::bootstrap:
          thetas[e] =
              apply_correction(full, bootstrap_bias(data, model, full, cfg.bootstrap_B,
                                                    substream_seed(rep_seed, 0xB00),
                                                    cfg.solver))
                  .theta_hat;
          break;
        case EstimatorKind::analytic_sample:
          thetas[e] =
              apply_correction(full, analytic_bias_sample(data, model, full))
                  .theta_hat;
          break;
        case EstimatorKind::analytic_infoeq:
          thetas[e] =
              apply_correction(full, analytic_bias_infoeq(data, model, full))
                  .theta_hat;
          break;
        case EstimatorKind::analytic_integral:
          thetas[e] = apply_correction(
                          full, analytic_bias_integral(model, full.theta_hat,
                                                       static_cast<double>(data.size())))
                          .theta_hat;
          break;
        default:
          break;
      }
    } catch (const Error&) {
      thetas[e] = std::numeric_limits<double>::quiet_NaN();
    }
  }
}

template <PanelModelType PM>
void panel_replicate(const SimulationConfig& cfg, const PM& model,
                     const Panel<typename PM::Obs>& panel,
                     std::span<double> thetas, double& se) {
  const double init = PM::moment_init(panel);
  const PanelEstimate full = fit_panel_mle<PM>(panel, model, init, cfg.solver);
  se = full.se;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    try {
      switch (cfg.estimators[e]) {
        case EstimatorKind::mle:
          thetas[e] = full.theta_hat;
          break;
        case EstimatorKind::jackknife:
          thetas[e] = apply_correction(
                          full, panel_jackknife_bias(panel, model, full, cfg.solver))
                          .theta_hat;
          break;
        case EstimatorKind::split:
          thetas[e] =
              apply_correction(full,
                               panel_split_sample_bias(panel, model, full, cfg.solver))
                  .theta_hat;
          break;
        default:
          break;
      }
    } catch (const Error&) {
      thetas[e] = std::numeric_limits<double>::quiet_NaN();
    }
  }
}

inline void ar1_replicate(const SimulationConfig& cfg,
                          std::span<const double> series, std::span<double> thetas,
                          double& se) {
  const Estimate full = fit_ar1(series, cfg.solver);
  se = full.se;
  const std::size_t T = series.size() - 1;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    switch (cfg.estimators[e]) {
      case EstimatorKind::mle:
        thetas[e] = full.theta_hat;
        break;
      case EstimatorKind::ar1_analytic:
        thetas[e] = ar1_analytic_correct(full, T).theta_hat;
        break;
      default:
        break;
    }
  }
}

}  // namespace mcdetail

inline SimulationSummary run_experiment(const SimulationConfig& cfg) {
  if (cfg.replications < 1) throw ConfigError("replications must be >= 1");
  if (cfg.estimators.empty()) throw ConfigError("no estimators requested");
  mcdetail::check_estimators(cfg);

  const std::size_t R = cfg.replications;
  const std::size_t E = cfg.estimators.size();
  const double null_value =
      std::isnan(cfg.null_value) ? cfg.dgp.theta : cfg.null_value;

  std::vector<double> thetas(R * E, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> ses(R, std::numeric_limits<double>::quiet_NaN());

  parallel_for(R, cfg.workers, [&](std::size_t r) {
    const std::uint64_t rep_seed = substream_seed(cfg.master_seed, r);
    GeneratedData data = generate(cfg.dgp, rep_seed);
    std::span<double> row(thetas.data() + r * E, E);
    try {
      switch (cfg.dgp.kind) {
        case DgpKind::sqrt_normal:
          mcdetail::scalar_replicate(cfg, SqrtMeanNormal{},
                                     std::span<const double>(std::get<0>(data)),
                                     rep_seed, row, ses[r]);
          break;
        case DgpKind::neyman_scott:
          mcdetail::panel_replicate(cfg, NeymanScott{}, std::get<1>(data), row,
                                    ses[r]);
          break;
        case DgpKind::panel_probit_serial:
        case DgpKind::panel_probit_iid:
          mcdetail::panel_replicate(cfg, PanelProbit{}, std::get<2>(data), row,
                                    ses[r]);
          break;
        case DgpKind::ar1:
          mcdetail::ar1_replicate(cfg, std::get<0>(data), row, ses[r]);
          break;
      }
    } catch (const Error&) {
      for (auto& t : row) t = std::numeric_limits<double>::quiet_NaN();
      ses[r] = std::numeric_limits<double>::quiet_NaN();
    }
  });

  SimulationSummary out;
  out.levels = cfg.test_levels;
  out.replications = R;
  out.theta0 = cfg.dgp.theta;
  out.null_value = null_value;

  std::vector<double> crit(out.levels.size());
  for (std::size_t l = 0; l < out.levels.size(); ++l)
    crit[l] = norm_quantile(1.0 - 0.5 * out.levels[l]);

  for (std::size_t e = 0; e < E; ++e) {
    EstimatorSummary row;
    row.name = estimator_name(cfg.estimators[e]);
    KahanSum sum, sum_se;
    std::vector<KahanSum> rej(out.levels.size());
    std::size_t good = 0;
    for (std::size_t r = 0; r < R; ++r) {
      const double th = thetas[r * E + e];
      if (std::isnan(th) || std::isnan(ses[r])) continue;
      ++good;
      sum.add(th);
      sum_se.add(ses[r]);
      const double wald = (th - null_value) / ses[r];
      for (std::size_t l = 0; l < out.levels.size(); ++l)
        rej[l].add(std::abs(wald) > crit[l] ? 1.0 : 0.0);
    }
    row.failures = R - good;
    if (row.failures * 50 > R)
      throw ExcessFailures("estimator " + row.name + ": " +
                           std::to_string(row.failures) + " of " +
                           std::to_string(R) + " replicates failed");
    const double g = static_cast<double>(good);
    const double mean = sum.value() / g;
    KahanSum ss, mse;
    for (std::size_t r = 0; r < R; ++r) {
      const double th = thetas[r * E + e];
      if (std::isnan(th) || std::isnan(ses[r])) continue;
      ss.add((th - mean) * (th - mean));
      mse.add((th - cfg.dgp.theta) * (th - cfg.dgp.theta));
    }
    row.bias = mean - cfg.dgp.theta;
    row.sd = good > 1 ? std::sqrt(ss.value() / (g - 1.0)) : 0.0;
    row.mean_se = sum_se.value() / g;
    row.se_sd_ratio = row.sd > 0.0 ? row.mean_se / row.sd : 0.0;
    row.mse = mse.value() / g;
    row.rejection.resize(out.levels.size());
    for (std::size_t l = 0; l < out.levels.size(); ++l)
      row.rejection[l] = rej[l].value() / g;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering. Markdown uses 3 decimals and the column order of the paper's
// tables; CSV carries full precision.

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string rej_column_name(double level) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "rej_%02d",
                static_cast<int>(std::lround(level * 100.0)));
  return buf;
}

inline std::string render_summary_markdown(const SimulationSummary& s) {
  std::ostringstream os;
  os << "| estimator | bias | se/sd | mse |";
  for (double l : s.levels)
    os << " " << static_cast<int>(std::lround(l * 100.0)) << "% |";
  os << "\n|---|---|---|---|";
  for (std::size_t l = 0; l < s.levels.size(); ++l) os << "---|";
  os << "\n";
  for (const auto& row : s.rows) {
    os << "| " << row.name << " | " << fmt3(row.bias) << " | "
       << fmt3(row.se_sd_ratio) << " | " << fmt3(row.mse) << " |";
    for (double r : row.rejection) os << " " << fmt3(r) << " |";
    os << "\n";
  }
  return os.str();
}

inline std::string render_summary_csv(const SimulationSummary& s) {
  std::ostringstream os;
  os << "estimator,bias,sd,mean_se,se_sd_ratio,mse";
  for (double l : s.levels) os << "," << rej_column_name(l);
  os << ",failures\n";
  for (const auto& row : s.rows) {
    os << row.name << "," << fmt_full(row.bias) << "," << fmt_full(row.sd) << ","
       << fmt_full(row.mean_se) << "," << fmt_full(row.se_sd_ratio) << ","
       << fmt_full(row.mse);
    for (double r : row.rejection) os << "," << fmt_full(r);
    os << "," << row.failures << "\n";
  }
  return os.str();
}

// Parses text produced by render_summary_csv (comment lines allowed).
inline SimulationSummary parse_summary_csv(const std::string& text) {
  SimulationSummary s;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = detail::split_csv_line(t);
    if (header.empty()) {
      header = fields;
      for (const auto& h : header)
        if (h.rfind("rej_", 0) == 0)
          s.levels.push_back(std::stoi(h.substr(4)) / 100.0);
      continue;
    }
    if (fields.size() != header.size())
      throw SchemaMismatch("summary row width does not match header");
    EstimatorSummary row;
    row.name = fields[0];
    row.bias = std::stod(fields[1]);
    row.sd = std::stod(fields[2]);
    row.mean_se = std::stod(fields[3]);
    row.se_sd_ratio = std::stod(fields[4]);
    row.mse = std::stod(fields[5]);
    for (std::size_t l = 0; l < s.levels.size(); ++l)
      row.rejection.push_back(std::stod(fields[6 + l]));
    row.failures = static_cast<std::size_t>(std::stoul(fields.back()));
    s.rows.push_back(std::move(row));
  }
  if (header.empty()) throw SchemaMismatch("empty summary csv");
  return s;
}

}  // namespace biascorr
