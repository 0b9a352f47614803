#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace biascorr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonConvergence : Error {
  using Error::Error;
};

// A Newton step left the parameter domain and step-halving could not re-enter.
struct DomainExit : Error {
  using Error::Error;
};

struct SubfitFailure : Error {
  std::size_t index;
  SubfitFailure(std::size_t i, const std::string& what)
      : Error("subfit " + std::to_string(i) + " failed: " + what), index(i) {}
};

struct SingularInformation : Error {
  using Error::Error;
};

struct MissingExpectations : Error {
  using Error::Error;
};

struct ScaleMismatch : Error {
  using Error::Error;
};

struct DegenerateUnit : Error {
  std::size_t unit;
  explicit DegenerateUnit(std::size_t i)
      : Error("unit " + std::to_string(i) + " has a degenerate individual-score second moment"),
        unit(i) {}
};

struct UnsupportedOrder : Error {
  using Error::Error;
};

struct OddLength : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct SchemaMismatch : Error {
  using Error::Error;
};

struct StayerUnits : Error {
  using Error::Error;
};

// Open interval for a scalar parameter domain.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double x) const { return x > lo && x < hi && std::isfinite(x); }
};

// Neumaier compensated summation. Used wherever an aggregate must not depend
// on how work was scheduled across threads (sums are always taken in index
// order, the compensation keeps them reproducible at ~1e-16).
class KahanSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double relative_gap(double a, double b) {
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

}  // namespace biascorr
