#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kqs {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr Complex kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

/// Raised when a linear system that must be inverted is numerically singular.
class SingularityError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a request exceeds the dense-representation limits of a module.
class CapacityError : public std::length_error {
public:
  using std::length_error::length_error;
};

/// Collects non-fatal numerical warnings (truncated transforms, short warmups).
struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

inline void warn_to(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->warn(std::move(message));
}

/// Inverse temperature with an explicit zero-temperature flag so that
/// Fermi and Bose factors never overflow.
class InverseTemperature {
public:
  static InverseTemperature infinite() { return InverseTemperature(0.0, true); }
  static InverseTemperature from_beta(double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (std::isinf(beta)) return infinite();
    return InverseTemperature(beta, false);
  }
  static InverseTemperature from_temperature(double temperature) {
    if (temperature < 0.0) throw std::invalid_argument("temperature must be nonnegative");
    if (temperature == 0.0) return infinite();
    return InverseTemperature(1.0 / temperature, false);
  }

  bool is_infinite() const { return infinite_; }
  double beta() const { return infinite_ ? std::numeric_limits<double>::infinity() : beta_; }
  double temperature() const { return infinite_ ? 0.0 : 1.0 / beta_; }

  /// Fermi function f(w).
  double fermi(double w) const {
    if (infinite_) return w < 0.0 ? 1.0 : (w > 0.0 ? 0.0 : 0.5);
    const double x = beta_ * w;
    if (x > 0.0) {
      const double e = std::exp(-x);
      return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
  }

  /// Fermion distribution F(w) = 1 - 2 f(w) = tanh(beta w / 2).
  double distribution(double w) const {
    if (infinite_) return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0);
    return std::tanh(0.5 * beta_ * w);
  }

private:
  InverseTemperature(double beta, bool infinite) : beta_(beta), infinite_(infinite) {}
  double beta_;
  bool infinite_;
};

inline double max_abs(const CMatrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace kqs
