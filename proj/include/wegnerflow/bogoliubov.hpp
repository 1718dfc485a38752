#pragma once

#include <cmath>
#include <stdexcept>

#include "wegnerflow/core.hpp"

namespace wegnerflow {

/// Squeezing angle of the canonical rotation that removes the pair terms:
/// tanh(2 theta) = 2 lambda0 / omega0. Defined only for |2 lambda0| < |omega0|.
inline double solve_theta(double omega0, double lambda0) {
    if (!std::isfinite(omega0) || !std::isfinite(lambda0))
        throw std::invalid_argument("Bogoliubov angle requires finite coefficients");
    if (!(std::abs(2.0 * lambda0) < std::abs(omega0)))
        throw std::domain_error("Bogoliubov angle undefined outside bounded regime");
    return 0.5 * std::atanh(2.0 * lambda0 / omega0);
}

struct BogoliubovSolution {
    double theta = 0.0;
    double Omega = 0.0;  // = omega0 / cosh(2 theta), carries sign(omega0)
    double kappa = 0.0;  // = (Omega - omega0) / 2
    friend bool operator==(const BogoliubovSolution&, const BogoliubovSolution&) = default;
};

/// Closed-form diagonalization of the bounded Hamiltonian:
///   H = Omega b^dag b + kappa + v0 after the rotation by theta.
inline BogoliubovSolution bogoliubov_diagonal(const QuadraticCoefficients& c0) {
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("Bogoliubov diagonalization requires physical coefficients");
    const double w0 = c0.omega.real();
    const double theta = solve_theta(w0, c0.lambda.real());
    const double Omega = w0 / std::cosh(2.0 * theta);
    return {theta, Omega, 0.5 * (Omega - w0)};
}

/// Real ladder E_n = Omega n + kappa + v0 for n = 0..n_max.
inline Spectrum bounded_spectrum(const QuadraticCoefficients& c0, int n_max) {
    if (n_max < 0) throw std::invalid_argument("spectrum needs n_max >= 0");
    const BogoliubovSolution sol = bogoliubov_diagonal(c0);
    Spectrum spec;
    spec.branch = BranchLabel::Zero;
    spec.kind = SpectrumKind::Real;
    spec.generators = RealGenerators{sol.Omega, sol.kappa, c0.v.real()};
    spec.levels.reserve(static_cast<std::size_t>(n_max) + 1);
    const double base = sol.kappa + c0.v.real();
    for (int n = 0; n <= n_max; ++n) {
        spec.levels.emplace_back(sol.Omega * n + base, 0.0);
    }
    return spec;
}

/// Complex ladder E_n = +-i gamma (n + 1/2) + v_inf on an unbounded surface,
/// with gamma = +sqrt(4 lambda0^2 - omega0^2) and v_inf = v0 - omega0 / 2.
/// The Plus branch carries the upper-half-plane levels; Minus is its exact
/// elementwise conjugate.
inline Spectrum complex_spectrum(const QuadraticCoefficients& c0, BranchLabel branch, int n_max) {
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("complex spectrum requires physical coefficients");
    if (branch == BranchLabel::Zero)
        throw std::invalid_argument("complex spectrum needs branch Plus or Minus");
    if (n_max < 0) throw std::invalid_argument("spectrum needs n_max >= 0");
    const double w0 = c0.omega.real();
    const double l0 = c0.lambda.real();
    if (!(std::abs(2.0 * l0) > std::abs(w0)))
        throw std::domain_error("complex spectrum exists only on an unbounded flow surface");
    const double gamma = std::sqrt(4.0 * l0 * l0 - w0 * w0);
    const double v_inf = c0.v.real() - 0.5 * w0;
    const double sign = branch == BranchLabel::Plus ? 1.0 : -1.0;
    Spectrum spec;
    spec.branch = branch;
    spec.kind = SpectrumKind::Complex;
    spec.generators = ComplexGenerators{gamma, v_inf};
    spec.levels.reserve(static_cast<std::size_t>(n_max) + 1);
    for (int n = 0; n <= n_max; ++n) {
        spec.levels.emplace_back(v_inf, sign * gamma * (n + 0.5));
    }
    return spec;
}

}  // namespace wegnerflow
