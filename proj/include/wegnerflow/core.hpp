#pragma once

#include <charconv>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace wegnerflow {

using Complex = std::complex<double>;

/// Locale-free 17-significant-digit rendering; round-trips any double.
inline std::string format_double(double x) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general);
    return std::string(buf, res.ptr);
}

/// Coefficient triple (omega, lambda, v) of the quadratic boson Hamiltonian
///   H = omega * a^dag a + lambda * (a^dag^2 + a^2) + v.
/// Also doubles as the derivative triple returned by the flow right-hand side,
/// so it carries the vector-space operations the integrator needs.
struct QuadraticCoefficients {
    Complex omega{};
    Complex lambda{};
    Complex v{};

    friend QuadraticCoefficients operator+(const QuadraticCoefficients& a,
                                           const QuadraticCoefficients& b) {
        return {a.omega + b.omega, a.lambda + b.lambda, a.v + b.v};
    }
    friend QuadraticCoefficients operator*(double s, const QuadraticCoefficients& a) {
        return {s * a.omega, s * a.lambda, s * a.v};
    }
    friend QuadraticCoefficients operator*(const QuadraticCoefficients& a, double s) {
        return s * a;
    }
    friend bool operator==(const QuadraticCoefficients&, const QuadraticCoefficients&) = default;
};

inline bool is_physical(const QuadraticCoefficients& c) {
    return c.omega.imag() == 0.0 && c.lambda.imag() == 0.0 && c.v.imag() == 0.0;
}

inline bool is_finite(const QuadraticCoefficients& c) {
    auto ok = [](Complex z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); };
    return ok(c.omega) && ok(c.lambda) && ok(c.v);
}

/// Flow invariant omega^2 - (2 lambda)^2; conserved exactly by the flow.
inline Complex flow_invariant(const QuadraticCoefficients& c) {
    return c.omega * c.omega - 4.0 * c.lambda * c.lambda;
}

enum class Regime { Bounded, Unbounded, Critical, Free, Degenerate };

enum class BranchLabel { Plus, Minus, Zero };

enum class Stability { Attractor, Unstable, Degenerate };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Bounded: return "Bounded";
        case Regime::Unbounded: return "Unbounded";
        case Regime::Critical: return "Critical";
        case Regime::Free: return "Free";
        case Regime::Degenerate: return "Degenerate";
    }
    return "?";
}

inline const char* branch_name(BranchLabel b) {
    switch (b) {
        case BranchLabel::Plus: return "+";
        case BranchLabel::Minus: return "-";
        case BranchLabel::Zero: return "0";
    }
    return "?";
}

inline const char* stability_name(Stability s) {
    switch (s) {
        case Stability::Attractor: return "Attractor";
        case Stability::Unstable: return "Unstable";
        case Stability::Degenerate: return "Degenerate";
    }
    return "?";
}

/// Sorts a real initial condition into its flow class by comparing |2 lambda0|
/// against |omega0|. The Critical band is relative, so the call is invariant
/// under rescaling (omega0, lambda0) -> (s*omega0, s*lambda0).
inline Regime classify_regime(const QuadraticCoefficients& c0, double critical_band = 1e-12) {
    if (!is_finite(c0)) throw std::invalid_argument("regime classification requires finite coefficients");
    if (!is_physical(c0)) throw std::invalid_argument("regime classification requires physical coefficients");
    const double a = std::abs(2.0 * c0.lambda.real());
    const double b = std::abs(c0.omega.real());
    const double top = std::max(a, b);
    if (top == 0.0) return Regime::Degenerate;
    if (a == 0.0) return Regime::Free;
    if (std::abs(a - b) <= critical_band * top) return Regime::Critical;
    return a < b ? Regime::Bounded : Regime::Unbounded;
}

/// Stationary point of the flow together with its linearization class.
struct FixedPoint {
    QuadraticCoefficients coefficients;
    Stability stability = Stability::Degenerate;
    BranchLabel branch = BranchLabel::Zero;

    friend bool operator==(const FixedPoint&, const FixedPoint&) = default;
};

enum class SpectrumKind { Real, Complex };

struct RealGenerators {
    double Omega = 0.0;  // level spacing, carries sign(omega0)
    double kappa = 0.0;  // vacuum shift (Omega - omega0) / 2
    double v0 = 0.0;
    friend bool operator==(const RealGenerators&, const RealGenerators&) = default;
};

struct ComplexGenerators {
    double gamma = 0.0;  // positive decay/growth rate
    double v_inf = 0.0;  // terminal offset v0 - omega0 / 2
    friend bool operator==(const ComplexGenerators&, const ComplexGenerators&) = default;
};

/// Eigenvalue ladder E_0..E_n_max plus the generators that produced it.
struct Spectrum {
    BranchLabel branch = BranchLabel::Zero;
    SpectrumKind kind = SpectrumKind::Real;
    std::variant<RealGenerators, ComplexGenerators> generators;
    std::vector<Complex> levels;

    friend bool operator==(const Spectrum&, const Spectrum&) = default;
};

}  // namespace wegnerflow
