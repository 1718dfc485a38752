#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "wegnerflow/core.hpp"
#include "wegnerflow/dopri5.hpp"

namespace wegnerflow {

/// Right-hand side of the double-bracket flow for the coefficient triple:
///   d omega / dl  = -16 omega lambda^2
///   d lambda / dl = -4 omega^2 lambda
///   d v / dl      = -8 omega lambda^2
/// Valid for complex coefficients; the real slice is the unitary flow.
inline QuadraticCoefficients flow_rhs(const QuadraticCoefficients& c) {
    const Complex wll = c.omega * c.lambda * c.lambda;
    return {-16.0 * wll, -4.0 * c.omega * c.omega * c.lambda, -8.0 * wll};
}

/// Coefficient g of the antihermitian generator g * (a^dag^2 - a^2).
inline Complex generator_coefficient(const QuadraticCoefficients& c) {
    return 2.0 * c.omega * c.lambda;
}

inline double coeff_norm(const QuadraticCoefficients& c) {
    return std::max({std::abs(c.omega), std::abs(c.lambda), std::abs(c.v)});
}

inline double coeff_distance(const QuadraticCoefficients& a, const QuadraticCoefficients& b) {
    return std::max({std::abs(a.omega - b.omega), std::abs(a.lambda - b.lambda), std::abs(a.v - b.v)});
}

/// Characteristic energy of an initial condition; the flow parameter scales
/// as 1 / energy^2, so integration runs in tau = l * energy^2.
inline double energy_scale(const QuadraticCoefficients& c) {
    return std::max(std::abs(c.omega), 2.0 * std::abs(c.lambda));
}

struct FlowSample {
    double l = 0.0;
    QuadraticCoefficients coefficients;
    double invariant_residual = 0.0;
    friend bool operator==(const FlowSample&, const FlowSample&) = default;
};

struct DivergenceReport {
    std::string reason;
    double l = 0.0;  // flow parameter at which the run gave up
    friend bool operator==(const DivergenceReport&, const DivergenceReport&) = default;
};

struct IntegratorConfig {
    double rtol = 1e-10;
    double atol = 1e-12;
    double l_max = 0.0;  // 0 selects the default horizon 50 / energy_scale^2
    double convergence_tol = 1e-10;
    // |z| beyond this is a runaway chart coordinate. Kept below ~10: past
    // that the chart velocity sinh(2z) outruns the smallest representable
    // step, so a larger guard could never fire before step-size underflow.
    double z_guard = 8.0;
    double coeff_guard = 1e12;  // |omega| or |lambda| beyond this is a blow-up
    std::uint64_t max_steps = 1'000'000;
    int samples_per_decade = 16;
    bool record_all_steps = false;

    void validate() const {
        if (!(rtol >= 2.3e-15)) throw std::invalid_argument("rtol must be at least ten machine epsilons");
        if (!(atol > 0.0) || !(convergence_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
        if (l_max < 0.0 || !std::isfinite(l_max)) throw std::invalid_argument("l_max must be finite and >= 0");
        if (!(z_guard > 0.0) || !(coeff_guard > 0.0)) throw std::invalid_argument("guards must be positive");
        if (max_steps == 0) throw std::invalid_argument("max_steps must be positive");
        if (samples_per_decade < 1) throw std::invalid_argument("samples_per_decade must be >= 1");
    }

    friend bool operator==(const IntegratorConfig&, const IntegratorConfig&) = default;
};

struct FlowTrajectory {
    std::vector<FlowSample> samples;
    Regime regime = Regime::Degenerate;
    BranchLabel branch = BranchLabel::Zero;
    std::variant<FixedPoint, DivergenceReport> terminal;
    IntegratorStats stats;
    double snap_distance = 0.0;  // coefficient-space distance absorbed by the terminal snap

    bool converged() const { return std::holds_alternative<FixedPoint>(terminal); }
    friend bool operator==(const FlowTrajectory&, const FlowTrajectory&) = default;
};

/// Predicts the l -> infinity endpoint from the conserved invariant alone.
/// Bounded flows keep sign(omega0), unbounded flows keep sign(lambda0).
inline FixedPoint predict_fixed_point(const QuadraticCoefficients& c0) {
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("fixed point prediction requires physical coefficients");
    const double w0 = c0.omega.real();
    const double l0 = c0.lambda.real();
    switch (classify_regime(c0)) {
        case Regime::Degenerate:
            throw std::domain_error("flow is identically zero");
        case Regime::Free:
            return {c0, Stability::Degenerate, BranchLabel::Zero};
        case Regime::Critical:
            return {{0.0, 0.0, c0.v - 0.5 * w0}, Stability::Degenerate, BranchLabel::Zero};
        case Regime::Bounded: {
            const double ws = std::copysign(std::sqrt(w0 * w0 - 4.0 * l0 * l0), w0);
            return {{ws, 0.0, c0.v + 0.5 * (ws - w0)}, Stability::Attractor, BranchLabel::Zero};
        }
        case Regime::Unbounded: {
            const double ls = std::copysign(std::sqrt(l0 * l0 - 0.25 * w0 * w0), l0);
            return {{0.0, ls, c0.v - 0.5 * w0}, Stability::Attractor, BranchLabel::Zero};
        }
    }
    throw std::logic_error("unreachable");
}

/// Linearization class of a stationary point of the flow (complex allowed):
/// on the lambda = 0 axis the transverse rate is -4 omega^2, on the omega = 0
/// axis it is -16 lambda^2; positive real part contracts.
inline Stability classify_stationary(const QuadraticCoefficients& c, double scale = 1.0) {
    const double tol = 1e-8 * std::max(1.0, scale);
    const double aw = std::abs(c.omega);
    const double al = std::abs(c.lambda);
    if (aw <= tol && al <= tol) return Stability::Degenerate;
    if (al <= tol) {
        const double s = (c.omega * c.omega).real();
        if (s > tol * tol) return Stability::Attractor;
        if (s < -tol * tol) return Stability::Unstable;
        return Stability::Degenerate;
    }
    if (aw <= tol) {
        const double s = (c.lambda * c.lambda).real();
        if (s > tol * tol) return Stability::Attractor;
        if (s < -tol * tol) return Stability::Unstable;
        return Stability::Degenerate;
    }
    throw std::domain_error("not a stationary point of the flow");
}

/// Point on an unbounded-class flow surface in the chart
///   omega = 2 lambda_inf sinh z,  lambda = lambda_inf cosh z,  z = xi + i phi,
/// with |phi| <= pi/2. lambda_inf is the attractor amplitude; it carries the
/// sign that keeps z on the principal strip (positive whenever lambda > 0).
struct HyperbolicState {
    Complex z{};
    double lambda_inf = 0.0;
    friend bool operator==(const HyperbolicState&, const HyperbolicState&) = default;
};

inline std::pair<Complex, Complex> chart_point(const HyperbolicState& s) {
    return {2.0 * s.lambda_inf * std::sinh(s.z), s.lambda_inf * std::cosh(s.z)};
}

/// Chart flow: dz/dl = -8 lambda_inf^2 sinh(2z). The prefactor is quadratic
/// in lambda_inf; z is dimensionless while l carries 1/energy^2, so only the
/// squared amplitude keeps the equation consistent with the coefficient flow
/// (the chain-rule tests pin this).
inline Complex z_rhs(const HyperbolicState& s) {
    return -8.0 * s.lambda_inf * s.lambda_inf * std::sinh(2.0 * s.z);
}

/// Inverts the chart. Requires omega^2 - 4 lambda^2 to be a negative real
/// (an unbounded-class surface); the stationary lambda = 0 points map to
/// z = +-i pi/2 with positive lambda_inf.
inline HyperbolicState to_hyperbolic(const QuadraticCoefficients& c) {
    if (!is_finite(c)) throw std::invalid_argument("chart inversion requires finite coefficients");
    const Complex I = flow_invariant(c);
    const double scale = std::max(1.0, std::abs(I));
    if (!(I.real() < 0.0) || std::abs(I.imag()) > 1e-12 * scale)
        throw std::domain_error("not on a generalized-flow surface");
    double lam = 0.5 * std::sqrt(-I.real());
    Complex s = c.omega / (2.0 * lam);
    Complex ch = c.lambda / lam;
    Complex z = std::log(ch + s);  // cosh z + sinh z = e^z, principal branch
    constexpr double half_pi = std::numbers::pi / 2.0;
    if (std::abs(z.imag()) > half_pi + 1e-12) {
        lam = -lam;
        z = std::log(-(ch + s));
    }
    return {z, lam};
}

inline QuadraticCoefficients from_hyperbolic(const HyperbolicState& s, Complex v) {
    auto [omega, lambda] = chart_point(s);
    return {omega, lambda, v};
}

/// Exact ratio law r(l) = omega(l) / (2 lambda(l)) = r(0) * exp(4 I l) with
/// I = omega0^2 - 4 lambda0^2. Both regime readings collapse into this one
/// exponential: bounded flows have I = Omega^2 > 0 (so 2 lambda / omega decays
/// at rate 4 Omega^2) and unbounded flows have I = -4 lambda_inf^2 < 0 (so the
/// tanh ratio decays at rate 16 lambda_inf^2). lambda(l) vanishes only at
/// l = +infinity, so the ratio stays finite for every finite l; the pole sits
/// at lambda0 = 0, which is rejected.
inline Complex closed_form_ratio(const QuadraticCoefficients& c0, double l) {
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("ratio law requires physical coefficients");
    const Regime regime = classify_regime(c0);
    if (regime == Regime::Degenerate) throw std::domain_error("flow is identically zero");
    if (c0.lambda == Complex{0.0})
        throw std::domain_error("ratio has a pole on the free flow (lambda0 = 0)");
    const double I = flow_invariant(c0).real();
    const Complex r0 = c0.omega / (2.0 * c0.lambda);
    return r0 * std::exp(4.0 * I * l);
}

enum class FlowDirection { Forward, Backward };

/// (v0, omega0) pair that slaves the offset along a trajectory through
/// v(l) = v0 + (omega(l) - omega0) / 2.
struct OffsetAnchor {
    Complex v0{};
    Complex omega0{};

    Complex offset_at(Complex omega) const { return v0 + 0.5 * (omega - omega0); }
    friend bool operator==(const OffsetAnchor&, const OffsetAnchor&) = default;
};

namespace detail {

inline double invariant_residual(const QuadraticCoefficients& c, Complex I0) {
    return std::abs(flow_invariant(c) - I0) / std::max(1.0, std::abs(I0));
}

// Log-spaced l targets over (0, l_span], dense early and sparse late. The
// final entry is exactly l_span.
inline std::vector<double> log_sample_grid(double l_span, int per_decade) {
    constexpr int decades = 6;
    const int n = decades * per_decade;
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        grid.push_back(l_span * std::pow(10.0, -decades + static_cast<double>(decades) * k / n));
    }
    grid.back() = l_span;
    return grid;
}

struct Recorder {
    std::vector<FlowSample>& samples;
    Complex I0;
    double direction_sign;  // +1 forward, -1 backward (applied to reported l)
    bool record_all;

    void initial(const QuadraticCoefficients& c) {
        samples.push_back({0.0, c, invariant_residual(c, I0)});
    }
    void accepted(double l_abs, const QuadraticCoefficients& c, StepFlag flag) {
        if (flag == StepFlag::Interior && !record_all) return;
        push(l_abs, c);
    }
    void final(double l_abs, const QuadraticCoefficients& c) { push(l_abs, c); }

  private:
    void push(double l_abs, const QuadraticCoefficients& c) {
        const double l = direction_sign * l_abs;
        if (!samples.empty() && samples.back().l == l) return;
        samples.push_back({l, c, invariant_residual(c, I0)});
    }
};

inline double scaled_error_norm(const QuadraticCoefficients& e, const QuadraticCoefficients& y0,
                                const QuadraticCoefficients& y1, double rtol, double atol) {
    auto term = [&](Complex ev, Complex a, Complex b) {
        const double sc = atol + rtol * std::max(std::abs(a), std::abs(b));
        const double q = std::abs(ev) / sc;
        return q * q;
    };
    return std::sqrt((term(e.omega, y0.omega, y1.omega) + term(e.lambda, y0.lambda, y1.lambda) +
                      term(e.v, y0.v, y1.v)) /
                     3.0);
}

inline double scaled_error_norm(Complex e, Complex y0, Complex y1, double rtol, double atol) {
    const double sc = atol + rtol * std::max(std::abs(y0), std::abs(y1));
    return std::abs(e) / sc;
}

}  // namespace detail

/// Integrates the unitary (real-slice) flow from a physical initial condition
/// until the right-hand side drops below convergence_tol * energy^3, the
/// horizon l_max is reached, or a guard trips. Internally runs in the
/// rescaled parameter tau = l * energy^2. The terminal point snaps to the
/// analytic fixed point when within 10 * convergence_tol of it (distance
/// reported in snap_distance); samples are never snapped.
inline FlowTrajectory integrate_unitary(const QuadraticCoefficients& c0,
                                        const IntegratorConfig& cfg = {}) {
    cfg.validate();
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("unitary flow requires a physical initial condition");

    FlowTrajectory traj;
    traj.regime = classify_regime(c0);
    traj.branch = BranchLabel::Zero;

    double E = energy_scale(c0);
    if (E == 0.0) E = 1.0;  // degenerate point: flow is stationary, any scale works
    const double Enorm = std::max(1.0, E);
    const double l_span = cfg.l_max > 0.0 ? cfg.l_max : 50.0 / (E * E);
    const double tau_end = l_span * E * E;
    const double inv_E2 = 1.0 / (E * E);
    const double rhs_floor = cfg.convergence_tol * E * E * E;

    auto grid = detail::log_sample_grid(l_span, cfg.samples_per_decade);
    for (double& g : grid) g *= E * E;
    grid.back() = tau_end;

    detail::Recorder rec{traj.samples, flow_invariant(c0), +1.0, cfg.record_all_steps};
    rec.initial(c0);

    bool converged = coeff_norm(flow_rhs(c0)) < rhs_floor;
    std::string guard_reason;

    auto result = dopri5_integrate(
        [&](const QuadraticCoefficients& y) { return inv_E2 * flow_rhs(y); },
        [&](const QuadraticCoefficients& e, const QuadraticCoefficients& a,
            const QuadraticCoefficients& b) {
            return detail::scaled_error_norm(e, a, b, cfg.rtol, cfg.atol);
        },
        c0, tau_end, grid,
        [&](double tau, const QuadraticCoefficients& y, StepFlag flag) {
            rec.accepted(tau * inv_E2, y, flag);
            if (std::abs(y.omega) > cfg.coeff_guard || std::abs(y.lambda) > cfg.coeff_guard) {
                guard_reason = "divergence guard tripped";
                return Control::Stop;
            }
            if (coeff_norm(flow_rhs(y)) < rhs_floor) {
                converged = true;
                return Control::Stop;
            }
            return Control::Continue;
        },
        StepperOptions{cfg.rtol, cfg.atol, cfg.max_steps});

    traj.stats = result.stats;
    rec.final(result.t * inv_E2, result.y);

    if (converged) {
        FixedPoint fp{result.y, Stability::Degenerate, BranchLabel::Zero};
        if (traj.regime == Regime::Degenerate) {
            fp.stability = Stability::Degenerate;
        } else {
            const FixedPoint pred = predict_fixed_point(c0);
            const double dist = coeff_distance(result.y, pred.coefficients);
            if (dist / Enorm < 10.0 * cfg.convergence_tol) {
                fp = pred;
                traj.snap_distance = dist;
            } else {
                fp.stability = classify_stationary(result.y, E);
            }
        }
        traj.terminal = fp;
    } else if (!guard_reason.empty()) {
        traj.terminal = DivergenceReport{guard_reason, traj.samples.back().l};
    } else {
        traj.terminal = DivergenceReport{traj.regime == Regime::Critical
                                             ? "algebraic convergence at separatrix"
                                             : "flow horizon reached before convergence",
                                         traj.samples.back().l};
    }
    return traj;
}

/// Integrates the generalized (complex) flow in the hyperbolic chart from s0.
/// Backward integration is forward integration of the negated right-hand
/// side. Forward runs end on the attractor z = 0; backward runs end on an
/// unstable point z = +-i pi/2 or trip the guard (real-axis escape). The
/// offset is slaved to omega through the anchor.
inline FlowTrajectory integrate_generalized(const HyperbolicState& s0, const OffsetAnchor& anchor,
                                            FlowDirection direction,
                                            const IntegratorConfig& cfg = {}) {
    cfg.validate();
    if (s0.lambda_inf == 0.0 || !std::isfinite(s0.lambda_inf))
        throw std::invalid_argument("chart requires a nonzero attractor amplitude");
    constexpr double half_pi = std::numbers::pi / 2.0;
    if (!(std::abs(s0.z.imag()) <= half_pi + 1e-12))
        throw std::invalid_argument("chart seed must lie on the principal strip");

    const double lam = s0.lambda_inf;
    auto coeffs_at = [&](Complex z) {
        const Complex omega = 2.0 * lam * std::sinh(z);
        return QuadraticCoefficients{omega, lam * std::cosh(z), anchor.offset_at(omega)};
    };
    const QuadraticCoefficients c_start = coeffs_at(s0.z);

    FlowTrajectory traj;
    traj.regime = Regime::Unbounded;
    {
        const double im0 = lam * std::sin(s0.z.imag());
        traj.branch = im0 > 0.0 ? BranchLabel::Plus : (im0 < 0.0 ? BranchLabel::Minus : BranchLabel::Zero);
    }

    const double E = std::max(energy_scale(c_start), 2.0 * std::abs(lam));
    const double Enorm = std::max(1.0, E);
    const double l_span = cfg.l_max > 0.0 ? cfg.l_max : 50.0 / (E * E);
    const double tau_end = l_span * E * E;
    const double inv_E2 = 1.0 / (E * E);
    const double rhs_floor = cfg.convergence_tol * E * E * E;
    const double dir = direction == FlowDirection::Forward ? +1.0 : -1.0;

    auto grid = detail::log_sample_grid(l_span, cfg.samples_per_decade);
    for (double& g : grid) g *= E * E;
    grid.back() = tau_end;

    detail::Recorder rec{traj.samples, flow_invariant(c_start), dir, cfg.record_all_steps};
    rec.initial(c_start);

    bool converged = coeff_norm(flow_rhs(c_start)) < rhs_floor;
    std::string guard_reason;

    auto result = dopri5_integrate(
        [&](Complex z) { return dir * inv_E2 * (-8.0 * lam * lam * std::sinh(2.0 * z)); },
        [&](Complex e, Complex a, Complex b) {
            return detail::scaled_error_norm(e, a, b, cfg.rtol, cfg.atol);
        },
        s0.z, tau_end, grid,
        [&](double tau, Complex z, StepFlag flag) {
            const QuadraticCoefficients c = coeffs_at(z);
            rec.accepted(tau * inv_E2, c, flag);
            if (std::abs(z) > cfg.z_guard || std::abs(c.omega) > cfg.coeff_guard ||
                std::abs(c.lambda) > cfg.coeff_guard) {
                guard_reason = "divergence guard tripped";
                return Control::Stop;
            }
            if (coeff_norm(flow_rhs(c)) < rhs_floor) {
                converged = true;
                return Control::Stop;
            }
            return Control::Continue;
        },
        StepperOptions{cfg.rtol, cfg.atol, cfg.max_steps});

    traj.stats = result.stats;
    const QuadraticCoefficients c_final = coeffs_at(result.y);
    rec.final(result.t * inv_E2, c_final);

    if (converged) {
        // The chart has three stationary points: the attractor z = 0 and the
        // unstable pair z = +-i pi/2. Snap toward whichever the run actually
        // stopped near; a seed placed inside the convergence floor would
        // otherwise be mislabeled with the direction's expected target.
        Complex z_target{0.0, 0.0};
        Stability stab = Stability::Attractor;
        const Complex z_up{0.0, half_pi};
        const Complex z_dn{0.0, -half_pi};
        if (std::abs(result.y - z_up) < std::abs(result.y - z_target)) {
            z_target = z_up;
            stab = Stability::Unstable;
        }
        if (std::abs(result.y - z_dn) < std::abs(result.y - z_target)) {
            z_target = z_dn;
            stab = Stability::Unstable;
        }
        QuadraticCoefficients target;
        if (stab == Stability::Unstable) {
            // Analytic endpoint, not coeffs_at(z_target): cos(pi/2) rounds to
            // ~6e-17, which would leave dust in the exact lambda* = 0.
            const Complex ws{0.0, z_target.imag() > 0.0 ? 2.0 * lam : -2.0 * lam};
            target = {ws, 0.0, anchor.offset_at(ws)};
        } else {
            target = coeffs_at(z_target);
        }
        const double dist = coeff_distance(c_final, target);
        FixedPoint fp{c_final, stab, traj.branch};
        if (dist / Enorm < 10.0 * cfg.convergence_tol) {
            fp.coefficients = target;
            traj.snap_distance = dist;
        }
        traj.terminal = fp;
    } else if (!guard_reason.empty()) {
        traj.terminal = DivergenceReport{guard_reason, traj.samples.back().l};
    } else {
        traj.terminal =
            DivergenceReport{"flow horizon reached before convergence", traj.samples.back().l};
    }
    return traj;
}

struct UnstablePoints {
    FixedPoint plus;
    FixedPoint minus;
    FlowTrajectory plus_trajectory;
    FlowTrajectory minus_trajectory;
};

/// Locates the two stationary points with imaginary omega on an unbounded
/// flow surface: runs the unitary flow into the attractor (0, lambda_inf),
/// seeds the chart at z = epsilon e^{+-i alpha}, and integrates backward
/// until z converges onto +-i pi/2. Seeds with sin(alpha) > 0 reach the
/// upper point; branch labels follow sign(Im omega*). alpha = 0 or pi stays
/// on the real axis, where the backward flow runs away instead.
inline UnstablePoints find_unstable_points(const QuadraticCoefficients& c0, double epsilon = 1e-6,
                                           double alpha = std::numbers::pi / 2.0,
                                           const IntegratorConfig& cfg = {}) {
    cfg.validate();
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("unstable point search requires a physical initial condition");
    const Regime regime = classify_regime(c0);
    if (regime == Regime::Bounded || regime == Regime::Critical || regime == Regime::Free ||
        regime == Regime::Degenerate)
        throw std::domain_error("no unstable fixed points on this flow surface");
    if (!(epsilon > 0.0) || !(epsilon < 0.5))
        throw std::invalid_argument("seed radius must lie in (0, 0.5)");
    if (std::abs(std::sin(alpha)) < 1e-12)
        throw std::domain_error("real shift recovers H^(0), backward flow diverges");

    FlowTrajectory forward = integrate_unitary(c0, cfg);
    if (!forward.converged())
        throw std::runtime_error("unitary flow did not reach the attractor: " +
                                 std::get<DivergenceReport>(forward.terminal).reason);
    const FixedPoint& attractor = std::get<FixedPoint>(forward.terminal);
    const double lam = attractor.coefficients.lambda.real();
    const OffsetAnchor anchor{attractor.coefficients.v, attractor.coefficients.omega};

    const Complex seed = epsilon * std::exp(Complex{0.0, alpha});
    FlowTrajectory t1 =
        integrate_generalized({seed, lam}, anchor, FlowDirection::Backward, cfg);
    FlowTrajectory t2 =
        integrate_generalized({std::conj(seed), lam}, anchor, FlowDirection::Backward, cfg);

    auto point_of = [](const FlowTrajectory& t) -> FixedPoint {
        if (!t.converged())
            throw std::runtime_error("backward flow did not reach an unstable point: " +
                                     std::get<DivergenceReport>(t.terminal).reason);
        return std::get<FixedPoint>(t.terminal);
    };
    FixedPoint p1 = point_of(t1);
    FixedPoint p2 = point_of(t2);
    if (p1.stability != Stability::Unstable || p2.stability != Stability::Unstable)
        throw std::runtime_error("backward flow did not separate from the attractor (epsilon too small)");

    if (p1.coefficients.omega.imag() < p2.coefficients.omega.imag()) {
        std::swap(p1, p2);
        std::swap(t1, t2);
    }
    return {p1, p2, std::move(t1), std::move(t2)};
}

}  // namespace wegnerflow
