#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>

namespace wegnerflow {

template <typename S>
concept OdeState = requires(const S& a, const S& b, double c) {
    { a + b } -> std::convertible_to<S>;
    { c * a } -> std::convertible_to<S>;
};

struct StepperOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    std::uint64_t max_steps = 1'000'000;
    double safety = 0.9;
    double shrink_limit = 0.2;  // step growth clamp, lower bound
    double grow_limit = 5.0;    // step growth clamp, upper bound
};

struct IntegratorStats {
    std::uint64_t accepted = 0;
    std::uint64_t rejected = 0;
    double final_step = 0.0;
    friend bool operator==(const IntegratorStats&, const IntegratorStats&) = default;
};

enum class StepFlag { Interior, Checkpoint };
enum class Control { Continue, Stop };

template <OdeState S>
struct OdeResult {
    S y;
    double t = 0.0;
    IntegratorStats stats;
    bool reached_end = false;  // false when the observer stopped the run
};

namespace detail {

// Dormand-Prince 5(4) tableau. Row 7 equals the 5th order weights (FSAL).
inline constexpr double dp_c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double dp_a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
inline constexpr double dp_b5[7] = {35.0 / 384,      0.0,         500.0 / 1113, 125.0 / 192,
                                    -2187.0 / 6784,  11.0 / 84,   0.0};
inline constexpr double dp_b4[7] = {5179.0 / 57600,  0.0,          7571.0 / 16695, 393.0 / 640,
                                    -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

}  // namespace detail

/// Integrates dy/dt = rhs(y) from t = 0 to t_end with the embedded
/// Dormand-Prince 5(4) pair. `checkpoints` is an ascending list of t values
/// in (0, t_end] the stepper lands on exactly (step clamped, adaptive size
/// restored afterwards). `err_norm(err, y_old, y_new)` returns the scaled
/// error; a step is accepted when it is <= 1. `observe(t, y, flag)` runs on
/// every accepted step, may adjust y in place (e.g. re-symmetrization), and
/// may stop the integration; the stepper re-evaluates the derivative after
/// it, so adjustments are picked up.
template <OdeState S, typename Rhs, typename ErrNorm, typename Observer>
OdeResult<S> dopri5_integrate(Rhs&& rhs, ErrNorm&& err_norm, S y0, double t_end,
                              std::span<const double> checkpoints, Observer&& observe,
                              const StepperOptions& opt) {
    using namespace detail;
    if (!(t_end > 0.0)) throw std::invalid_argument("integration span must be positive");

    OdeResult<S> out{std::move(y0), 0.0, {}, false};
    S k[7] = {out.y, out.y, out.y, out.y, out.y, out.y, out.y};
    k[0] = rhs(out.y);
    bool have_k0 = true;

    std::size_t next_cp = 0;
    while (next_cp < checkpoints.size() && checkpoints[next_cp] <= 0.0) ++next_cp;

    // Starting step from the magnitude of the initial derivative; rejections
    // correct a bad guess within a few attempts.
    double h_opt;
    {
        const double d0 = err_norm(out.y, out.y, out.y);
        const double d1 = err_norm(k[0], out.y, out.y);
        h_opt = (d1 > 1e-12) ? 0.01 * (d0 + 1.0) / d1 : 0.1 * t_end;
        h_opt = std::min(h_opt, 0.1 * t_end);
        h_opt = std::max(h_opt, t_end * 1e-12);
    }

    const double t_tiny = 1e-14 * t_end;
    std::uint64_t attempts = 0;
    while (out.t < t_end - t_tiny) {
        if (++attempts > opt.max_steps)
            throw std::runtime_error("step budget exhausted before reaching the flow horizon");

        bool hit_cp = false;
        double h = std::min(h_opt, t_end - out.t);
        if (next_cp < checkpoints.size() && out.t + h >= checkpoints[next_cp] - t_tiny) {
            h = checkpoints[next_cp] - out.t;
            hit_cp = true;
        }
        if (!(h > 0.0) || out.t + h == out.t)
            throw std::runtime_error("step size underflow");

        if (!have_k0) {
            k[0] = rhs(out.y);
            have_k0 = true;
        }
        for (int i = 1; i < 7; ++i) {
            S yi = out.y;
            for (int j = 0; j < i; ++j) {
                if (dp_a[i][j] != 0.0) yi = yi + (h * dp_a[i][j]) * k[j];
            }
            k[i] = rhs(yi);
        }
        // Stage 7 input is already the 5th order solution.
        S y5 = out.y;
        for (int j = 0; j < 6; ++j) {
            if (dp_b5[j] != 0.0) y5 = y5 + (h * dp_b5[j]) * k[j];
        }
        S err = (h * (dp_b5[0] - dp_b4[0])) * k[0];
        for (int j = 1; j < 7; ++j) {
            err = err + (h * (dp_b5[j] - dp_b4[j])) * k[j];
        }
        const double e = err_norm(err, out.y, y5);

        if (e <= 1.0) {
            out.t += h;
            if (hit_cp) {
                out.t = checkpoints[next_cp];  // kill accumulated rounding at the landing
                ++next_cp;
            }
            have_k0 = false;  // the observer may adjust y, so no FSAL reuse
            out.y = std::move(y5);
            ++out.stats.accepted;
            out.stats.final_step = h;
            const double factor =
                (e > 1e-300) ? std::clamp(opt.safety * std::pow(e, -0.2), opt.shrink_limit, opt.grow_limit)
                             : opt.grow_limit;
            // A step clamped onto a checkpoint says nothing against the previous
            // optimum, so never let the landing shrink the proposal.
            h_opt = hit_cp ? std::max(h * factor, h_opt) : h * factor;
            if (observe(out.t, out.y, hit_cp ? StepFlag::Checkpoint : StepFlag::Interior) == Control::Stop)
                return out;
        } else {
            ++out.stats.rejected;
            have_k0 = true;  // k[0] still valid at unchanged y
            h_opt = h * std::clamp(opt.safety * std::pow(e, -0.2), opt.shrink_limit, 1.0);
        }
    }
    out.reached_end = true;
    return out;
}

}  // namespace wegnerflow
