#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "wegnerflow/core.hpp"
#include "wegnerflow/flow.hpp"

namespace wegnerflow {

/// Dense Hermitian matrix in row-major storage. Flow updates keep entries
/// Hermitian to rounding; integrate_matrix_flow re-symmetrizes explicitly.
class DenseHermitianMatrix {
  public:
    DenseHermitianMatrix() = default;
    explicit DenseHermitianMatrix(int dim) : dim_(dim), a_(static_cast<std::size_t>(dim) * dim) {
        if (dim < 1) throw std::invalid_argument("matrix dimension must be >= 1");
    }

    int dim() const { return dim_; }
    Complex& at(int i, int j) { return a_[static_cast<std::size_t>(i) * dim_ + j]; }
    const Complex& at(int i, int j) const { return a_[static_cast<std::size_t>(i) * dim_ + j]; }

    friend DenseHermitianMatrix operator+(const DenseHermitianMatrix& x,
                                          const DenseHermitianMatrix& y) {
        DenseHermitianMatrix r(x.dim_);
        for (std::size_t k = 0; k < x.a_.size(); ++k) r.a_[k] = x.a_[k] + y.a_[k];
        return r;
    }
    friend DenseHermitianMatrix operator*(double s, const DenseHermitianMatrix& x) {
        DenseHermitianMatrix r(x.dim_);
        for (std::size_t k = 0; k < x.a_.size(); ++k) r.a_[k] = s * x.a_[k];
        return r;
    }
    friend bool operator==(const DenseHermitianMatrix&, const DenseHermitianMatrix&) = default;

  private:
    int dim_ = 1;
    std::vector<Complex> a_ = {Complex{}};
};

inline double frobenius_norm(const DenseHermitianMatrix& m) {
    double s = 0.0;
    for (int i = 0; i < m.dim(); ++i)
        for (int j = 0; j < m.dim(); ++j) s += std::norm(m.at(i, j));
    return std::sqrt(s);
}

inline double offdiagonal_norm(const DenseHermitianMatrix& m) {
    double s = 0.0;
    for (int i = 0; i < m.dim(); ++i)
        for (int j = 0; j < m.dim(); ++j)
            if (i != j) s += std::norm(m.at(i, j));
    return std::sqrt(s);
}

inline double hermiticity_defect(const DenseHermitianMatrix& m) {
    double worst = 0.0;
    for (int i = 0; i < m.dim(); ++i)
        for (int j = 0; j <= i; ++j)
            worst = std::max(worst, std::abs(m.at(i, j) - std::conj(m.at(j, i))));
    return worst;
}

/// Replaces m by (m + m^dag) / 2; returns the Frobenius norm of the applied
/// correction.
inline double hermitize(DenseHermitianMatrix& m) {
    double corr = 0.0;
    for (int i = 0; i < m.dim(); ++i) {
        corr += std::norm(Complex{0.0, m.at(i, i).imag()});
        m.at(i, i) = Complex{m.at(i, i).real(), 0.0};
        for (int j = 0; j < i; ++j) {
            const Complex avg = 0.5 * (m.at(i, j) + std::conj(m.at(j, i)));
            corr += std::norm(m.at(i, j) - avg) + std::norm(m.at(j, i) - std::conj(avg));
            m.at(i, j) = avg;
            m.at(j, i) = std::conj(avg);
        }
    }
    return std::sqrt(corr);
}

inline DenseHermitianMatrix matmul(const DenseHermitianMatrix& x, const DenseHermitianMatrix& y) {
    const int n = x.dim();
    DenseHermitianMatrix r(n);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) {
            const Complex xik = x.at(i, k);
            if (xik == Complex{}) continue;
            for (int j = 0; j < n; ++j) r.at(i, j) += xik * y.at(k, j);
        }
    }
    return r;
}

/// Number-basis truncation of the quadratic Hamiltonian:
///   <n|H|n> = omega0 n + v0,   <n+2|H|n> = lambda0 sqrt((n+1)(n+2)),
/// sharp cutoff at occupation N (matrix dimension N + 1).
inline DenseHermitianMatrix build_fock_matrix(const QuadraticCoefficients& c0, int N) {
    if (!is_finite(c0) || !is_physical(c0))
        throw std::invalid_argument("number-basis truncation requires physical coefficients");
    if (N < 2) throw std::invalid_argument("truncation must keep at least one pair coupling (N >= 2)");
    DenseHermitianMatrix m(N + 1);
    const double w0 = c0.omega.real();
    const double l0 = c0.lambda.real();
    const double v0 = c0.v.real();
    for (int n = 0; n <= N; ++n) {
        m.at(n, n) = w0 * n + v0;
        if (n + 2 <= N) {
            const double t = l0 * std::sqrt(double(n + 1) * double(n + 2));
            m.at(n + 2, n) = t;
            m.at(n, n + 2) = t;
        }
    }
    return m;
}

enum class Parity { Even, Odd };

/// Sub-block on the rows/columns of one occupation parity. The pair coupling
/// only links n to n +- 2, so the two blocks of a Fock matrix decouple and
/// are tridiagonal in the compressed index.
inline DenseHermitianMatrix parity_block(const DenseHermitianMatrix& m, Parity p) {
    std::vector<int> idx;
    for (int i = p == Parity::Even ? 0 : 1; i < m.dim(); i += 2) idx.push_back(i);
    if (idx.empty()) throw std::invalid_argument("parity block is empty");
    DenseHermitianMatrix b(static_cast<int>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c) b.at(int(r), int(c)) = m.at(idx[r], idx[c]);
    return b;
}

struct EigenDecomposition {
    std::vector<double> values;     // ascending
    DenseHermitianMatrix vectors;   // columns follow values
};

/// Cyclic Jacobi for complex Hermitian matrices. Each 2x2 rotation zeroes
/// one off-diagonal pair exactly; sweeps repeat until the off-diagonal mass
/// reaches rounding level. Plenty at oracle sizes (dim of a few hundred).
inline EigenDecomposition hermitian_eigen(DenseHermitianMatrix m) {
    const int n = m.dim();
    const double scale = frobenius_norm(m);
    if (hermiticity_defect(m) > 1e-12 * std::max(1.0, scale))
        throw std::invalid_argument("eigensolver requires a Hermitian matrix");

    DenseHermitianMatrix v(n);
    for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

    const double stop = 1e-15 * std::max(scale, 1e-300);
    for (int sweep = 0; sweep < 100 && offdiagonal_norm(m) > stop; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const Complex b = m.at(p, q);
                const double nb = std::abs(b);
                if (nb <= 1e-300) continue;
                const double app = m.at(p, p).real();
                const double aqq = m.at(q, q).real();
                const double tau = (aqq - app) / (2.0 * nb);
                const double t =
                    tau == 0.0 ? 1.0 : -std::copysign(1.0, tau) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const Complex s = (t * c) * std::conj(b) / nb;

                for (int k = 0; k < n; ++k) {  // columns: m <- m U
                    const Complex mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp + s * mkq;
                    m.at(k, q) = -std::conj(s) * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {  // rows: m <- U^dag m
                    const Complex mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk + std::conj(s) * mqk;
                    m.at(q, k) = -s * mpk + c * mqk;
                }
                m.at(p, q) = 0.0;
                m.at(q, p) = 0.0;
                m.at(p, p) = m.at(p, p).real();
                m.at(q, q) = m.at(q, q).real();
                for (int k = 0; k < n; ++k) {  // accumulate v <- v U
                    const Complex vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp + s * vkq;
                    v.at(k, q) = -std::conj(s) * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return m.at(a, a).real() < m.at(b, b).real(); });
    EigenDecomposition out{std::vector<double>(n), DenseHermitianMatrix(n)};
    for (int c = 0; c < n; ++c) {
        out.values[c] = m.at(order[c], order[c]).real();
        for (int r = 0; r < n; ++r) out.vectors.at(r, c) = v.at(r, order[c]);
    }
    return out;
}

inline std::vector<double> hermitian_eigenvalues(const DenseHermitianMatrix& m) {
    return hermitian_eigen(m).values;
}

/// Double-bracket flow direction [[diag(m), m], m]. Stationary exactly when
/// the generator [diag(m), m] vanishes; a matrix like [[0,1],[1,0]] sits in
/// that stall even though it is far from diagonal.
inline DenseHermitianMatrix matrix_flow_rhs(const DenseHermitianMatrix& m) {
    const int n = m.dim();
    DenseHermitianMatrix eta(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) eta.at(i, j) = (m.at(i, i).real() - m.at(j, j).real()) * m.at(i, j);
    DenseHermitianMatrix r = matmul(eta, m);
    const DenseHermitianMatrix me = matmul(m, eta);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) r.at(i, j) -= me.at(i, j);
    return r;
}

struct MatrixFlowSample {
    double l = 0.0;
    DenseHermitianMatrix matrix;
    double offdiagonal = 0.0;
};

struct MatrixFlowDiagnostics {
    double initial_norm = 0.0;
    double final_offdiagonal = 0.0;
    double spectrum_drift = 0.0;        // max eigenvalue displacement over samples
    double max_resym_correction = 0.0;  // largest (m - m^dag)/2 removed after a step
    IntegratorStats stats;
};

struct MatrixFlowResult {
    std::vector<MatrixFlowSample> samples;
    DenseHermitianMatrix final_matrix;
    std::variant<std::vector<double>, DivergenceReport> terminal;  // final diagonal when converged
    std::vector<double> offdiagonal_trace;  // per accepted step, for monotonicity checks
    MatrixFlowDiagnostics diagnostics;

    bool converged() const { return std::holds_alternative<std::vector<double>>(terminal); }
};

namespace detail {

inline double scaled_error_norm(const DenseHermitianMatrix& e, const DenseHermitianMatrix& a,
                                const DenseHermitianMatrix& b, double rtol, double atol) {
    double acc = 0.0;
    const int n = e.dim();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double sc = atol + rtol * std::max(std::abs(a.at(i, j)), std::abs(b.at(i, j)));
            const double q = std::abs(e.at(i, j)) / sc;
            acc += q * q;
        }
    }
    return std::sqrt(acc / (double(n) * n));
}

}  // namespace detail

/// Flows a Hermitian matrix toward diagonal with the double-bracket flow.
/// Convergence: off-diagonal Frobenius norm < convergence_tol * ||m0||.
/// The default horizon comes from the smallest initial eigenvalue gap (the
/// slowest decay rate is the squared gap); an explicit cfg.l_max overrides.
/// A vanishing generator with off-diagonal weight remaining is reported as
/// DivergenceReport("degenerate stall").
inline MatrixFlowResult integrate_matrix_flow(const DenseHermitianMatrix& m0,
                                              const IntegratorConfig& cfg = {}) {
    cfg.validate();
    if (m0.dim() > 64) throw std::invalid_argument("matrix flow is an oracle; keep dim <= 64");
    const double norm0 = frobenius_norm(m0);
    if (hermiticity_defect(m0) > 1e-12 * std::max(1.0, norm0))
        throw std::invalid_argument("matrix flow requires a Hermitian matrix");

    MatrixFlowResult out;
    out.diagnostics.initial_norm = norm0;
    const std::vector<double> eigs0 = hermitian_eigenvalues(m0);

    if (norm0 == 0.0) {
        out.samples.push_back({0.0, m0, 0.0});
        out.final_matrix = m0;
        out.terminal = std::vector<double>(static_cast<std::size_t>(m0.dim()), 0.0);
        return out;
    }

    double l_span = cfg.l_max;
    if (l_span <= 0.0) {
        double gap = 0.0;
        for (std::size_t k = 1; k < eigs0.size(); ++k) {
            const double g = eigs0[k] - eigs0[k - 1];
            if (g > 0.0 && (gap == 0.0 || g < gap)) gap = g;
        }
        // 60 / gap^2 covers ~26 e-foldings of the slowest off-diagonal decay;
        // degenerate spectra fall back on the norm scale and usually stall.
        l_span = gap > 0.0 ? 60.0 / (gap * gap) : 50.0 / (norm0 * norm0);
    }

    auto grid = detail::log_sample_grid(l_span, cfg.samples_per_decade);
    const double off_floor = cfg.convergence_tol * norm0;
    const double stall_eta = 1e-13 * norm0 * norm0;

    bool converged = offdiagonal_norm(m0) < off_floor;
    bool stalled = false;

    auto record = [&](double l, const DenseHermitianMatrix& m) {
        if (!out.samples.empty() && out.samples.back().l == l) return;
        out.samples.push_back({l, m, offdiagonal_norm(m)});
    };
    record(0.0, m0);
    out.offdiagonal_trace.push_back(offdiagonal_norm(m0));

    auto result = dopri5_integrate(
        [&](const DenseHermitianMatrix& y) { return matrix_flow_rhs(y); },
        [&](const DenseHermitianMatrix& e, const DenseHermitianMatrix& a,
            const DenseHermitianMatrix& b) {
            return detail::scaled_error_norm(e, a, b, cfg.rtol, cfg.atol);
        },
        m0, l_span, grid,
        [&](double l, DenseHermitianMatrix& y, StepFlag flag) {
            out.diagnostics.max_resym_correction =
                std::max(out.diagnostics.max_resym_correction, hermitize(y));
            const double off = offdiagonal_norm(y);
            out.offdiagonal_trace.push_back(off);
            if (flag == StepFlag::Checkpoint || cfg.record_all_steps) record(l, y);
            if (off < off_floor) {
                converged = true;
                return Control::Stop;
            }
            double eta_norm = 0.0;
            for (int i = 0; i < y.dim(); ++i)
                for (int j = 0; j < y.dim(); ++j)
                    if (i != j)
                        eta_norm += std::norm((y.at(i, i).real() - y.at(j, j).real()) * y.at(i, j));
            if (std::sqrt(eta_norm) < stall_eta && off > 10.0 * off_floor) {
                stalled = true;
                return Control::Stop;
            }
            return Control::Continue;
        },
        StepperOptions{cfg.rtol, cfg.atol, cfg.max_steps});

    out.diagnostics.stats = result.stats;
    record(result.t, result.y);
    out.final_matrix = std::move(result.y);
    out.diagnostics.final_offdiagonal = offdiagonal_norm(out.final_matrix);

    for (const MatrixFlowSample& s : out.samples) {
        const std::vector<double> e = hermitian_eigenvalues(s.matrix);
        double d = 0.0;
        for (std::size_t k = 0; k < e.size(); ++k) d = std::max(d, std::abs(e[k] - eigs0[k]));
        out.diagnostics.spectrum_drift = std::max(out.diagnostics.spectrum_drift, d);
    }

    if (converged) {
        std::vector<double> diag(static_cast<std::size_t>(out.final_matrix.dim()));
        for (int i = 0; i < out.final_matrix.dim(); ++i) diag[i] = out.final_matrix.at(i, i).real();
        out.terminal = std::move(diag);
    } else if (stalled) {
        out.terminal = DivergenceReport{"degenerate stall", result.t};
    } else {
        out.terminal = DivergenceReport{"flow horizon reached before convergence", result.t};
    }
    return out;
}

/// Plain-text matrix format: first line the dimension, then one row per
/// line with whitespace-separated entries "re" or "re+imJ" (e.g. 0.5-1.25J).
inline void write_matrix_text(std::ostream& os, const DenseHermitianMatrix& m) {
    os << m.dim() << '\n';
    for (int i = 0; i < m.dim(); ++i) {
        for (int j = 0; j < m.dim(); ++j) {
            if (j) os << ' ';
            const Complex z = m.at(i, j);
            os << format_double(z.real());
            if (z.imag() != 0.0) {
                if (z.imag() > 0.0) os << '+';
                os << format_double(z.imag()) << 'J';
            }
        }
        os << '\n';
    }
}

namespace detail {

inline Complex parse_matrix_entry(const std::string& tok) {
    const char* s = tok.c_str();
    char* end = nullptr;
    const double re = std::strtod(s, &end);
    if (end == s) throw std::invalid_argument("bad matrix entry: " + tok);
    if (*end == '\0') return {re, 0.0};
    char* end2 = nullptr;
    const double im = std::strtod(end, &end2);
    if (end2 == end || (*end2 != 'J' && *end2 != 'j') || *(end2 + 1) != '\0')
        throw std::invalid_argument("bad matrix entry: " + tok);
    return {re, im};
}

}  // namespace detail

inline DenseHermitianMatrix read_matrix_text(std::istream& is) {
    int dim = 0;
    if (!(is >> dim) || dim < 1) throw std::invalid_argument("matrix text must start with a positive dimension");
    DenseHermitianMatrix m(dim);
    std::string tok;
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
            if (!(is >> tok)) throw std::invalid_argument("matrix text ended early");
            m.at(i, j) = detail::parse_matrix_entry(tok);
        }
    }
    return m;
}

}  // namespace wegnerflow
