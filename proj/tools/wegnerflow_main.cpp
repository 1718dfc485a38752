// Command-line frontend for the flow library: classification, trajectory
// integration, phase portraits, spectra, and the dense-matrix oracles.
// Exit codes: 0 success, 2 usage or validation error, 3 runtime failure
// (a flow that did not reach its fixed point, a stalled matrix flow, or an
// exhausted step budget).

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "wegnerflow/wegnerflow.hpp"

namespace wf = wegnerflow;
using wf::Complex;
using nlohmann::json;

namespace {

std::string fmt_entry(Complex z) {
    std::string s = wf::format_double(z.real());
    if (z.imag() != 0.0) {
        if (z.imag() > 0.0) s += '+';
        s += wf::format_double(z.imag());
        s += 'J';
    }
    return s;
}

json config_to_json(const wf::IntegratorConfig& c) {
    return json{{"rtol", c.rtol},
                {"atol", c.atol},
                {"l_max", c.l_max},
                {"convergence_tol", c.convergence_tol},
                {"z_guard", c.z_guard},
                {"coeff_guard", c.coeff_guard},
                {"max_steps", c.max_steps},
                {"samples_per_decade", c.samples_per_decade},
                {"record_all_steps", c.record_all_steps}};
}

void apply_config_json(const json& j, wf::IntegratorConfig& c) {
    for (const auto& [key, value] : j.items()) {
        if (key == "rtol") c.rtol = value.get<double>();
        else if (key == "atol") c.atol = value.get<double>();
        else if (key == "l_max") c.l_max = value.get<double>();
        else if (key == "convergence_tol") c.convergence_tol = value.get<double>();
        else if (key == "z_guard") c.z_guard = value.get<double>();
        else if (key == "coeff_guard") c.coeff_guard = value.get<double>();
        else if (key == "max_steps") c.max_steps = value.get<std::uint64_t>();
        else if (key == "samples_per_decade") c.samples_per_decade = value.get<int>();
        else if (key == "record_all_steps") c.record_all_steps = value.get<bool>();
        else throw std::invalid_argument("unknown config key: " + key);
    }
}

// Integrator options shared by the flow-running subcommands. Effective value
// precedence: explicit flag > config file entry > built-in default.
struct IntegratorCli {
    wf::IntegratorConfig flags;
    std::string config_path;
    CLI::Option* rtol = nullptr;
    CLI::Option* atol = nullptr;
    CLI::Option* l_max = nullptr;
    CLI::Option* convergence_tol = nullptr;
    CLI::Option* z_guard = nullptr;
    CLI::Option* coeff_guard = nullptr;
    CLI::Option* max_steps = nullptr;
    CLI::Option* samples_per_decade = nullptr;
    CLI::Option* record_all_steps = nullptr;

    void attach(CLI::App& app) {
        app.add_option("--config", config_path, "JSON file with integrator settings");
        rtol = app.add_option("--rtol", flags.rtol, "relative step tolerance");
        atol = app.add_option("--atol", flags.atol, "absolute step tolerance");
        l_max = app.add_option("--l-max", flags.l_max, "flow horizon (0 = automatic)");
        convergence_tol =
            app.add_option("--convergence-tol", flags.convergence_tol, "fixed point detection tolerance");
        z_guard = app.add_option("--z-guard", flags.z_guard, "chart coordinate guard");
        coeff_guard = app.add_option("--coeff-guard", flags.coeff_guard, "coefficient blow-up guard");
        max_steps = app.add_option("--max-steps", flags.max_steps, "step budget");
        samples_per_decade =
            app.add_option("--samples-per-decade", flags.samples_per_decade, "output sampling density");
        record_all_steps =
            app.add_flag("--record-all-steps", flags.record_all_steps, "record every accepted step");
    }

    wf::IntegratorConfig resolve() const {
        wf::IntegratorConfig out;
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is.good()) throw std::invalid_argument("cannot open config file: " + config_path);
            json j;
            try {
                is >> j;
            } catch (const json::exception& e) {
                throw std::invalid_argument("config file is not valid JSON: " + std::string(e.what()));
            }
            apply_config_json(j, out);
        }
        if (rtol->count()) out.rtol = flags.rtol;
        if (atol->count()) out.atol = flags.atol;
        if (l_max->count()) out.l_max = flags.l_max;
        if (convergence_tol->count()) out.convergence_tol = flags.convergence_tol;
        if (z_guard->count()) out.z_guard = flags.z_guard;
        if (coeff_guard->count()) out.coeff_guard = flags.coeff_guard;
        if (max_steps->count()) out.max_steps = flags.max_steps;
        if (samples_per_decade->count()) out.samples_per_decade = flags.samples_per_decade;
        if (record_all_steps->count()) out.record_all_steps = flags.record_all_steps;
        out.validate();
        return out;
    }
};

struct CoefficientCli {
    double omega = 0.0;
    double lambda = 0.0;
    double v = 0.0;

    void attach(CLI::App& app, bool lambda_required = true) {
        app.add_option("--omega", omega, "harmonic coefficient")->required();
        auto* lo = app.add_option("--lambda", lambda, "pair coupling");
        if (lambda_required) lo->required();
        app.add_option("--v", v, "scalar offset")->required();
    }

    wf::QuadraticCoefficients value() const {
        const wf::QuadraticCoefficients c{omega, lambda, v};
        if (!wf::is_finite(c)) throw std::invalid_argument("coefficients must be finite");
        return c;
    }
};

void emit(const std::string& text, const std::string& output_path) {
    if (output_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream os(output_path);
    if (!os.good()) throw std::invalid_argument("cannot open output file: " + output_path);
    os << text;
}

unsigned pool_size(std::size_t jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("WEGNERFLOW_THREADS")) {
        char* end = nullptr;
        const long parsed = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && parsed > 0 && parsed <= 256) n = unsigned(parsed);
    }
    if (jobs < n) n = unsigned(jobs);
    return std::max(1u, n);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json trajectory_doc(const wf::FlowTrajectory& t, const wf::IntegratorConfig& cfg) {
    json j = wf::trajectory_to_json(t);
    j["config"] = config_to_json(cfg);
    return j;
}

int finish_trajectory(const wf::FlowTrajectory& t) {
    if (t.converged()) return 0;
    std::cerr << "error: " << std::get<wf::DivergenceReport>(t.terminal).reason << '\n';
    return 3;
}

wf::BranchLabel parse_branch(const std::string& s) { return wf::branch_from_name(s); }

int run_classify(const CoefficientCli& coeff, bool as_json, const std::string& output) {
    const wf::QuadraticCoefficients c = coeff.value();
    const wf::Regime regime = wf::classify_regime(c);
    if (as_json) {
        const Complex I = wf::flow_invariant(c);
        emit(dump(json{{"regime", wf::regime_name(regime)},
                       {"invariant", wf::complex_to_json(I)},
                       {"energy_scale", wf::energy_scale(c)}}),
             output);
    } else {
        emit(std::string(wf::regime_name(regime)) + "\n", output);
    }
    return 0;
}

int run_flow(const CoefficientCli& coeff, const IntegratorCli& icli, bool as_json,
             const std::string& output) {
    const wf::IntegratorConfig cfg = icli.resolve();
    const wf::FlowTrajectory t = wf::integrate_unitary(coeff.value(), cfg);
    if (as_json) {
        emit(dump(trajectory_doc(t, cfg)), output);
    } else {
        std::ostringstream os;
        wf::write_trajectory_csv(os, t);
        emit(os.str(), output);
    }
    return finish_trajectory(t);
}

int run_spectrum(const CoefficientCli& coeff, const std::string& branch, int n_max, bool as_json,
                 const std::string& output) {
    const wf::QuadraticCoefficients c = coeff.value();
    const wf::BranchLabel b = parse_branch(branch);
    wf::Spectrum spec;
    if (b == wf::BranchLabel::Zero) {
        if (wf::classify_regime(c) == wf::Regime::Unbounded)
            throw std::invalid_argument(
                "unbounded surfaces carry complex ladders; pick --branch=+ or --branch=-");
        spec = wf::bounded_spectrum(c, n_max);
    } else {
        spec = wf::complex_spectrum(c, b, n_max);
    }
    if (as_json) {
        emit(dump(wf::spectrum_to_json(spec)), output);
    } else {
        std::string text;
        for (Complex e : spec.levels) {
            text += fmt_entry(e);
            text += '\n';
        }
        emit(text, output);
    }
    return 0;
}

int run_find_unstable(const CoefficientCli& coeff, const IntegratorCli& icli, double epsilon,
                      double alpha, bool as_json, const std::string& output) {
    const wf::IntegratorConfig cfg = icli.resolve();
    const wf::UnstablePoints up = wf::find_unstable_points(coeff.value(), epsilon, alpha, cfg);
    if (as_json) {
        // The attractor both backward runs were seeded from: the forward
        // fixed point of the same surface.
        const wf::FixedPoint attractor =
            std::get<wf::FixedPoint>(wf::integrate_unitary(coeff.value(), cfg).terminal);
        emit(dump(json{{"plus", wf::fixed_point_to_json(up.plus)},
                       {"minus", wf::fixed_point_to_json(up.minus)},
                       {"attractor", wf::fixed_point_to_json(attractor)},
                       {"config", config_to_json(cfg)}}),
             output);
    } else {
        std::string text;
        for (const wf::FixedPoint* fp : {&up.plus, &up.minus}) {
            text += wf::branch_name(fp->branch);
            text += ' ';
            text += fmt_entry(fp->coefficients.omega);
            text += ' ';
            text += fmt_entry(fp->coefficients.lambda);
            text += ' ';
            text += fmt_entry(fp->coefficients.v);
            text += '\n';
        }
        emit(text, output);
    }
    return 0;
}

int run_portrait(const CoefficientCli& coeff, const IntegratorCli& icli, bool generalized,
                 bool lambda_given, double lambda_min, double lambda_max, bool scan_given,
                 int count, double epsilon, double alpha, bool as_json,
                 const std::string& output) {
    const wf::IntegratorConfig cfg = icli.resolve();
    json doc;
    std::string text;

    if (generalized) {
        if (!lambda_given)
            throw std::invalid_argument("--lambda is required with --generalized");
        const wf::QuadraticCoefficients c = coeff.value();
        const wf::FlowTrajectory forward = wf::integrate_unitary(c, cfg);
        const wf::UnstablePoints up = wf::find_unstable_points(c, epsilon, alpha, cfg);
        doc = json{{"mode", "generalized"},
                   {"config", config_to_json(cfg)},
                   {"unstable",
                    {{"plus", wf::fixed_point_to_json(up.plus)},
                     {"minus", wf::fixed_point_to_json(up.minus)}}},
                   {"trajectories",
                    json::array({wf::trajectory_to_json(forward),
                                 wf::trajectory_to_json(up.plus_trajectory),
                                 wf::trajectory_to_json(up.minus_trajectory)})}};
        for (const wf::FlowTrajectory* t : {&forward, &up.plus_trajectory, &up.minus_trajectory}) {
            text += "branch=" + std::string(wf::branch_name(t->branch)) +
                    " regime=" + wf::regime_name(t->regime) +
                    " converged=" + (t->converged() ? "yes" : "no") + "\n";
        }
    } else {
        if (!scan_given)
            throw std::invalid_argument(
                "portrait needs either --generalized or a --lambda-min/--lambda-max scan");
        if (count < 2) throw std::invalid_argument("scan needs --count >= 2");
        if (!std::isfinite(lambda_min) || !std::isfinite(lambda_max) || lambda_max < lambda_min)
            throw std::invalid_argument("scan range must be finite with min <= max");
        const wf::QuadraticCoefficients base = coeff.value();

        std::vector<double> lambdas(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k)
            lambdas[std::size_t(k)] = lambda_min + (lambda_max - lambda_min) * k / (count - 1);

        std::vector<wf::FlowTrajectory> results(lambdas.size());
        std::vector<std::string> failures(lambdas.size());
        std::atomic<std::size_t> cursor{0};
        const unsigned workers = pool_size(lambdas.size());
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = cursor.fetch_add(1); i < lambdas.size();
                     i = cursor.fetch_add(1)) {
                    try {
                        results[i] = wf::integrate_unitary(
                            {base.omega, lambdas[i], base.v}, cfg);
                    } catch (const std::exception& e) {
                        failures[i] = e.what();
                    }
                }
            });
        }
        for (std::thread& th : pool) th.join();
        for (const std::string& f : failures)
            if (!f.empty()) throw std::runtime_error("portrait worker failed: " + f);

        json entries = json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            json e = wf::trajectory_to_json(results[i]);
            e["lambda0"] = lambdas[i];
            entries.push_back(std::move(e));
            text += "lambda0=" + wf::format_double(lambdas[i]) +
                    " regime=" + wf::regime_name(results[i].regime) +
                    " converged=" + (results[i].converged() ? "yes" : "no") + "\n";
        }
        doc = json{{"mode", "scan"}, {"config", config_to_json(cfg)},
                   {"trajectories", std::move(entries)}};
    }

    emit(as_json ? dump(doc) : text, output);
    return 0;
}

int run_fock_oracle(const CoefficientCli& coeff, int n_cut, int levels, const std::string& parity,
                    bool as_json, const std::string& output) {
    if (n_cut > 512) throw std::invalid_argument("truncation too large for the dense oracle");
    wf::DenseHermitianMatrix m = wf::build_fock_matrix(coeff.value(), n_cut);
    if (parity == "even") m = wf::parity_block(m, wf::Parity::Even);
    if (parity == "odd") m = wf::parity_block(m, wf::Parity::Odd);
    const std::vector<double> eigs = wf::hermitian_eigenvalues(m);
    const std::size_t take = std::min<std::size_t>(eigs.size(), std::size_t(std::max(levels, 0)));

    if (as_json) {
        json lv = json::array();
        for (std::size_t k = 0; k < take; ++k) lv.push_back(eigs[k]);
        emit(dump(json{{"dim", m.dim()}, {"parity", parity}, {"levels", std::move(lv)}}), output);
    } else {
        std::string text;
        for (std::size_t k = 0; k < take; ++k) {
            text += wf::format_double(eigs[k]);
            text += '\n';
        }
        emit(text, output);
    }
    return 0;
}

int run_matrix_flow(const std::string& input, const IntegratorCli& icli, bool as_json,
                    const std::string& output) {
    const wf::IntegratorConfig cfg = icli.resolve();
    std::ifstream is(input);
    if (!is.good()) throw std::invalid_argument("cannot open matrix file: " + input);
    const wf::DenseHermitianMatrix m = wf::read_matrix_text(is);
    const wf::MatrixFlowResult r = wf::integrate_matrix_flow(m, cfg);

    if (as_json) {
        json terminal;
        if (r.converged()) {
            terminal = json::array();
            for (double d : std::get<std::vector<double>>(r.terminal)) terminal.push_back(d);
        } else {
            const auto& rep = std::get<wf::DivergenceReport>(r.terminal);
            terminal = json{{"reason", rep.reason}, {"l", rep.l}};
        }
        emit(dump(json{{"converged", r.converged()},
                       {"terminal", std::move(terminal)},
                       {"diagnostics",
                        {{"initial_norm", r.diagnostics.initial_norm},
                         {"final_offdiagonal", r.diagnostics.final_offdiagonal},
                         {"spectrum_drift", r.diagnostics.spectrum_drift},
                         {"max_resym_correction", r.diagnostics.max_resym_correction},
                         {"accepted", r.diagnostics.stats.accepted},
                         {"rejected", r.diagnostics.stats.rejected}}},
                       {"config", config_to_json(cfg)}}),
             output);
    } else if (r.converged()) {
        std::string text;
        for (double d : std::get<std::vector<double>>(r.terminal)) {
            text += wf::format_double(d);
            text += '\n';
        }
        emit(text, output);
    }
    if (r.converged()) return 0;
    std::cerr << "error: " << std::get<wf::DivergenceReport>(r.terminal).reason << '\n';
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-equation diagonalization of quadratic boson Hamiltonians"};
    app.require_subcommand(1);

    bool as_json = false;
    std::string output;
    const auto attach_output = [&](CLI::App& sub) {
        sub.add_flag("--json", as_json, "emit a JSON document instead of text");
        sub.add_option("--output", output, "write to a file instead of stdout");
    };

    auto* classify = app.add_subcommand("classify", "name the flow regime of a coefficient triple");
    CoefficientCli classify_coeff;
    classify_coeff.attach(*classify);
    attach_output(*classify);

    auto* flow = app.add_subcommand("flow", "integrate the unitary flow to its fixed point");
    CoefficientCli flow_coeff;
    flow_coeff.attach(*flow);
    IntegratorCli flow_icli;
    flow_icli.attach(*flow);
    attach_output(*flow);

    auto* spectrum = app.add_subcommand("spectrum", "closed-form ladder spectrum");
    CoefficientCli spectrum_coeff;
    spectrum_coeff.attach(*spectrum);
    std::string branch = "0";
    spectrum
        ->add_option("--branch", branch,
                     "ladder branch: 0 (real), + or - (conjugate complex pair)")
        ->check(CLI::IsMember({"0", "+", "-"}));
    int n_max = 8;
    spectrum->add_option("--n-max", n_max, "highest level index");
    attach_output(*spectrum);

    auto* find_unstable =
        app.add_subcommand("find-unstable", "locate the imaginary-frequency stationary pair");
    CoefficientCli fu_coeff;
    fu_coeff.attach(*find_unstable);
    IntegratorCli fu_icli;
    fu_icli.attach(*find_unstable);
    double fu_epsilon = 1e-6;
    double fu_alpha = std::numbers::pi / 2.0;
    find_unstable->add_option("--epsilon", fu_epsilon, "seed radius around the attractor");
    find_unstable->add_option("--alpha", fu_alpha, "seed phase; its sign picks the branch");
    attach_output(*find_unstable);

    auto* portrait = app.add_subcommand("portrait", "families of trajectories on one surface");
    CoefficientCli portrait_coeff;
    portrait_coeff.attach(*portrait, /*lambda_required=*/false);
    IntegratorCli portrait_icli;
    portrait_icli.attach(*portrait);
    bool generalized = false;
    portrait->add_flag("--generalized", generalized,
                       "emit the three branch trajectories instead of a coupling scan");
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    auto* lmin_opt = portrait->add_option("--lambda-min", lambda_min, "scan start");
    auto* lmax_opt = portrait->add_option("--lambda-max", lambda_max, "scan end");
    int count = 9;
    portrait->add_option("--count", count, "number of scan trajectories");
    double p_epsilon = 1e-6;
    double p_alpha = std::numbers::pi / 2.0;
    portrait->add_option("--epsilon", p_epsilon, "seed radius (generalized mode)");
    portrait->add_option("--alpha", p_alpha, "seed phase (generalized mode)");
    attach_output(*portrait);

    auto* fock = app.add_subcommand("fock-oracle", "number-basis truncation eigenvalues");
    CoefficientCli fock_coeff;
    fock_coeff.attach(*fock);
    int n_cut = 64;
    int levels = 8;
    std::string parity = "both";
    fock->add_option("--n-cut", n_cut, "occupation cutoff (matrix dimension n-cut + 1)");
    fock->add_option("--levels", levels, "how many low eigenvalues to print");
    fock->add_option("--parity", parity, "restrict to one occupation parity")
        ->check(CLI::IsMember({"both", "even", "odd"}));
    attach_output(*fock);

    auto* matrix_flow = app.add_subcommand("matrix-flow", "double-bracket flow of a matrix file");
    std::string matrix_input;
    matrix_flow->add_option("--input", matrix_input, "matrix text file")->required();
    IntegratorCli mf_icli;
    mf_icli.attach(*matrix_flow);
    attach_output(*matrix_flow);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (classify->parsed()) return run_classify(classify_coeff, as_json, output);
        if (flow->parsed()) return run_flow(flow_coeff, flow_icli, as_json, output);
        if (spectrum->parsed())
            return run_spectrum(spectrum_coeff, branch, n_max, as_json, output);
        if (find_unstable->parsed())
            return run_find_unstable(fu_coeff, fu_icli, fu_epsilon, fu_alpha, as_json, output);
        if (portrait->parsed())
            return run_portrait(portrait_coeff, portrait_icli, generalized,
                                portrait->count("--lambda") > 0, lambda_min, lambda_max,
                                lmin_opt->count() > 0 && lmax_opt->count() > 0, count, p_epsilon,
                                p_alpha, as_json, output);
        if (fock->parsed())
            return run_fock_oracle(fock_coeff, n_cut, levels, parity, as_json, output);
        if (matrix_flow->parsed()) return run_matrix_flow(matrix_input, mf_icli, as_json, output);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
