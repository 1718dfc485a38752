#pragma once

#include <ostream>
#include <string>

#include <json.hpp>

#include "wegnerflow/bogoliubov.hpp"
#include "wegnerflow/core.hpp"
#include "wegnerflow/flow.hpp"

namespace wegnerflow {

using nlohmann::json;

inline Regime regime_from_name(const std::string& s) {
    if (s == "Bounded") return Regime::Bounded;
    if (s == "Unbounded") return Regime::Unbounded;
    if (s == "Critical") return Regime::Critical;
    if (s == "Free") return Regime::Free;
    if (s == "Degenerate") return Regime::Degenerate;
    throw std::invalid_argument("unknown regime name: " + s);
}

inline BranchLabel branch_from_name(const std::string& s) {
    if (s == "+") return BranchLabel::Plus;
    if (s == "-") return BranchLabel::Minus;
    if (s == "0") return BranchLabel::Zero;
    throw std::invalid_argument("unknown branch label: " + s);
}

inline Stability stability_from_name(const std::string& s) {
    if (s == "Attractor") return Stability::Attractor;
    if (s == "Unstable") return Stability::Unstable;
    if (s == "Degenerate") return Stability::Degenerate;
    throw std::invalid_argument("unknown stability name: " + s);
}

inline json complex_to_json(Complex z) { return json{{"re", z.real()}, {"im", z.imag()}}; }

inline Complex complex_from_json(const json& j) {
    return {j.at("re").get<double>(), j.at("im").get<double>()};
}

inline json coefficients_to_json(const QuadraticCoefficients& c) {
    return json{{"omega", complex_to_json(c.omega)},
                {"lambda", complex_to_json(c.lambda)},
                {"v", complex_to_json(c.v)}};
}

inline QuadraticCoefficients coefficients_from_json(const json& j) {
    return {complex_from_json(j.at("omega")), complex_from_json(j.at("lambda")),
            complex_from_json(j.at("v"))};
}

inline json fixed_point_to_json(const FixedPoint& fp) {
    json j = coefficients_to_json(fp.coefficients);
    j["type"] = "fixed_point";
    j["stability"] = stability_name(fp.stability);
    j["branch"] = branch_name(fp.branch);
    return j;
}

inline FixedPoint fixed_point_from_json(const json& j) {
    return {coefficients_from_json(j), stability_from_name(j.at("stability").get<std::string>()),
            branch_from_name(j.at("branch").get<std::string>())};
}

inline json trajectory_to_json(const FlowTrajectory& t) {
    json samples = json::array();
    for (const FlowSample& s : t.samples) {
        json row = coefficients_to_json(s.coefficients);
        row["l"] = s.l;
        row["invariant_residual"] = s.invariant_residual;
        samples.push_back(std::move(row));
    }
    json terminal;
    if (const auto* fp = std::get_if<FixedPoint>(&t.terminal)) {
        terminal = fixed_point_to_json(*fp);
    } else {
        const auto& d = std::get<DivergenceReport>(t.terminal);
        terminal = json{{"type", "divergence"}, {"reason", d.reason}, {"l", d.l}};
    }
    return json{{"regime", regime_name(t.regime)},
                {"branch", branch_name(t.branch)},
                {"samples", std::move(samples)},
                {"terminal", std::move(terminal)},
                {"stats",
                 {{"accepted", t.stats.accepted},
                  {"rejected", t.stats.rejected},
                  {"final_step", t.stats.final_step}}},
                {"snap_distance", t.snap_distance}};
}

inline FlowTrajectory trajectory_from_json(const json& j) {
    FlowTrajectory t;
    t.regime = regime_from_name(j.at("regime").get<std::string>());
    t.branch = branch_from_name(j.at("branch").get<std::string>());
    for (const json& row : j.at("samples")) {
        t.samples.push_back({row.at("l").get<double>(), coefficients_from_json(row),
                             row.at("invariant_residual").get<double>()});
    }
    const json& term = j.at("terminal");
    if (term.at("type").get<std::string>() == "fixed_point") {
        t.terminal = fixed_point_from_json(term);
    } else {
        t.terminal = DivergenceReport{term.at("reason").get<std::string>(), term.at("l").get<double>()};
    }
    const json& st = j.at("stats");
    t.stats = {st.at("accepted").get<std::uint64_t>(), st.at("rejected").get<std::uint64_t>(),
               st.at("final_step").get<double>()};
    t.snap_distance = j.at("snap_distance").get<double>();
    return t;
}

inline json spectrum_to_json(const Spectrum& s) {
    json gens;
    if (const auto* rg = std::get_if<RealGenerators>(&s.generators)) {
        gens = json{{"Omega", rg->Omega}, {"kappa", rg->kappa}, {"v0", rg->v0}};
    } else {
        const auto& cg = std::get<ComplexGenerators>(s.generators);
        gens = json{{"gamma", cg.gamma}, {"v_inf", cg.v_inf}};
    }
    json levels = json::array();
    for (Complex e : s.levels) levels.push_back(complex_to_json(e));
    return json{{"branch", branch_name(s.branch)},
                {"kind", s.kind == SpectrumKind::Real ? "real" : "complex"},
                {"generators", std::move(gens)},
                {"levels", std::move(levels)}};
}

/// Fixed CSV layout shared by every trajectory output:
/// l, re_omega, im_omega, re_lambda, im_lambda, re_v, im_v, invariant_residual
inline void write_trajectory_csv(std::ostream& os, const FlowTrajectory& t) {
    os << "l,re_omega,im_omega,re_lambda,im_lambda,re_v,im_v,invariant_residual\n";
    for (const FlowSample& s : t.samples) {
        const QuadraticCoefficients& c = s.coefficients;
        os << format_double(s.l) << ',' << format_double(c.omega.real()) << ','
           << format_double(c.omega.imag()) << ',' << format_double(c.lambda.real()) << ','
           << format_double(c.lambda.imag()) << ',' << format_double(c.v.real()) << ','
           << format_double(c.v.imag()) << ',' << format_double(s.invariant_residual) << '\n';
    }
}

}  // namespace wegnerflow
