#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "wegnerflow/wegnerflow.hpp"

using namespace wegnerflow;
using nlohmann::json;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

struct RunResult {
    int code = -1;
    std::string output;  // stdout and stderr merged
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
    std::string cmd;
    if (!env.empty()) cmd += "env " + env + " ";
    cmd += std::string(WEGNERFLOW_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    RunResult r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p);
    REQUIRE(os.good());
    os << text;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t nl = s.find('\n', pos);
        if (nl == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return out;
}

}  // namespace

TEST_CASE("cli help and usage errors") {
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("classify --bogus 1").code == 2);
    CHECK(run_cli("no-such-command").code == 2);
    CHECK(run_cli("classify --lambda 0.25 --v 0").code == 2);  // omega missing
}

TEST_CASE("cli classify prints the regime name") {
    auto r = run_cli("classify --omega 1 --lambda 0.25 --v 0");
    CHECK(r.code == 0);
    CHECK(r.output == "Bounded\n");
    CHECK(run_cli("classify --omega 1 --lambda 1 --v 0").output == "Unbounded\n");
    CHECK(run_cli("classify --omega 1 --lambda 0.5 --v 0").output == "Critical\n");
    CHECK(run_cli("classify --omega 1 --lambda 0 --v 3").output == "Free\n");
    CHECK(run_cli("classify --omega 0 --lambda 0 --v 1").output == "Degenerate\n");

    const auto j = json::parse(run_cli("classify --omega 1 --lambda 0.25 --v 0 --json").output);
    CHECK(j.at("regime") == "Bounded");
    CHECK(j.at("invariant").at("re").get<double>() == 0.75);
}

TEST_CASE("cli flow emits the fixed CSV layout") {
    const auto r = run_cli("flow --omega 1 --lambda 0.25 --v 0");
    REQUIRE(r.code == 0);
    const auto rows = lines_of(r.output);
    REQUIRE(rows.size() > 10);
    CHECK(rows[0] == "l,re_omega,im_omega,re_lambda,im_lambda,re_v,im_v,invariant_residual");
    CHECK(rows[1].rfind("0,1,0,0.25,0,0,0,", 0) == 0);

    // Byte-identical across reruns.
    CHECK(run_cli("flow --omega 1 --lambda 0.25 --v 0").output == r.output);
}

TEST_CASE("cli flow JSON document equals the in-process trajectory") {
    const auto r = run_cli("flow --omega 1 --lambda 0.25 --v 0 --json");
    REQUIRE(r.code == 0);
    const json j = json::parse(r.output);
    CHECK(j.at("regime") == "Bounded");
    CHECK(j.at("terminal").at("type") == "fixed_point");
    CHECK(j.at("config").at("rtol").get<double>() == 1e-10);
    CHECK(j.at("config").at("samples_per_decade").get<int>() == 16);

    const FlowTrajectory back = trajectory_from_json(j);
    CHECK(back == integrate_unitary({1.0, 0.25, 0.0}));
}

TEST_CASE("cli flow reports non-convergence with exit 3") {
    const auto out = temp_file("wf_cli_critical.json");
    std::filesystem::remove(out);
    const auto r = run_cli("flow --omega 1 --lambda 0.5 --v 2 --json --output " + out.string());
    CHECK(r.code == 3);
    CHECK(r.output.find("algebraic convergence at separatrix") != std::string::npos);
    std::ifstream is(out);
    REQUIRE(is.good());
    const json j = json::parse(is);
    CHECK(j.at("terminal").at("type") == "divergence");
    CHECK(j.at("terminal").at("reason") == "algebraic convergence at separatrix");
    std::filesystem::remove(out);
}

TEST_CASE("cli flow --output writes the same CSV to a file") {
    const auto out = temp_file("wf_cli_flow.csv");
    std::filesystem::remove(out);
    const auto direct = run_cli("flow --omega 1 --lambda 0.25 --v 0");
    const auto r = run_cli("flow --omega 1 --lambda 0.25 --v 0 --output " + out.string());
    REQUIRE(r.code == 0);
    CHECK(r.output.empty());
    std::ifstream is(out);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    CHECK(ss.str() == direct.output);
    std::filesystem::remove(out);
}

TEST_CASE("cli config file fills gaps and explicit flags win") {
    const auto cfgp = temp_file("wf_cli_cfg.json");
    write_file(cfgp, "{\"rtol\": 1e-6, \"l_max\": 30.0}\n");
    const auto r = run_cli("flow --omega 1 --lambda 0.25 --v 0 --json --rtol 1e-8 --config " +
                           cfgp.string());
    REQUIRE(r.code == 0);
    const json j = json::parse(r.output);
    CHECK(j.at("config").at("rtol").get<double>() == 1e-8);     // flag beats file
    CHECK(j.at("config").at("l_max").get<double>() == 30.0);    // file beats default
    CHECK(j.at("config").at("atol").get<double>() == 1e-12);    // untouched default
    std::filesystem::remove(cfgp);

    CHECK(run_cli("flow --omega 1 --lambda 0.25 --v 0 --config /no/such/file.json").code == 2);
    const auto badp = temp_file("wf_cli_bad.json");
    write_file(badp, "{\"rtol\": 1e-6,");
    CHECK(run_cli("flow --omega 1 --lambda 0.25 --v 0 --config " + badp.string()).code == 2);
    write_file(badp, "{\"rtoll\": 1e-6}");
    const auto unknown = run_cli("flow --omega 1 --lambda 0.25 --v 0 --config " + badp.string());
    CHECK(unknown.code == 2);
    CHECK(unknown.output.find("unknown config key") != std::string::npos);
    std::filesystem::remove(badp);
}

TEST_CASE("cli spectrum prints ladders for both kinds") {
    const auto r = run_cli("spectrum --omega 1 --lambda 0.25 --v 0 --n-max 2");
    REQUIRE(r.code == 0);
    const auto rows = lines_of(r.output);
    REQUIRE(rows.size() == 3);
    CHECK_THAT(std::strtod(rows[0].c_str(), nullptr), WithinAbs(-0.0669872981077807, 1e-12));
    CHECK_THAT(std::strtod(rows[1].c_str(), nullptr), WithinAbs(0.7990381056766579, 1e-12));
    CHECK_THAT(std::strtod(rows[2].c_str(), nullptr), WithinAbs(1.6650635094610965, 1e-12));

    const auto rc = run_cli("spectrum --omega 1 --lambda 1 --v 0 --n-max 1 --branch=+");
    REQUIRE(rc.code == 0);
    const auto crows = lines_of(rc.output);
    REQUIRE(crows.size() == 2);
    const Complex e0 = detail::parse_matrix_entry(crows[0]);
    const Complex e1 = detail::parse_matrix_entry(crows[1]);
    CHECK_THAT(e0.real(), WithinAbs(-0.5, 1e-14));
    CHECK_THAT(e0.imag(), WithinRel(0.8660254037844386, 1e-14));
    CHECK_THAT(e1.imag(), WithinRel(2.598076211353316, 1e-14));

    const auto rm = run_cli("spectrum --omega 1 --lambda 1 --v 0 --n-max 1 --branch=-");
    const Complex m0 = detail::parse_matrix_entry(lines_of(rm.output)[0]);
    CHECK(m0.imag() == -e0.imag());

    const auto jr = json::parse(
        run_cli("spectrum --omega 1 --lambda 1 --v 0 --n-max 1 --branch=+ --json").output);
    CHECK(jr.at("kind") == "complex");
    CHECK(jr.at("branch") == "+");
    CHECK_THAT(jr.at("generators").at("gamma").get<double>(),
               WithinRel(1.7320508075688772, 1e-15));

    // Unbounded input without a branch choice is a usage error.
    CHECK(run_cli("spectrum --omega 1 --lambda 1 --v 0 --n-max 1").code == 2);
    // A complex branch on a bounded surface is one too.
    CHECK(run_cli("spectrum --omega 1 --lambda 0.25 --v 0 --n-max 1 --branch=+").code == 2);
}

TEST_CASE("cli find-unstable pins the conjugate pair") {
    const auto r = run_cli("find-unstable --omega 1 --lambda 1 --v 0");
    REQUIRE(r.code == 0);
    CHECK(r.output ==
          "+ 0+1.7320508075688772J 0 -0.5+0.8660254037844386J\n"
          "- 0-1.7320508075688772J 0 -0.5-0.8660254037844386J\n");
    CHECK(run_cli("find-unstable --omega 1 --lambda 1 --v 0").output == r.output);

    const json j = json::parse(run_cli("find-unstable --omega 1 --lambda 1 --v 0 --json").output);
    CHECK(j.at("plus").at("branch") == "+");
    CHECK(j.at("plus").at("stability") == "Unstable");
    CHECK(j.at("plus").at("lambda").at("re").get<double>() == 0.0);
    CHECK(j.at("plus").at("lambda").at("im").get<double>() == 0.0);
    CHECK_THAT(j.at("plus").at("omega").at("im").get<double>(),
               WithinRel(1.7320508075688772, 1e-12));
    CHECK_THAT(j.at("minus").at("omega").at("im").get<double>(),
               WithinRel(-1.7320508075688772, 1e-12));
    CHECK_THAT(j.at("attractor").at("lambda").at("re").get<double>(),
               WithinRel(0.8660254037844386, 1e-12));

    const auto bad = run_cli("find-unstable --omega 1 --lambda 0.25 --v 0");
    CHECK(bad.code == 2);
    CHECK(bad.output.find("no unstable fixed points on this flow surface") != std::string::npos);
    const auto real_shift = run_cli("find-unstable --omega 1 --lambda 1 --v 0 --alpha 0");
    CHECK(real_shift.code == 2);
    CHECK(real_shift.output.find("real shift recovers H^(0), backward flow diverges") !=
          std::string::npos);
}

TEST_CASE("cli portrait scan crosses the separatrix without failing") {
    const std::string args =
        "portrait --omega 1 --v 0 --lambda-min 0.1 --lambda-max 0.9 --count 5 --json";
    const auto r = run_cli(args);
    REQUIRE(r.code == 0);
    const json j = json::parse(r.output);
    CHECK(j.at("mode") == "scan");
    REQUIRE(j.at("trajectories").size() == 5);
    const std::vector<std::string> expected{"Bounded", "Bounded", "Critical", "Unbounded",
                                            "Unbounded"};
    for (std::size_t k = 0; k < 5; ++k) {
        const json& e = j.at("trajectories")[k];
        CHECK(e.at("regime") == expected[k]);
        CHECK_THAT(e.at("lambda0").get<double>(), WithinAbs(0.1 + 0.2 * double(k), 1e-15));
    }
    CHECK(j.at("trajectories")[2].at("terminal").at("reason") ==
          "algebraic convergence at separatrix");

    // The worker pool size must not leak into the output.
    const auto one = run_cli(args, "WEGNERFLOW_THREADS=1");
    const auto many = run_cli(args, "WEGNERFLOW_THREADS=3");
    CHECK(one.code == 0);
    CHECK(one.output == many.output);
    CHECK(one.output == r.output);
}

TEST_CASE("cli portrait generalized emits the three labeled branches") {
    const auto r = run_cli("portrait --omega 1 --lambda 1 --v 0 --generalized --json");
    REQUIRE(r.code == 0);
    const json j = json::parse(r.output);
    CHECK(j.at("mode") == "generalized");
    REQUIRE(j.at("trajectories").size() == 3);
    CHECK(j.at("trajectories")[0].at("branch") == "0");
    CHECK(j.at("trajectories")[1].at("branch") == "+");
    CHECK(j.at("trajectories")[2].at("branch") == "-");
    CHECK_THAT(j.at("unstable").at("plus").at("omega").at("im").get<double>(),
               WithinRel(1.7320508075688772, 1e-12));
    CHECK(j.at("trajectories")[1].at("terminal").at("stability") == "Unstable");

    // Scan parameters and the generalized switch are mutually exclusive needs.
    CHECK(run_cli("portrait --omega 1 --v 0 --generalized --json").code == 2);
    CHECK(run_cli("portrait --omega 1 --v 0 --json").code == 2);
}

TEST_CASE("cli fock-oracle reproduces the closed-form ladder") {
    const auto r = run_cli("fock-oracle --omega 1 --lambda 0.25 --v 0 --n-cut 40 --levels 3");
    REQUIRE(r.code == 0);
    const auto rows = lines_of(r.output);
    REQUIRE(rows.size() == 3);
    CHECK_THAT(std::strtod(rows[0].c_str(), nullptr), WithinAbs(-0.0669872981077807, 1e-6));
    CHECK_THAT(std::strtod(rows[1].c_str(), nullptr), WithinAbs(0.7990381056766579, 1e-6));
    CHECK_THAT(std::strtod(rows[2].c_str(), nullptr), WithinAbs(1.6650635094610965, 1e-6));

    const auto re = run_cli(
        "fock-oracle --omega 1 --lambda 0.25 --v 0 --n-cut 40 --levels 2 --parity even");
    const auto erows = lines_of(re.output);
    REQUIRE(erows.size() == 2);
    CHECK_THAT(std::strtod(erows[0].c_str(), nullptr), WithinAbs(-0.0669872981077807, 1e-6));
    CHECK_THAT(std::strtod(erows[1].c_str(), nullptr), WithinAbs(1.6650635094610965, 1e-6));

    const json j = json::parse(
        run_cli("fock-oracle --omega 1 --lambda 0.25 --v 0 --n-cut 40 --levels 3 --json").output);
    CHECK(j.at("dim").get<int>() == 41);
    REQUIRE(j.at("levels").size() == 3);

    CHECK(run_cli("fock-oracle --omega 1 --lambda 0.25 --v 0 --n-cut 1").code == 2);
}

TEST_CASE("cli matrix-flow runs from a matrix file") {
    const auto mp = temp_file("wf_cli_matrix.txt");
    write_file(mp, "2\n1 0.1\n0.1 0\n");
    const auto r = run_cli("matrix-flow --input " + mp.string());
    REQUIRE(r.code == 0);
    const auto rows = lines_of(r.output);
    REQUIRE(rows.size() == 2);
    CHECK_THAT(std::strtod(rows[0].c_str(), nullptr), WithinAbs(1.0099019513592785, 1e-6));
    CHECK_THAT(std::strtod(rows[1].c_str(), nullptr), WithinAbs(-0.0099019513592785, 1e-6));

    const json j = json::parse(run_cli("matrix-flow --input " + mp.string() + " --json").output);
    CHECK(j.at("converged").get<bool>());
    REQUIRE(j.at("terminal").size() == 2);
    CHECK(j.at("diagnostics").at("final_offdiagonal").get<double>() < 1e-9);
    CHECK(j.at("diagnostics").at("spectrum_drift").get<double>() < 1e-7);
    CHECK(j.at("config").at("rtol").get<double>() == 1e-10);
    std::filesystem::remove(mp);

    const auto sp = temp_file("wf_cli_stall.txt");
    write_file(sp, "2\n0 1\n1 0\n");
    const auto stall = run_cli("matrix-flow --input " + sp.string());
    CHECK(stall.code == 3);
    CHECK(stall.output.find("degenerate stall") != std::string::npos);
    std::filesystem::remove(sp);

    CHECK(run_cli("matrix-flow --input /no/such/matrix.txt").code == 2);
    const auto bp = temp_file("wf_cli_badmat.txt");
    write_file(bp, "2\n1 x\n0 0\n");
    const auto bad = run_cli("matrix-flow --input " + bp.string());
    CHECK(bad.code == 2);
    CHECK(bad.output.find("bad matrix entry") != std::string::npos);
    std::filesystem::remove(bp);
}
