#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "safe_nmpc/verify.hpp"

using namespace safe_nmpc;

namespace {

Vec vec(std::initializer_list<double> v) {
    Vec r(v.size());
    int i = 0;
    for (double x : v)
        r(i++) = x;
    return r;
}

BoxSet sym_box(int n, double h) { return BoxSet(Vec::Constant(n, -h), Vec::Constant(n, h)); }

SynthConfig di_config(const std::string& variant) {
    SynthConfig c;
    c.variant = variant;
    c.model = "double_integrator_2d";
    c.w_bias = vec({0.01, -0.01});
    c.u_box = sym_box(2, 2.0);
    Vec xl(4), xu(4);
    xl << -5, -5, -1.5, -1.5;
    xu << 5, 5, 1.5, 1.5;
    c.x_box = BoxSet(xl, xu);
    c.W = sym_box(2, 0.05);
    c.Q = Mat::Identity(4, 4);
    c.R = Mat::Identity(2, 2);
    c.rho = 0.5;
    c.epsilon_reg = 0.2;
    c.alpha_mode = variant == "tmpc" ? "lp" : "min";
    c.alpha_margin = variant == "tmpc" ? 0.0 : 0.05;
    return c;
}

const DesignArtifact& art(const std::string& variant) {
    static const DesignArtifact t = run_synthesis(di_config("tmpc"));
    static const DesignArtifact r = run_synthesis(di_config("rmpc"));
    return variant == "tmpc" ? t : r;
}

Scenario scenario(const std::string& variant) {
    Scenario sc;
    sc.artifact = art(variant);
    sc.reference.type = "line";
    sc.reference.p0 = vec({-1.0, 0.0});
    sc.reference.vel = vec({0.3, 0.1});
    sc.N = 10;
    sc.Ts = 0.2;
    sc.duration = 2.0;
    sc.x0 = vec({-0.8, 0.2, 0.0, 0.0});
    sc.obstacles.mode = "corridor";
    sc.obstacles.half_width = 0.6;
    return sc;
}

} // namespace

TEST_CASE("brute_force_alpha examples") {
    // scalar: P = 1, K = -1, |u| <= 1, |x| <= 2 around the origin -> alpha = 1
    Polytope rows = system_rows(sym_box(1, 1.0), sym_box(1, 2.0));
    const Vec c = vec({0.0, 0.0});
    const double lp = compute_alpha_lp(Mat::Ones(1, 1), -Mat::Ones(1, 1), {c}, rows);
    const double bf = brute_force_alpha(Mat::Ones(1, 1), -Mat::Ones(1, 1), c, rows, 1000, 1);
    CHECK(std::abs(bf - lp) <= 0.02 * lp);
    Polytope none;
    none.L = Mat(0, 2);
    none.l = Vec(0);
    CHECK(std::isinf(brute_force_alpha(Mat::Ones(1, 1), -Mat::Ones(1, 1), c, none, 100, 1)));
    const DesignArtifact& t = art("tmpc");
    Vec center = Vec::Zero(6);
    const double a1 = brute_force_alpha(t.P, t.K, center, t.rows(), 20000, 3);
    const double a4 = brute_force_alpha(4.0 * t.P, t.K, center, t.rows(), 20000, 3);
    CHECK(a4 == doctest::Approx(2.0 * a1).epsilon(1e-9));
}

TEST_CASE("alpha LP agrees with the sampling oracle on the double integrator") {
    const CheckResult r = verify_alpha(art("tmpc"), 100000, 11);
    INFO(r.to_json().dump());
    CHECK(r.passed);
    CHECK(r.details["alpha_sampled"].get<double>() >= r.details["alpha_lp"].get<double>() * (1 - 1e-9));
}

TEST_CASE("terminal invariance and its negative test") {
    const ReferenceTrajectory ref =
        line_reference(art("rmpc").model(), vec({-1.0, 0.0}), vec({0.3, 0.1}), 5.0, 0.05);
    DesignArtifact r = art("rmpc");
    r.alpha = r.wbar / r.rho;
    const CheckResult ok = verify_terminal_invariance(r, ref, 0.2, 100, 5);
    INFO(ok.to_json().dump());
    CHECK(ok.passed);
    r.alpha = 0.5 * r.wbar / r.rho;
    const CheckResult bad = verify_terminal_invariance(r, ref, 0.2, 100, 5);
    CHECK_FALSE(bad.passed);
    CHECK(bad.violations >= 1);
    const CheckResult tm = verify_terminal_invariance(art("tmpc"), ref, 0.2, 100, 5);
    INFO(tm.to_json().dump());
    CHECK(tm.passed);
}

TEST_CASE("lipschitz and contraction sampling") {
    const DesignArtifact& r = art("rmpc");
    const CheckResult ok = verify_lipschitz_and_contraction(r, 2000, 9);
    INFO(ok.to_json().dump());
    CHECK(ok.passed);
    CHECK(ok.details["contraction_ratio_excess"].get<double>() <= 1e-6);
    DesignArtifact bad = r;
    bad.c_s *= 0.5;
    CHECK_FALSE(verify_lipschitz_and_contraction(bad, 2000, 9).passed);
    DesignArtifact slow = r;
    slow.rho = 3.0 * r.rho;  // claims a faster contraction than certified
    CHECK_FALSE(verify_lipschitz_and_contraction(slow, 500, 9).passed);
}

TEST_CASE("trace verifiers on closed-loop runs") {
    Scenario sc = scenario("tmpc");
    sc.duration = 4.0;
    const SimTrace t = run_closed_loop(sc);
    CHECK(verify_descent(t, art("tmpc")).passed);
    CHECK(verify_recursive_feasibility(t, 1e-9).passed);
    CHECK(verify_constraints(t).passed);

    Scenario rs = scenario("rmpc");
    rs.disturbance = DisturbanceMode::VertexHold;
    rs.seed = 4;
    const SimTrace r = run_closed_loop(rs);
    CHECK(verify_recursive_feasibility(r).passed);
    CHECK(verify_tube_containment(r, art("rmpc")).passed);
    CHECK(verify_constraints(r).passed);
    CHECK(verify_descent(r, art("rmpc")).passed);

    // round trip through the steps JSON
    const SimTrace back = trace_from_steps_json(trace_steps_json(r));
    CHECK(back.steps.size() == r.steps.size());
    CHECK(verify_recursive_feasibility(back).worst == verify_recursive_feasibility(r).worst);

    // design that understates the disturbance bound: the tube is too small and the run exposes it
    Scenario hs = rs;
    hs.artifact.wbar *= 0.5;
    hs.disturbance = DisturbanceMode::WorstCaseProbe;
    const SimTrace h = run_closed_loop(hs);
    CHECK_FALSE(verify_tube_containment(h, hs.artifact).passed);
}

TEST_CASE("robust tail cost grows with the disturbance scale") {
    std::vector<double> tails;
    for (double scale : {0.25, 0.5, 1.0}) {
        Scenario sc = scenario("rmpc");
        sc.x0 = vec({-1.0, 0.0, 0.3, 0.1});
        sc.disturbance = DisturbanceMode::Uniform;
        sc.disturbance_scale = scale;
        sc.seed = 3;
        sc.duration = 3.0;
        const SimTrace tr = run_closed_loop(sc);
        const CheckResult d = verify_descent(tr, sc.artifact);
        REQUIRE(d.passed);
        tails.push_back(d.worst);
    }
    CHECK(tails[0] <= tails[1]);
    CHECK(tails[1] <= tails[2]);
}

TEST_CASE("report json") {
    CheckResult a;
    a.name = "x";
    a.passed = true;
    const json j = report_to_json({a});
    CHECK(j["schema"] == 1);
    CHECK(j["passed"] == true);
    CHECK(report_to_json({})["passed"] == false);
}
