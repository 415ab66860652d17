#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "safe_nmpc/ocp.hpp"

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
    c.w_bias = Vec::Zero(2);
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
    if (variant == "rompc") {
        c.H = sym_box(4, 0.002);
        c.L = 2.0 * Mat::Identity(4, 4);
        c.epsilon = 0.3;
        c.mult.lambda_delta = 0.5;
        c.mult.lambda_delta_eps = 1.0;
    }
    return c;
}

const DesignArtifact& tmpc_art() {
    static const DesignArtifact a = run_synthesis(di_config("tmpc"));
    return a;
}
const DesignArtifact& rmpc_art() {
    static const DesignArtifact a = run_synthesis(di_config("rmpc"));
    return a;
}

ObstacleSchedule no_obstacles() { return ObstacleSchedule{}; }

} // namespace

TEST_CASE("solve_ocp: start on a rest reference gives zero cost") {
    const DesignArtifact& a = tmpc_art();
    const SystemModel m = a.model();
    const auto ref = line_reference(m, vec({1.0, -0.5}), vec({0.0, 0.0}), 10.0, 0.1);
    const OcpProblem p = build_ocp(a, ref, no_obstacles(), ref.at(0).x, 10, 0.2, 0.0, 2);
    const OcpSolution s = solve_ocp(p);
    CHECK(s.status == OcpStatus::Optimal);
    CHECK(s.objective <= 1e-8);
    for (int k = 0; k <= p.N; ++k)
        CHECK((s.z[k] - p.xr[k]).norm() <= 1e-6);
}

TEST_CASE("solve_ocp: linear double integrator matches the discrete LQ oracle") {
    DesignArtifact a = tmpc_art();
    a.alpha = 1e3;  // terminal set inactive
    const SystemModel m = a.model();
    const auto ref = line_reference(m, vec({0.0, 0.0}), vec({0.0, 0.0}), 10.0, 0.1);
    const int N = 10;
    const double Ts = 0.2;
    const Vec x0 = vec({0.3, -0.2, 0.1, 0.0});
    const OcpProblem p = build_ocp(a, ref, no_obstacles(), x0, N, Ts, 0.0, 2);
    const OcpSolution s = solve_ocp(p);
    INFO("kkt ", s.kkt, " iters ", s.iterations, " defect ", s.margins.defect);
    REQUIRE(s.status == OcpStatus::Optimal);
    // Riccati recursion on the exact RK4 map with the trapezoidal weights.
    Mat Ad, Bd;
    integrate_step_sens(m, Vec::Zero(4), Vec::Zero(2), Vec::Zero(2), Ts, 2, Ad, Bd);
    std::vector<Mat> K(N);
    Mat S = 0.5 * Ts * a.Q + a.P;
    for (int k = N - 1; k >= 0; --k) {
        const Mat Rk = Ts * a.R;
        K[k] = -(Rk + Bd.transpose() * S * Bd).ldlt().solve(Bd.transpose() * S * Ad);
        const Mat Qk = (k == 0 ? 0.5 : 1.0) * Ts * a.Q;
        S = Qk + Ad.transpose() * S * Ad + Ad.transpose() * S * Bd * K[k];
        S = 0.5 * (S + S.transpose());
    }
    Vec x = x0;
    for (int k = 0; k < N; ++k) {
        const Vec u = K[k] * x;
        CHECK((s.v[k] - u).norm() <= 1e-6);
        CHECK((s.z[k] - x).norm() <= 1e-6);
        x = Ad * x + Bd * u;
    }
    CHECK((s.z[N] - x).norm() <= 1e-6);
    CHECK(std::abs(s.objective - ocp_objective(p, s.z, s.v)) <= 1e-9);

    SUBCASE("warm start at the optimum converges immediately") {
        const OcpSolution w = solve_ocp(p, &s);
        CHECK(w.status == OcpStatus::Optimal);
        CHECK(w.iterations <= 2);
    }
}

TEST_CASE("build_ocp tightening per variant") {
    const DesignArtifact& t = tmpc_art();
    const SystemModel m = t.model();
    const auto ref = line_reference(m, vec({0, 0}), vec({0.2, 0}), 20.0, 0.1);
    const Vec x0 = ref.at(0).x;
    const OcpProblem pt = build_ocp(t, ref, no_obstacles(), x0, 8, 0.2, 0.0);
    const Polytope raw = t.rows();
    CHECK((pt.sys[0].l - raw.l).norm() == 0.0);
    CHECK((pt.sys[0].L - raw.L).norm() == 0.0);

    const DesignArtifact& r = rmpc_art();
    const OcpProblem pr = build_ocp(r, ref, no_obstacles(), x0, 8, 0.2, 0.0);
    for (int k = 0; k <= 8; ++k) {
        const double s = (1.0 - std::exp(-r.rho * k * 0.2)) * r.wbar / r.rho;
        for (int j = 0; j < raw.rows(); ++j)
            CHECK(pr.sys[k].l(j) == raw.l(j) - r.c_s(j) * s);
    }
    DesignArtifact o = r;
    o.variant = "rompc";
    o.epsilon = 0.05;
    o.c_s_o = o.c_s;
    o.c_s_o.head(4).setZero();
    o.alpha = r.wbar / r.rho + o.epsilon + 0.1;
    const OcpProblem po = build_ocp(o, ref, no_obstacles(), x0, 8, 0.2, 0.0);
    for (int k = 0; k <= 8; ++k) {
        const double s = po.tube.s[k];
        for (int j = 0; j < 4; ++j)
            CHECK(po.sys[k].l(j) == raw.l(j) - o.c_s(j) * s);
        for (int j = 4; j < raw.rows(); ++j)
            CHECK(po.sys[k].l(j) == raw.l(j) - o.c_s(j) * s - o.c_s_o(j) * o.epsilon);
    }
    DesignArtifact bad = r;
    bad.c_s *= 1e3;
    CHECK_THROWS_AS(build_ocp(bad, ref, no_obstacles(), x0, 8, 0.2, 0.0), ConfigError);
}

TEST_CASE("candidates: tracking descent, robust shift and disturbed re-anchoring") {
    const DesignArtifact& t = tmpc_art();
    const SystemModel m = t.model();
    const auto ref = line_reference(m, vec({0, 0}), vec({0.3, 0.1}), 30.0, 0.05);
    const int N = 10;
    const double Ts = 0.2;
    const Vec x0 = ref.at(0).x + vec({0.2, -0.1, 0.0, 0.05});
    const OcpProblem p0 = build_ocp(t, ref, no_obstacles(), x0, N, Ts, 0.0, 2);
    const OcpSolution s0 = solve_ocp(p0);
    REQUIRE(s0.status == OcpStatus::Optimal);
    const Vec x1 = integrate_step(m, x0, s0.v[0], m.w_bias, Ts, 2);
    const OcpProblem p1 = build_ocp(t, ref, no_obstacles(), x1, N, Ts, Ts, 2);
    const OcpSolution c = make_candidate(s0, t, p1, x1);
    CHECK(c.margins.feasible(1e-6));
    CHECK(c.objective <= s0.objective - interval_cost(p0, s0.z, s0.v, 0) + 1e-6);

    const DesignArtifact& r = rmpc_art();
    const OcpProblem q0 = build_ocp(r, ref, no_obstacles(), x0, N, Ts, 0.0, 2);
    const OcpSolution r0 = solve_ocp(q0);
    REQUIRE(r0.status == OcpStatus::Optimal);
    // zero realized disturbance: the new state is z*_1 and the candidate is the pure shift
    const OcpProblem q1 = build_ocp(r, ref, no_obstacles(), r0.z[1], N, Ts, Ts, 2);
    const OcpSolution rc = make_candidate(r0, r, q1, r0.z[1]);
    for (int k = 0; k < N; ++k)
        CHECK((rc.z[k] - r0.z[k + 1]).norm() <= 1e-7);
    CHECK(rc.margins.feasible(1e-6));
    // vertex disturbance over one interval under the robust feedback
    Vec x = x0;
    const Vec wv = m.w_bias + vec({0.05, -0.05});
    const int fine = 20;
    for (int i = 0; i < fine; ++i) {
        const double tau = Ts * i / fine;
        // nominal node trajectory inside the interval
        const Vec zt = i == 0 ? Vec(r0.z[0]) : integrate_step(m, r0.z[0], r0.v[0], m.w_bias, tau, 4);
        const Vec u = feedback_kappa(r, x, zt, r0.v[0]);
        x = integrate_step(m, x, u, wv, Ts / fine, 1);
    }
    const OcpProblem q1d = build_ocp(r, ref, no_obstacles(), x, N, Ts, Ts, 2);
    const OcpSolution rd = make_candidate(r0, r, q1d, x);
    CHECK(rd.margins.sys >= -1e-6);
    CHECK(rd.margins.terminal >= -1e-6);
    CHECK(rd.margins.initial == 0.0);
}

TEST_CASE("evaluate_feasibility flags a perturbed solution") {
    const DesignArtifact& t = tmpc_art();
    const SystemModel m = t.model();
    const auto ref = line_reference(m, vec({0, 0}), vec({0.0, 0.0}), 10.0, 0.1);
    const OcpProblem p = build_ocp(t, ref, no_obstacles(), vec({0.2, 0.1, 0, 0}), 6, 0.2, 0.0, 2);
    OcpSolution s = solve_ocp(p);
    REQUIRE(s.status == OcpStatus::Optimal);
    CHECK(s.margins.sys > 0);
    CHECK(s.margins.defect <= 1e-7);
    s.v[2](0) = 2.5;
    const Margins mg = evaluate_feasibility(s, p);
    CHECK(mg.sys < 0);
    CHECK(mg.defect > 1e-3);
}

TEST_CASE("solve_ocp reports infeasibility with binding rows") {
    const DesignArtifact& t = tmpc_art();
    const SystemModel m = t.model();
    const auto ref = line_reference(m, vec({0, 0}), vec({0.0, 0.0}), 10.0, 0.1);
    // start far outside the reachable terminal set within the horizon
    const OcpProblem p = build_ocp(t, ref, no_obstacles(), vec({4.5, 4.5, 1.4, 1.4}), 3, 0.2, 0.0, 2);
    const OcpSolution s = solve_ocp(p);
    CHECK(s.status == OcpStatus::Infeasible);
    CHECK_FALSE(s.binding.empty());
}

TEST_CASE("obstacle corridor rows are enforced") {
    const DesignArtifact& t = tmpc_art();
    const SystemModel m = t.model();
    const auto ref = line_reference(m, vec({0, 0}), vec({0.0, 0.0}), 10.0, 0.1);
    std::vector<Vec> path(7, vec({0.0, 0.0}));
    const ObstacleSchedule obs = build_corridor(path, 0.25, 6);
    const OcpProblem p = build_ocp(t, ref, obs, vec({0.2, 0.0, 0.0, 0.8}), 6, 0.2, 0.0, 2);
    const OcpSolution s = solve_ocp(p);
    REQUIRE(s.status == OcpStatus::Optimal);
    CHECK(s.margins.obs >= -1e-7);
    double min_margin = INFINITY;
    for (int k = 0; k <= 6; ++k)
        min_margin = std::min(min_margin, obs.for_node(k).min_margin(m.M * s.z[k]));
    CHECK(min_margin <= 1e-6);  // the corridor is active
}
