#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safe_nmpc/conic.hpp"

using namespace safe_nmpc;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }

// Re-check every block of a solution independently.
void recheck(const SdpProblem& p, const SdpSolution& s) {
    double worst = -1e300;
    for (const LmiBlock& b : p.lmis) {
        const Mat S = b.eval(s.x);
        const auto c = check_lmi(S, b.sense, 0.0);
        worst = std::max(worst, c.margin);
    }
    CHECK(std::abs(worst - s.residual) <= 1e-10);
}

} // namespace

TEST_CASE("check_lmi examples") {
    auto z = check_lmi(Mat::Zero(2, 2), Sense::NSD, 0.0);
    CHECK(z.feasible);
    CHECK(z.margin == doctest::Approx(0.0));
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = -1;
    d(1, 1) = -2;
    auto n = check_lmi(d, Sense::NSD, 0.0);
    CHECK(n.feasible);
    CHECK(n.margin == doctest::Approx(-1.0));
    Mat o(2, 2);
    o << 0, 1, 1, 0;
    auto b = check_lmi(o, Sense::NSD, 0.0);
    CHECK_FALSE(b.feasible);
    CHECK(b.margin == doctest::Approx(1.0));
    Mat ns(2, 2);
    ns << 0, 1, 0, 0;
    CHECK_THROWS_AS(check_lmi(ns, Sense::NSD, 0.0), ConfigError);
}

TEST_CASE("decision layout flatten round trip") {
    DecisionLayout L;
    L.add_sym("X", 3);
    L.add_mat("Y", 2, 3);
    L.add_scalar("c");
    CHECK(L.size() == 6 + 6 + 1);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1, 1);
    Mat X(3, 3), Y(2, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            X(i, j) = U(rng);
    X = (X + X.transpose()).eval();
    for (int i = 0; i < 6; ++i)
        Y(i / 3, i % 3) = U(rng);
    std::map<std::string, Mat> v{{"X", X}, {"Y", Y}, {"c", m1(0.25)}};
    const Vec x = L.flatten(v);
    auto back = L.unflatten(x);
    CHECK((back["X"] - X).norm() == 0.0);
    CHECK((back["Y"] - Y).norm() == 0.0);
    CHECK(back["c"](0, 0) == 0.25);
    CHECK((L.var("X").eval(x) - X).norm() == 0.0);
    CHECK((L.var("Y").eval(x) - Y).norm() == 0.0);
}

TEST_CASE("sdp: minimize trace P subject to P >= I") {
    SdpProblem p;
    p.layout.add_sym("P", 1);
    p.add_lmi(p.layout.var("P") - AffineMat::constant(m1(1.0)), Sense::PSD, "P>=I");
    p.minimize_trace("P");
    auto s = solve_sdp(p, 1e-7, 400);
    REQUIRE(s.status == SdpStatus::Optimal);
    CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-6));
    recheck(p, s);
}

TEST_CASE("sdp: maxdet with X <= 2I") {
    SdpProblem p;
    p.layout.add_sym("X", 1);
    const AffineMat X = p.layout.var("X");
    p.add_lmi(X - AffineMat::constant(m1(2.0)), Sense::NSD, "X<=2");
    p.add_lmi(X, Sense::PSD, "X>=0");
    p.minimize_logdet_neg("X");
    auto s = solve_sdp(p, 1e-7, 400);
    REQUIRE(s.status == SdpStatus::Optimal);
    CHECK(s.x(0) == doctest::Approx(2.0).epsilon(1e-6));
    recheck(p, s);
}

TEST_CASE("sdp: scalar Lyapunov") {
    // a P + P a + q <= 0, a=-1, q=2 -> P=1
    SdpProblem p;
    p.layout.add_sym("P", 1);
    p.add_lmi((-1.0 * p.layout.var("P")).sym() + m1(2.0), Sense::NSD, "lyap");
    p.minimize_trace("P");
    auto s = solve_sdp(p, 1e-7, 400);
    REQUIRE(s.status == SdpStatus::Optimal);
    CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-6));
    recheck(p, s);
}

TEST_CASE("sdp: 2x2 Lyapunov family against closed form") {
    // A stable, minimize trace P s.t. A'P + PA + Q <= 0 -> P solves the Lyapunov equation.
    Mat A(2, 2);
    A << -1.0, 0.5, 0.0, -2.0;
    Mat Q = Mat::Identity(2, 2);
    SdpProblem p;
    p.layout.add_sym("P", 2);
    const AffineMat P = p.layout.var("P");
    p.add_lmi((A.transpose() * P).sym() + Q, Sense::NSD, "lyap");
    p.minimize_trace("P");
    auto s = solve_sdp(p, 1e-7, 600);
    REQUIRE(s.status == SdpStatus::Optimal);
    const Mat Ps = p.layout.value(s.x, "P");
    // closed form: vec(A'P + PA) = (I (x) A' + A' (x) I) vec(P) = -vec(Q)
    auto kron = [](const Mat& X, const Mat& Y) {
        Mat K(X.rows() * Y.rows(), X.cols() * Y.cols());
        for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < X.cols(); ++j)
                K.block(i * Y.rows(), j * Y.cols(), Y.rows(), Y.cols()) = X(i, j) * Y;
        return K;
    };
    const Mat I2 = Mat::Identity(2, 2);
    const Mat Kr = kron(I2, A.transpose()) + kron(A.transpose(), I2);
    Vec q(4);
    q << Q(0, 0), Q(1, 0), Q(0, 1), Q(1, 1);
    const Vec pv = Kr.fullPivLu().solve(-q);
    Mat Pc(2, 2);
    Pc << pv(0), pv(2), pv(1), pv(3);
    CHECK((Ps - Pc).norm() <= 1e-6 * Pc.norm());
    recheck(p, s);
}

TEST_CASE("sdp: infeasible problem reported by status") {
    SdpProblem p;
    p.layout.add_sym("X", 1);
    const AffineMat X = p.layout.var("X");
    p.add_lmi(X - m1(1.0), Sense::PSD, "X>=1");
    p.add_lmi(X + m1(-0.5), Sense::NSD, "X<=0.5");
    auto s = solve_sdp(p, 1e-7, 400);
    CHECK(s.status == SdpStatus::Infeasible);
    CHECK(s.residual > 1e-7);
    recheck(p, s);
}

TEST_CASE("lp examples") {
    Vec a(2), b(2);
    a << 0.5, 1.0;
    b << 1.0, 1.0;
    auto r = solve_lp_1d(a, b);
    CHECK(r.status == LpStatus::Optimal);
    CHECK(r.value == 1.0);
    CHECK(r.binding_row == 1);
    auto r2 = solve_lp_1d(Vec::Ones(1), Vec::Constant(1, 3.0));
    CHECK(r2.value == 3.0);
    auto r3 = solve_lp_1d(Vec::Constant(1, -1.0), Vec::Constant(1, 3.0));
    CHECK(r3.status == LpStatus::Unbounded);

    // 2-D simplex: max x + y s.t. x <= 1, y <= 2, x + y <= 2.5, -x <= 0
    Mat A(4, 2);
    A << 1, 0, 0, 1, 1, 1, -1, 0;
    Vec bb(4);
    bb << 1, 2, 2.5, 0;
    Vec c(2);
    c << 1, 1;
    auto s = solve_lp(c, A, bb);
    CHECK(s.status == LpStatus::Optimal);
    CHECK(s.value == doctest::Approx(2.5).epsilon(1e-12));
    // infeasible: x <= -1 and -x <= -1
    Mat A2(2, 2);
    A2 << 1, 0, -1, 0;
    Vec b2(2);
    b2 << -1, -1;
    CHECK(solve_lp(c, A2, b2).status == LpStatus::Infeasible);
    // unbounded in y
    Mat A3(1, 2);
    A3 << 1, 0;
    CHECK(solve_lp(c, A3, Vec::Ones(1)).status == LpStatus::Unbounded);
}

TEST_CASE("lp: single-variable value equals binding ratio exactly") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.1, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        Vec a(6), b(6);
        for (int j = 0; j < 6; ++j) {
            a(j) = U(rng);
            b(j) = U(rng);
        }
        auto r = solve_lp_1d(a, b);
        REQUIRE(r.status == LpStatus::Optimal);
        CHECK(r.value == b(r.binding_row) / a(r.binding_row));
        CHECK(((a * r.value - b).array() <= 1e-15).all());
    }
}

TEST_CASE("bisect_multiplier examples") {
    const double l = bisect_multiplier(0.0, 2.0, [](double v) { return v <= 1.0; }, 20);
    CHECK(std::abs(l - 1.0) <= 2e-6);
    CHECK(bisect_multiplier(0.0, 2.0, [](double) { return true; }, 20) == 2.0);
    CHECK_THROWS_AS(bisect_multiplier(0.0, 2.0, [](double) { return false; }, 20), InfeasibleError);
}

TEST_CASE("golden section finds parabola minimum") {
    const double x = golden_minimize(0.0, 3.0, [](double v) { return (v - 1.3) * (v - 1.3); }, 60);
    CHECK(x == doctest::Approx(1.3).epsilon(1e-8));
}
