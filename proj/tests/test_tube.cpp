#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safe_nmpc/tube.hpp"

using namespace safe_nmpc;

namespace {

Vec vec(std::initializer_list<double> v) {
    Vec r(v.size());
    int i = 0;
    for (double x : v)
        r(i++) = x;
    return r;
}

DesignArtifact robust_artifact() {
    DesignArtifact a;
    a.variant = "rmpc";
    a.model_name = "double_integrator_2d";
    a.u_box = BoxSet(Vec::Constant(2, -1), Vec::Constant(2, 1));
    a.x_box = BoxSet(Vec::Constant(4, -2), Vec::Constant(4, 2));
    a.Pdelta = Mat::Identity(4, 4) * 2.0;
    a.P = Mat::Identity(4, 4);
    Mat K = Mat::Zero(2, 4);
    K(0, 0) = K(1, 1) = -1.0;
    a.Kdelta = GainTable::constant(K);
    a.rho = 0.5;
    a.wbar = 0.1;
    a.alpha = 0.4;
    a.epsilon = 0.05;
    a.c_s = Vec::Constant(12, 0.5);
    a.c_s_o = Vec::Constant(12, 0.5);
    return a;
}

} // namespace

TEST_CASE("tube_size examples") {
    CHECK(tube_size(1.0, 0.5, 0.0) == 0.0);
    CHECK(tube_size(2.0, 0.5, 1e3) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(tube_size(1.0, 0.5, 1.0) == doctest::Approx(0.316060279414).epsilon(1e-11));
}

TEST_CASE("tube_size solves the tube ODE") {
    for (double rho : {0.3, 1.0, 2.5}) {
        for (int i = 0; i <= 50; ++i) {
            const double t = 5.0 / rho * i / 50.0;
            CHECK(std::abs(tube_size_rk4(rho, 0.7, t, 2000) - tube_size(rho, 0.7, t)) <= 1e-8);
        }
    }
}

TEST_CASE("tube profile is monotone and bounded") {
    const TubeProfile p = make_tube_profile(0.8, 0.3, 0.2, 40);
    for (size_t k = 1; k < p.s.size(); ++k) {
        CHECK(p.s[k] >= p.s[k - 1]);
        CHECK(p.s[k] <= p.limit() + 1e-12);
    }
}

TEST_CASE("vdelta examples and metric properties") {
    CHECK(vdelta(Mat::Identity(2, 2), vec({1, 2}), vec({1, 2})) == 0.0);
    CHECK(vdelta(Mat::Identity(2, 2), vec({3, 4}), vec({0, 0})) == 25.0);
    Mat P = Mat::Zero(2, 2);
    P.diagonal() << 2, 1;
    CHECK(vdelta(P, vec({1, 1}), vec({0, 0})) == 3.0);

    std::mt19937_64 rng(1);
    std::normal_distribution<double> N(0, 1);
    Mat G(3, 3);
    for (int i = 0; i < 9; ++i)
        G(i / 3, i % 3) = N(rng);
    const Mat Pd = G * G.transpose() + 0.1 * Mat::Identity(3, 3);
    const double lmin = min_eig(Pd), lmax = max_eig(Pd);
    auto rnd = [&] {
        Vec v(3);
        for (int i = 0; i < 3; ++i)
            v(i) = N(rng);
        return v;
    };
    for (int t = 0; t < 10000; ++t) {
        const Vec a = rnd(), b = rnd(), c = rnd();
        const double ac = std::sqrt(vdelta(Pd, a, c));
        const double ab = std::sqrt(vdelta(Pd, a, b)), bc = std::sqrt(vdelta(Pd, b, c));
        CHECK(ac <= ab + bc + 1e-12);
        const double d2 = (a - b).squaredNorm();
        const double v = vdelta(Pd, a, b);
        CHECK(v >= lmin * d2 * (1 - 1e-12));
        CHECK(v <= lmax * d2 * (1 + 1e-12));
    }
}

TEST_CASE("feedback_kappa examples") {
    DesignArtifact a = robust_artifact();
    const Vec z = vec({0.1, 0.2, 0.0, 0.0}), v = vec({0.3, -0.1});
    CHECK((feedback_kappa(a, z, z, v) - v).norm() == 0.0);
    const Vec x = vec({0.4, -0.1, 0.2, 0.0});
    CHECK((feedback_kappa(a, x, z, v) - (v + a.Kdelta.K[0] * (x - z))).norm() == 0.0);
    // table linear in x_0 on [-2, 2]: the mean gain is the gain at the segment midpoint
    GainTable t;
    t.dims = {0};
    t.axes = {{-2.0, 2.0}};
    Mat K0 = Mat::Zero(2, 4), K1 = Mat::Zero(2, 4);
    K0(0, 0) = -1.0;
    K1(0, 0) = -3.0;
    K0(1, 1) = K1(1, 1) = -1.0;
    t.K = {K0, K1};
    a.Kdelta = t;
    const Mat mid = t.eval(0.5 * (x + z));
    CHECK((feedback_kappa(a, x, z, v) - (v + mid * (x - z))).norm() <= 1e-12);
    a.variant = "tmpc";
    a.K = K0;
    CHECK((feedback_kappa(a, x, z, v) - (v + K0 * (x - z))).norm() == 0.0);
}

TEST_CASE("gauss-legendre rule integrates degree 15 exactly") {
    double sum = 0, wsum = 0;
    for (const auto& [s, w] : gauss_legendre_unit()) {
        sum += w * std::pow(s, 15);
        wsum += w;
    }
    CHECK(std::abs(wsum - 1.0) <= 1e-14);
    CHECK(std::abs(sum - 1.0 / 16.0) <= 1e-14);
}

TEST_CASE("terminal_membership examples") {
    DesignArtifact a = robust_artifact();
    const Vec r = vec({0.5, 0.5, 0, 0});
    CHECK(terminal_membership(a, r, r, 0.0, false) == a.alpha);
    // boundary: sqrt(V) = alpha - s_T
    const double sT = 0.1;
    const Vec z = r + vec({(a.alpha - sT) / std::sqrt(2.0), 0, 0, 0});
    CHECK(std::abs(terminal_membership(a, z, r, sT, false)) <= 1e-15);
    CHECK(terminal_membership(a, z, r, sT, true) == doctest::Approx(-a.epsilon));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int i = 0; i < 100; ++i) {
        Vec zz(4), rr(4);
        for (int k = 0; k < 4; ++k) {
            zz(k) = U(rng);
            rr(k) = U(rng);
        }
        const double s = 0.5 * (U(rng) + 1);
        const double direct = a.alpha - std::sqrt((zz - rr).dot(a.Pdelta * (zz - rr))) - s;
        CHECK(std::abs(terminal_membership(a, zz, rr, s, false) - direct) <= 1e-14);
    }
    a.variant = "tmpc";
    CHECK(terminal_membership(a, r, r, 0.0, false) == doctest::Approx(a.alpha * a.alpha));
}

TEST_CASE("check_s_bound examples") {
    CHECK(std::abs(check_s_bound(1.0, 1.0, 0.1, {0.0})) <= 1e-15);
    std::vector<double> taus;
    for (int i = 0; i <= 500; ++i)
        taus.push_back(5.0 * i / 500);
    CHECK(std::abs(check_s_bound(1.0, 1.0, 0.1, taus)) <= 1e-12);
    CHECK(std::abs(check_s_bound_rk4(1.0, 1.0, 0.1, taus, 1000)) <= 1e-8);
}

TEST_CASE("tighten_rows examples") {
    Polytope rows;
    rows.L = Mat(2, 1);
    rows.L << 1, -1;
    rows.l = Vec::Ones(2);
    const Polytope same = tighten_rows(rows, Vec::Constant(2, 2.0), 0.0, Vec());
    CHECK((same.l - rows.l).norm() == 0.0);
    const Polytope t = tighten_rows(rows, Vec::Constant(2, 2.0), 0.25, Vec());
    CHECK(t.l(0) == 0.5);
    CHECK((t.L - rows.L).norm() == 0.0);
    std::vector<std::string> warn;
    tighten_rows(rows, Vec::Constant(2, 2.0), 0.75, Vec(), &warn);
    CHECK(warn.size() == 1);

    const DesignArtifact a = robust_artifact();
    const Polytope ref = reference_rows(a);
    const Polytope raw = a.rows();
    for (int j = 0; j < raw.rows(); ++j)
        CHECK(ref.l(j) == raw.l(j) - a.c_s(j) * (a.wbar / a.rho));
}
