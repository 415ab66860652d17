#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safe_nmpc/observer.hpp"
#include "safe_nmpc/synthesis.hpp"
#include "safe_nmpc/tube.hpp"

using namespace safe_nmpc;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }
Mat m1(double x) { return Mat::Constant(1, 1, x); }
BoxSet sym_box(int n, double h) { return BoxSet(Vec::Constant(n, -h), Vec::Constant(n, h)); }

Vec uniform_in(const BoxSet& b, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec p(b.dim());
    for (int i = 0; i < b.dim(); ++i)
        p(i) = b.lower(i) + U(rng) * (b.upper(i) - b.lower(i));
    return p;
}

} // namespace

TEST_CASE("observer_step examples") {
    const SystemModel uni = make_model("unicycle");
    const Vec xh = (Vec(4) << 0.1, -0.2, 0.3, 0.5).finished();
    const Vec u = (Vec(2) << 0.2, -0.1).finished();
    const Mat L0 = Mat::Zero(uni.n_x, uni.n_y);
    CHECK((observer_step(uni, L0, xh, u, Vec::Zero(uni.n_y), 0.1) - integrate_step(uni, xh, u, Vec(), 0.1)).norm() <=
          1e-15);
    // zero innovation along an equilibrium (speed and inputs zero): the estimate does not move
    const Mat L1 = Mat::Ones(uni.n_x, uni.n_y);
    const Vec rest = (Vec(4) << 0.1, -0.2, 0.3, 0.0).finished();
    const Vec u0 = Vec::Zero(2);
    CHECK((observer_step(uni, L1, rest, u0, uni.C * rest, 0.1) - integrate_step(uni, rest, u0, Vec(), 0.1)).norm() <=
          1e-15);

    const SystemModel si = make_model("scalar_integrator");
    Vec x = v1(0.0);
    for (int i = 0; i < 100; ++i)
        x = observer_step(si, m1(1.0), x, v1(0.0), v1(1.0), 0.01);
    CHECK(std::abs(x(0) - (1.0 - std::exp(-1.0))) <= 1e-8);

    CHECK_THROWS_AS(observer_step(si, m1(1.0), x, v1(0.0), v1(1.0), 0.0), ConfigError);
    CHECK_THROWS_AS(observer_step(si, m1(1.0), v1(std::nan("")), v1(0.0), v1(1.0), 0.1), NumericError);
}

TEST_CASE("observer error stays inside the epsilon sublevel set") {
    SynthConfig c;
    c.variant = "rompc";
    c.model = "scalar_integrator";
    c.w_bias = v1(0.01);
    c.u_box = sym_box(1, 1.0);
    c.x_box = sym_box(1, 1.0);
    c.W = sym_box(1, 0.05);
    c.H = sym_box(1, 0.01);
    c.Q = m1(1.0);
    c.R = m1(1.0);
    c.rho = 1.0;
    c.alpha_mode = "min";
    c.L = m1(2.0);
    c.epsilon = 0.1;
    c.mult.lambda_delta = 1.0;
    c.mult.lambda_delta_eps = 1.0;
    const DesignArtifact a = run_synthesis(c);
    REQUIRE(a.validation.passed());
    const SystemModel m = a.model();
    const double dt = 0.01;
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        Vec x = uniform_in(a.x_box.scaled(0.5), rng);
        ObserverState obs{x, a.L};
        for (int k = 0; k < 300; ++k) {
            const Vec u = uniform_in(a.u_box, rng);
            const Vec w = m.w_bias + uniform_in(a.W, rng);
            const Vec eta = uniform_in(a.H, rng);
            const Vec y = output_measure(m, x, eta);
            advance(obs, m, u, y, dt);
            x = integrate_step(m, x, u, w, dt);
            worst = std::max(worst, std::sqrt(vdelta(a.Pdelta, x, obs.xhat)));
        }
    }
    CHECK(worst <= a.epsilon + 1e-6);
}
