#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "safe_nmpc/synthesis.hpp"

using namespace safe_nmpc;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }
BoxSet sym_box(int n, double h) { return BoxSet(Vec::Constant(n, -h), Vec::Constant(n, h)); }

Mat kron(const Mat& X, const Mat& Y) {
    Mat K(X.rows() * Y.rows(), X.cols() * Y.cols());
    for (int i = 0; i < X.rows(); ++i)
        for (int j = 0; j < X.cols(); ++j)
            K.block(i * Y.rows(), j * Y.cols(), Y.rows(), Y.cols()) = X(i, j) * Y;
    return K;
}

// Solves Acl' P + P Acl + S = 0 through the Kronecker form.
Mat lyap(const Mat& Acl, const Mat& S) {
    const int n = static_cast<int>(Acl.rows());
    const Mat I = Mat::Identity(n, n);
    const Mat K = kron(I, Acl.transpose()) + kron(Acl.transpose(), I);
    const Vec s = Eigen::Map<const Vec>(S.data(), n * n);
    const Vec p = K.fullPivLu().solve(-s);
    Mat P = Eigen::Map<const Mat>(p.data(), n, n);
    return 0.5 * (P + P.transpose());
}

// Continuous algebraic Riccati solution by Newton-Kleinman iteration from a stabilizing gain.
Mat care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, Mat K) {
    Mat P;
    for (int it = 0; it < 60; ++it) {
        P = lyap(A + B * K, Q + K.transpose() * R * K);
        K = -R.ldlt().solve(B.transpose() * P);
    }
    return P;
}

SynthConfig scalar_config(const std::string& variant) {
    SynthConfig c;
    c.variant = variant;
    c.model = "scalar_integrator";
    c.w_bias = v1(0.0);
    c.u_box = sym_box(1, 1.0);
    c.x_box = sym_box(1, 1.0);
    c.W = sym_box(1, 0.05);
    c.Q = m1(1.0);
    c.R = m1(1.0);
    c.rho = 1.0;
    c.alpha_mode = variant == "tmpc" ? "lp" : "min";
    return c;
}

SynthConfig di_rmpc_config() {
    SynthConfig c;
    c.variant = "rmpc";
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
    c.alpha_mode = "min";
    return c;
}

} // namespace

TEST_CASE("tmpc terminal ingredients: scalar integrator matches Riccati") {
    const SystemModel m = make_model("scalar_integrator");
    const SynthGrid g = make_synth_grid(m, sym_box(1, 1), sym_box(1, 1), 5);
    const TmpcTerminal t = synth_tmpc_terminal(m, m1(1), m1(1), 0.0, g);
    CHECK(std::abs(t.P(0, 0) - 1.0) <= 1e-4);
    CHECK(std::abs(t.K(0, 0) + 1.0) <= 1e-4);
    CHECK(t.residual <= 1e-6);
}

TEST_CASE("tmpc terminal ingredients: double integrator matches Riccati oracle") {
    const SystemModel m = make_model("double_integrator_2d");
    Vec xl(4), xu(4);
    xl << -5, -5, -2, -2;
    xu << 5, 5, 2, 2;
    const SynthGrid g = make_synth_grid(m, BoxSet(xl, xu), sym_box(2, 2), 5);
    const Mat Q = Mat::Identity(4, 4), R = Mat::Identity(2, 2);
    const TmpcTerminal t = synth_tmpc_terminal(m, Q, R, 0.0, g);
    Mat A, B;
    m.jac(Vec::Zero(4), Vec::Zero(2), A, B);
    Mat K0 = Mat::Zero(2, 4);
    K0.block(0, 0, 2, 2) = -Mat::Identity(2, 2);
    K0.block(0, 2, 2, 2) = -2.0 * Mat::Identity(2, 2);
    const Mat Pr = care(A, B, Q, R, K0);
    CHECK((t.P - Pr).norm() <= 1e-4);
    CHECK((t.K + R.inverse() * B.transpose() * Pr).norm() <= 1e-4);
}

TEST_CASE("alpha LP examples") {
    const Polytope rows = system_rows(sym_box(1, 1), sym_box(1, 1));
    const std::vector<Vec> origin{Vec::Zero(2)};
    CHECK(compute_alpha_lp(m1(1), m1(-0.5), origin, rows) == doctest::Approx(1.0).epsilon(1e-12));
    Polytope state_only;
    state_only.L = Mat(2, 2);
    state_only.L << 0, 1, 0, -1;
    state_only.l = Vec::Ones(2);
    CHECK(compute_alpha_lp(m1(1), m1(0), origin, state_only) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(compute_alpha_lp(m1(4), m1(0), origin, state_only) == doctest::Approx(2.0).epsilon(1e-12));
    Vec bad(2);
    bad << 0.0, 1.5;
    CHECK_THROWS_AS(compute_alpha_lp(m1(1), m1(0), {bad}, state_only), ConfigError);
}

TEST_CASE("tightening constant examples") {
    Polytope r1;
    r1.L = Mat(1, 3);
    r1.L << 0, 1, 0;  // [u; x1; x2], selects x1
    r1.l = Vec::Ones(1);
    auto t = compute_tightening_constants(Mat::Identity(2, 2), GainTable::constant(Mat::Zero(1, 2)), r1, Mat(1, 2));
    CHECK(t.c_s(0) == doctest::Approx(1.0));
    Polytope r2;
    r2.L = Mat(1, 4);
    r2.L << 1, 0, 0, 0;  // input row of [u1 u2; x1 x2]
    r2.l = Vec::Ones(1);
    t = compute_tightening_constants(Mat::Identity(2, 2), GainTable::constant(-Mat::Identity(2, 2)), r2,
                                     Mat(1, 2));
    CHECK(t.c_s(0) == doctest::Approx(1.0));
    Mat P = Mat::Zero(2, 2);
    P.diagonal() << 4, 1;
    Mat M(1, 2);
    M << 1, 0;
    t = compute_tightening_constants(P, GainTable::constant(Mat::Zero(1, 2)), r1, M);
    CHECK(t.c_o == doctest::Approx(0.5));
}

TEST_CASE("wbar examples and homogeneity") {
    CHECK(compute_wbar(Mat::Identity(2, 2), Mat::Identity(2, 2), sym_box(2, 0.0)) == 0.0);
    CHECK(compute_wbar(Mat::Identity(2, 2), Mat::Identity(2, 2), sym_box(2, 0.1)) ==
          doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
    CHECK(compute_wbar(m1(4), m1(1), sym_box(1, 0.5)) == doctest::Approx(1.0).epsilon(1e-12));
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.1, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Mat G = Mat::Random(3, 3);
        const Mat P = G * G.transpose() + Mat::Identity(3, 3);
        const Mat E = Mat::Random(3, 2);
        const BoxSet W(Vec(-Vec::Ones(2) * U(rng)), Vec(Vec::Ones(2) * U(rng)));
        const double c = 4.0 * U(rng);
        CHECK(compute_wbar(P, E, BoxSet(Vec(c * W.lower), Vec(c * W.upper))) == doctest::Approx(c * compute_wbar(P, E, W)).epsilon(1e-12));
    }
}

TEST_CASE("terminal cost: scalar hand solution and scaling") {
    const SystemModel m = make_model("scalar_integrator");
    const SynthGrid g = make_synth_grid(m, sym_box(1, 1), sym_box(1, 1), 3);
    const GainTable K = GainTable::constant(m1(-1));
    const Mat P = synth_terminal_cost(m, K, m1(1), m1(1), g);
    CHECK(P(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    const Mat P4 = synth_terminal_cost(m, K, m1(4), m1(4), g);
    CHECK(P4(0, 0) == doctest::Approx(4.0 * P(0, 0)).epsilon(1e-6));
}

TEST_CASE("wbar_o examples") {
    const Mat I2 = Mat::Identity(2, 2);
    CHECK(compute_wbar_o(I2, Mat::Zero(2, 2), I2, I2, sym_box(2, 0.1), 0.3) == 0.0);
    CHECK(compute_wbar_o(I2, I2, Mat::Zero(2, 2), I2, sym_box(2, 0.1), 0.3) ==
          doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
    CHECK(compute_wbar_o(I2, I2, I2, I2, sym_box(2, 0.0), 0.3) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("norm-bound LMI examples") {
    const Mat I2 = Mat::Identity(2, 2);
    CHECK(std::abs(norm_bound_margin(I2, I2, I2, 1.0)) <= 1e-12);
    CHECK(norm_bound_margin(I2, I2, I2, 0.99) > 0.0);
    CHECK(std::abs(norm_bound_margin(m1(1), m1(2), m1(1), 2.0)) <= 1e-12);
    CHECK(norm_bound_margin(m1(1), m1(2), m1(1), 1.99) > 0.0);
}

TEST_CASE("ccm: scalar integrator contraction and tightening") {
    const SystemModel m = make_model("scalar_integrator");
    const SynthGrid g = make_synth_grid(m, sym_box(1, 1), sym_box(1, 1), 3);
    const Polytope rows = system_rows(sym_box(1, 1), sym_box(1, 1));
    const CostWeights w = default_cost_weights(sym_box(1, 1), sym_box(1, 1), m.M);
    const CcmResult r = synth_ccm(m, 1.0, std::nullopt, g, sym_box(1, 0.05), rows, w);
    const double k = -r.Kdelta.K[0](0, 0);
    CHECK(k >= 1.0 - 1e-6);
    CHECK(r.residual <= 1e-6);
    CHECK(r.c_s(0) == doctest::Approx(k / std::sqrt(r.Pdelta(0, 0))).epsilon(1e-9));
    // RPI with delta = 1: (2k - lambda) X lambda >= w^2 at the binding vertex
    const double X = 1.0 / r.Pdelta(0, 0);
    CHECK((2 * k - r.lambda) * X * r.lambda >= 0.05 * 0.05 * (1 - 1e-6));
}

TEST_CASE("rpi LMI with zero disturbance holds for any lambda up to 2 rho") {
    // Scalar closed loop a_cl = -1 (rho = 1 contraction); RPI block [[2 a_cl X + lam X, 0], [0, -lam]].
    const double X = 0.7;
    for (double lam : {0.01, 0.5, 1.0, 1.5, 2.0}) {
        Mat S(2, 2);
        S << 2 * -1.0 * X + lam * X, 0.0, 0.0, -lam;
        CHECK(check_lmi(S, Sense::NSD, 1e-12).feasible);
    }
}

TEST_CASE("run_synthesis: scalar tmpc artifact and round trip") {
    const DesignArtifact a = run_synthesis(scalar_config("tmpc"));
    CHECK(std::abs(a.P(0, 0) - 1.0) <= 1e-4);
    CHECK(std::abs(a.K(0, 0) + 1.0) <= 1e-4);
    CHECK(a.validation.passed());
    const DesignArtifact b = artifact_from_json(artifact_to_json(a));
    CHECK((b.P - a.P).norm() == 0.0);
    CHECK(b.alpha == a.alpha);
}

TEST_CASE("run_synthesis: double integrator rmpc validates; perturbed metric fails") {
    const DesignArtifact a = run_synthesis(di_rmpc_config());
    INFO(a.validation.to_json().dump());
    CHECK(a.validation.passed());
    CHECK(a.validation.worst.count("rpi"));
    CHECK(a.validation.worst.count("contraction"));
    CHECK(a.validation.worst.count("lipschitz_sys"));
    CHECK(a.validation.worst.count("lipschitz_obs"));
    CHECK(a.alpha >= a.wbar / a.rho);
    // +10% along the top eigendirection
    DesignArtifact b = a;
    Eigen::SelfAdjointEigenSolver<Mat> es(a.Pdelta);
    const Vec v = es.eigenvectors().col(3);
    b.Pdelta += 0.1 * es.eigenvalues()(3) * v * v.transpose();
    const ValidationReport rep = validate_design(b, 2);
    CHECK_FALSE(rep.passed());
}

TEST_CASE("run_synthesis: scalar rompc families and input-row constants") {
    SynthConfig c = scalar_config("rompc");
    c.H = sym_box(1, 0.01);
    c.L = m1(2.0);
    c.epsilon = 0.5;
    c.mult.lambda_delta = 1.0;
    c.mult.lambda_delta_eps = 1.0;
    const DesignArtifact a = run_synthesis(c);
    INFO(a.validation.to_json().dump());
    CHECK(a.validation.passed());
    for (const char* f : {"contraction", "rpi_delta", "rpi_eps", "lipschitz_sys", "lipschitz_obs"})
        CHECK(a.validation.worst.count(f));
    CHECK(a.c_s_o(0) == 0.0);
    CHECK(a.c_s_o(1) == 0.0);
    CHECK(a.c_s_o(2) == a.c_s(2));
    CHECK(a.alpha >= a.wbar / a.rho + a.epsilon);
    c.mult.lambda_delta = 0.1;  // below lambda_delta_eps * eps^2 = 0.25
    CHECK_THROWS_AS(run_synthesis(c), ConfigError);
}

TEST_CASE("artifact loader rejects invariant violations") {
    const DesignArtifact a = run_synthesis(scalar_config("rmpc"));
    json j = artifact_to_json(a);
    j["alpha"] = 0.5 * a.wbar / a.rho;
    CHECK_THROWS_AS(artifact_from_json(j), ConfigError);
    json k = artifact_to_json(a);
    k["Pdelta"]["data"][0] = -1.0;
    CHECK_THROWS_AS(artifact_from_json(k), ConfigError);
    json s = artifact_to_json(a);
    s.erase("P");
    CHECK_THROWS_AS(artifact_from_json(s), ConfigError);
}

TEST_CASE("observer gain SDP: returned bound dominates the weighted gain norm") {
    SynthConfig c = scalar_config("rompc");
    c.H = sym_box(1, 0.01);
    c.L = m1(2.0);
    c.epsilon = 0.5;
    c.mult.lambda_delta = 1.0;
    c.mult.lambda_delta_eps = 1.0;
    const DesignArtifact a = run_synthesis(c);
    const SystemModel m = a.model();
    const SynthGrid g = make_synth_grid(m, a.x_box, a.u_box, a.grid_points);
    const ObserverGain og = optimize_observer_gain(a.Pdelta, a.Kdelta, m, a.mult, g, a.W, a.H, 1.0);
    const double nrm = spectral_norm(sqrtm_spd(a.Pdelta) * og.L * m.C * inv_sqrtm_spd(a.Pdelta));
    CHECK(nrm <= og.l_bound + 1e-8);
    CHECK(og.epsilon2 >= 0.0);
}
