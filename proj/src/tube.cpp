#include "safe_nmpc/tube.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace safe_nmpc {

double tube_size(double rho, double wbar, double t, double s0) {
    const double e = std::exp(-rho * t);
    return e * s0 + (1.0 - e) * wbar / rho;
}

TubeProfile make_tube_profile(double rho, double wbar, double Ts, int N, double s0) {
    require(rho > 0 && Ts > 0 && N >= 1, "tube profile needs rho > 0, Ts > 0, N >= 1");
    TubeProfile p;
    p.rho = rho;
    p.wbar = wbar;
    p.s0 = s0;
    for (int k = 0; k <= N; ++k) {
        p.t.push_back(k * Ts);
        p.s.push_back(tube_size(rho, wbar, k * Ts, s0));
    }
    return p;
}

double tube_size_rk4(double rho, double wbar, double t, int steps, double s0) {
    if (t <= 0)
        return s0;
    const double h = t / steps;
    auto f = [&](double s) { return -rho * s + wbar; };
    double s = s0;
    for (int i = 0; i < steps; ++i) {
        const double k1 = f(s), k2 = f(s + 0.5 * h * k1), k3 = f(s + 0.5 * h * k2), k4 = f(s + h * k3);
        s += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return s;
}

double vdelta(const Mat& Pdelta, const Vec& a, const Vec& b) {
    const Vec d = a - b;
    return std::max(0.0, d.dot(Pdelta * d));
}

const std::vector<std::pair<double, double>>& gauss_legendre_unit() {
    static const std::vector<std::pair<double, double>> nodes = [] {
        const double x[4] = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363};
        const double w[4] = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
        std::vector<std::pair<double, double>> v;
        for (int i = 3; i >= 0; --i)
            v.emplace_back(0.5 * (1.0 - x[i]), 0.5 * w[i]);
        for (int i = 0; i < 4; ++i)
            v.emplace_back(0.5 * (1.0 + x[i]), 0.5 * w[i]);
        return v;
    }();
    return nodes;
}

Mat mean_gain(const GainTable& K, const Vec& x, const Vec& z) {
    if (K.is_constant())
        return K.K[0];
    Mat out = Mat::Zero(K.K[0].rows(), K.K[0].cols());
    for (const auto& [s, w] : gauss_legendre_unit())
        out += w * K.eval(z + s * (x - z));
    return out;
}

Vec feedback_kappa(const DesignArtifact& a, const Vec& x, const Vec& z, const Vec& v) {
    if (a.variant == "tmpc")
        return v + a.K * (x - z);
    return v + mean_gain(a.Kdelta, x, z) * (x - z);
}

double terminal_membership(const DesignArtifact& a, const Vec& z, const Vec& x_ref, double s_T,
                           bool include_epsilon) {
    if (a.variant == "tmpc") {
        const Vec d = z - x_ref;
        return a.alpha * a.alpha - d.dot(a.P * d);
    }
    return a.alpha - std::sqrt(vdelta(a.Pdelta, z, x_ref)) - s_T - (include_epsilon ? a.epsilon : 0.0);
}

double check_s_bound(double rho, double wbar, double Ts, const std::vector<double>& taus) {
    double worst = std::numeric_limits<double>::infinity();
    const double sTs = tube_size(rho, wbar, Ts);
    for (double tau : taus)
        worst = std::min(worst, tube_size(rho, wbar, Ts + tau) - std::exp(-rho * tau) * sTs -
                                    tube_size(rho, wbar, tau));
    return worst;
}

double check_s_bound_rk4(double rho, double wbar, double Ts, const std::vector<double>& taus,
                         int steps_per_unit) {
    double worst = std::numeric_limits<double>::infinity();
    auto steps = [&](double t) { return std::max(1, static_cast<int>(std::ceil(t * steps_per_unit))); };
    const double sTs = tube_size_rk4(rho, wbar, Ts, steps(Ts));
    for (double tau : taus) {
        const double r = tube_size_rk4(rho, wbar, Ts + tau, steps(Ts + tau)) - std::exp(-rho * tau) * sTs -
                         tube_size_rk4(rho, wbar, tau, steps(tau));
        if (std::abs(r) > std::abs(worst) || !std::isfinite(worst))
            worst = r;
    }
    return worst;
}

Polytope tighten_rows(const Polytope& rows, const Vec& c, double s, const Vec& extra,
                      std::vector<std::string>* warnings) {
    require(c.size() == rows.rows(), "tightening constants do not match the rows");
    require(extra.size() == 0 || extra.size() == rows.rows(), "extra tightening does not match the rows");
    Polytope out = rows;
    for (int j = 0; j < rows.rows(); ++j)
        out.l(j) = rows.l(j) - c(j) * s - (extra.size() ? extra(j) : 0.0);
    if (warnings)
        for (int a = 0; a < out.rows(); ++a)
            for (int b = a + 1; b < out.rows(); ++b)
                if ((out.L.row(a) + out.L.row(b)).cwiseAbs().maxCoeff() <= 1e-12 && out.l(a) + out.l(b) < 0)
                    warnings->push_back(fmt::format("tightened rows {} and {} leave an empty interval", a, b));
    return out;
}

Polytope reference_rows(const DesignArtifact& a, std::vector<std::string>* warnings) {
    const Polytope rows = a.rows();
    if (a.variant == "tmpc")
        return rows;
    Vec extra;
    if (a.variant == "rompc")
        extra = a.c_s_o * a.epsilon;
    return tighten_rows(rows, a.c_s, a.wbar / a.rho, extra, warnings);
}

} // namespace safe_nmpc
