#include "safe_nmpc/observer.hpp"

namespace safe_nmpc {

void ObserverState::check(const SystemModel& m) const {
    require(xhat.size() == m.n_x, "observer estimate dimension mismatch");
    require(L.rows() == m.n_x && L.cols() == m.n_y, "observer gain must be n_x x n_y");
}

Vec observer_step(const SystemModel& m, const Mat& L, const Vec& xhat, const Vec& u, const Vec& y, double dt,
                  int substeps) {
    require(dt > 0, "observer step must be positive");
    require(substeps >= 1, "observer substeps must be >= 1");
    require(L.rows() == m.n_x && L.cols() == m.n_y && y.size() == m.n_y, "observer dimension mismatch");
    const Vec* wb = m.w_bias.size() ? &m.w_bias : nullptr;
    auto rhs = [&](double, const Vec& xh) -> Vec {
        return Vec(eval_dynamics(m, xh, u, wb) + L * (y - m.C * xh));
    };
    Vec x = xhat;
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i)
        x = rk4_step(rhs, i * h, x, h);
    check_finite(x, "observer estimate");
    return x;
}

void advance(ObserverState& s, const SystemModel& m, const Vec& u, const Vec& y, double dt, int substeps) {
    s.check(m);
    s.xhat = observer_step(m, s.L, s.xhat, u, y, dt, substeps);
}

} // namespace safe_nmpc
