#pragma once

#include "safe_nmpc/model.hpp"

namespace safe_nmpc {

// Luenberger estimator state for output-feedback runs.
struct ObserverState {
    Vec xhat;
    Mat L;

    // Throws ConfigError when the dimensions do not match the model.
    void check(const SystemModel& m) const;
};

// One RK4 step of xhat' = f(xhat, u) + E w_b + L (y - C xhat) with u and y held over dt.
Vec observer_step(const SystemModel& m, const Mat& L, const Vec& xhat, const Vec& u, const Vec& y, double dt,
                  int substeps = 1);

// Advance the state in place.
void advance(ObserverState& s, const SystemModel& m, const Vec& u, const Vec& y, double dt, int substeps = 1);

} // namespace safe_nmpc
