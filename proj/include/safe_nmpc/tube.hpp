#pragma once

#include <string>
#include <vector>

#include "safe_nmpc/synthesis.hpp"

namespace safe_nmpc {

// Tube size s(t) = e^{-rho t} s0 + (1 - e^{-rho t}) wbar / rho, the solution of s' = -rho s + wbar.
double tube_size(double rho, double wbar, double t, double s0 = 0.0);

struct TubeProfile {
    double rho = 0.0, wbar = 0.0, s0 = 0.0;
    std::vector<double> t, s;

    double limit() const { return wbar / rho; }
};
TubeProfile make_tube_profile(double rho, double wbar, double Ts, int N, double s0 = 0.0);

// RK4 integration of s' = -rho s + wbar over [0, t] with `steps` equal steps.
double tube_size_rk4(double rho, double wbar, double t, int steps, double s0 = 0.0);

double vdelta(const Mat& Pdelta, const Vec& a, const Vec& b);

// 8-point Gauss-Legendre nodes and weights on [0, 1].
const std::vector<std::pair<double, double>>& gauss_legendre_unit();

// Mean gain along the straight line z -> x (exact for constant tables).
Mat mean_gain(const GainTable& K, const Vec& x, const Vec& z);

// v + (integral of K along the segment) (x - z); constant K for tracking designs.
Vec feedback_kappa(const DesignArtifact& a, const Vec& x, const Vec& z, const Vec& v);

// Robust: alpha - sqrt(V(z, x_ref)) - s_T (- epsilon); tracking: alpha^2 - (z - x_ref)' P (z - x_ref).
double terminal_membership(const DesignArtifact& a, const Vec& z, const Vec& x_ref, double s_T,
                           bool include_epsilon);

// Minimum over tau of s_{Ts+tau} - e^{-rho tau} s_{Ts} - s_tau.
double check_s_bound(double rho, double wbar, double Ts, const std::vector<double>& taus);
// Same residual with every s evaluated by RK4 (`steps_per_unit` steps per unit time).
double check_s_bound_rk4(double rho, double wbar, double Ts, const std::vector<double>& taus,
                         int steps_per_unit);

// Offsets l_j - c_j s - extra_j; `extra` may be empty. Opposite-row pairs that cross are
// reported in `warnings` (empty set).
Polytope tighten_rows(const Polytope& rows, const Vec& c, double s, const Vec& extra,
                      std::vector<std::string>* warnings = nullptr);

// Rows a reference must satisfy: c_j wbar/rho (+ c_j^{s,o} eps for output feedback); raw rows for tracking.
Polytope reference_rows(const DesignArtifact& a, std::vector<std::string>* warnings = nullptr);

} // namespace safe_nmpc
