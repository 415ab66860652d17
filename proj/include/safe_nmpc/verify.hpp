#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "safe_nmpc/sim.hpp"

namespace safe_nmpc {

struct CheckResult {
    std::string name;
    bool passed = false;
    double worst = 0.0;      // worst residual (positive means violated) or worst ratio, per check
    double tolerance = 0.0;
    int violations = 0;
    int samples = 0;
    json details = json::object();

    json to_json() const;
};

// Tracking scheme: J*_{t+Ts} - J*_t + (stage cost of the first interval) <= 1e-4 (1 + |J*_t|) at every step.
// Robust schemes: tail-average tracking cost reported and required finite on a complete run.
CheckResult verify_descent(const SimTrace& tr, const DesignArtifact& a);

// Every logged candidate margin (constraints, terminal set, shooting defect, initial condition) >= -tol.
CheckResult verify_recursive_feasibility(const SimTrace& tr, double tol = 1e-6);

// Tube (and observer-error) containment residuals logged by the simulator <= 1e-6.
CheckResult verify_tube_containment(const SimTrace& tr, const DesignArtifact& a);

// No violation of the original system and obstacle rows along the fine trace.
CheckResult verify_constraints(const SimTrace& tr);

// Boundary samples of the terminal set are propagated under the terminal law with w = w_b for one Ts;
// robust schemes add the tube growth s_Ts. All samples must remain members (margin >= -1e-6).
CheckResult verify_terminal_invariance(const DesignArtifact& a, const ReferenceTrajectory& ref, double Ts,
                                       int n_samples, std::uint64_t seed, int substeps = 40);

// Monte-Carlo check of the Lipschitz bounds behind the tightening constants, the contraction rate and the
// disturbed growth bound of sqrt(V).
CheckResult verify_lipschitz_and_contraction(const DesignArtifact& a, int n_samples, std::uint64_t seed,
                                             double dt = 0.1);

// Largest alpha (bisection) such that n_samples uniform points on the boundary of {d' P d <= alpha^2} satisfy
// the rows under u = u^r + K d around the stacked reference point [u^r; x^r]. +inf when nothing binds.
double brute_force_alpha(const Mat& P, const Mat& K, const Vec& ref_point, const Polytope& rows, int n_samples,
                         std::uint64_t seed);

// Tracking artifact: LP value at the box center against the sampling oracle (relative tolerance).
CheckResult verify_alpha(const DesignArtifact& a, int n_samples, std::uint64_t seed, double rel_tol = 0.02);

// Rebuild the per-step part of a trace from the steps JSON written by the simulator.
SimTrace trace_from_steps_json(const json& j);

json report_to_json(const std::vector<CheckResult>& checks);

} // namespace safe_nmpc
