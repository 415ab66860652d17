#pragma once

#include <string>
#include <vector>

#include "safe_nmpc/tube.hpp"

namespace safe_nmpc {

enum class OcpStatus { Optimal, FeasibleSuboptimal, Infeasible, MaxIter };
std::string to_string(OcpStatus s);

// Multiple-shooting problem on nodes z_0..z_N with piecewise-constant inputs v_0..v_{N-1}.
struct OcpProblem {
    std::string variant;
    SystemModel model;
    int N = 0;
    double Ts = 0.0;
    int substeps = 1;      // RK4 steps per shooting interval
    double t0 = 0.0;
    Vec x0;                // measured state (estimate for output feedback)
    Vec w_pred;            // disturbance used in the prediction (the bias w^b)
    std::vector<Vec> xr, ur;  // reference at the N+1 nodes
    Mat Q, R, P;           // stage and terminal weights
    TubeProfile tube;
    std::vector<Polytope> sys;  // per node, rows on [u; x], already tightened
    std::vector<Polytope> obs;  // per node, rows on positions M x, already tightened
    // Terminal set (z_N - xr_N)' Pset (z_N - xr_N) <= radius^2.
    Mat Pset;
    double alpha = 0.0, s_T = 0.0, epsilon = 0.0, radius = 0.0;

    int nz() const { return model.n_x; }
    int nv() const { return model.n_u; }
};

struct Margins {
    double defect = 0.0;    // max shooting defect norm
    double initial = 0.0;   // ||z_0 - x0||
    double sys = 0.0;       // min margin of the system rows (>= 0 feasible)
    double obs = 0.0;       // min margin of the obstacle rows
    double terminal = 0.0;  // terminal-set margin (radius - sqrt(V) robust, alpha^2 - J^f tracking)

    bool feasible(double tol) const {
        return defect <= tol && initial <= tol && sys >= -tol && obs >= -tol && terminal >= -tol;
    }
};

struct OcpSolution {
    std::vector<Vec> z, v;
    double objective = 0.0;
    double kkt = 0.0;
    int iterations = 0;
    OcpStatus status = OcpStatus::MaxIter;
    Margins margins;
    double soft_violation = 0.0;  // obstacle-row violation accepted in soft mode
    std::vector<std::string> binding;  // violated rows when infeasible
};

struct OcpOptions {
    double tol = 1e-6;
    int max_iter = 50;
    double elastic_penalty = 1e4;
    bool soft_obstacles = false;
};

// Tightened problem at time t0 for the artifact's variant. Throws ConfigError naming the stage and row
// when a tightened row set or the terminal set is empty.
OcpProblem build_ocp(const DesignArtifact& a, const ReferenceTrajectory& ref, const ObstacleSchedule& obstacles,
                     const Vec& x0, int N, double Ts, double t0, int substeps = 1);

// Trapezoidal stage cost over the N intervals plus terminal cost.
double ocp_objective(const OcpProblem& p, const std::vector<Vec>& z, const std::vector<Vec>& v);
// Trapezoidal stage cost of interval k only.
double interval_cost(const OcpProblem& p, const std::vector<Vec>& z, const std::vector<Vec>& v, int k);

Margins evaluate_feasibility(const OcpSolution& s, const OcpProblem& p);

OcpSolution solve_ocp(const OcpProblem& p, const OcpSolution* warm = nullptr, const OcpOptions& opt = {});

// Candidate for the problem `next` built from the previous optimum: shift plus terminal-law tail
// (tracking), or re-anchored at the new state with the incremental feedback (robust variants).
OcpSolution make_candidate(const OcpSolution& prev, const DesignArtifact& a, const OcpProblem& next,
                           const Vec& new_initial_state);

} // namespace safe_nmpc
