#pragma once

#include <functional>
#include <string>
#include <vector>

#include "safe_nmpc/common.hpp"

namespace safe_nmpc {

// Indices into the stacked vector [x; u] grouped by how they enter the Jacobians.
struct JacobianStructure {
    std::vector<int> linear;
    std::vector<int> nonlinear;
};

struct SystemModel {
    std::string name;
    int n_x = 0, n_u = 0, n_w = 0, n_y = 0, n_eta = 0, n_p = 0;
    std::function<Vec(const Vec&, const Vec&)> f;
    std::function<void(const Vec&, const Vec&, Mat&, Mat&)> jac;
    Mat E, C, F, M;
    Vec w_bias;
    JacobianStructure structure;

    void check() const;
};

struct ModelOptions {
    Vec w_bias;          // empty -> zeros
    Mat C, F;            // empty -> model default
};

// Registry: "double_integrator_2d", "unicycle", "scalar_integrator".
SystemModel make_model(const std::string& name, const ModelOptions& opts = {});
std::vector<std::string> registered_models();

struct BoxSet {
    Vec lower, upper;

    BoxSet() = default;
    BoxSet(Vec lo, Vec hi);
    int dim() const { return static_cast<int>(lower.size()); }
    std::vector<Vec> vertices() const;
    bool contains(const Vec& p, double tol = 0.0) const;
    BoxSet scaled(double c) const;
};

// Rows L(j,:) y <= l(j).
struct Polytope {
    Mat L;
    Vec l;

    int rows() const { return static_cast<int>(l.size()); }
    Vec margins(const Vec& y) const { return l - L * y; }
    double min_margin(const Vec& y) const;
    bool normalized(double tol = 1e-12) const;
    void normalize();
};

struct ObstacleSchedule {
    std::vector<Polytope> stages;

    int size() const { return static_cast<int>(stages.size()); }
    // Stage polytope that constrains node k (the last stage also covers node N).
    const Polytope& for_node(int k) const;
};

// System rows on [u; x]: for every input then every state, upper bound row then lower bound row.
Polytope system_rows(const BoxSet& u_box, const BoxSet& x_box);

struct RefPoint {
    Vec x, xdot, u;
};

struct ReferenceTrajectory {
    std::vector<double> t;
    std::vector<Vec> x, xdot, u;
    std::function<RefPoint(double)> exact;

    RefPoint at(double time) const;
    double end_time() const { return t.empty() ? 0.0 : t.back(); }
    // max ||xdot - f(x,u) - E w_b|| over sample midpoints
    double feasibility_residual(const SystemModel& m) const;
};

ReferenceTrajectory sample_reference(std::function<RefPoint(double)> gen, double duration, double dt);

// Rest-to-rest quintic between two positions, then hold. Double integrator and scalar integrator.
ReferenceTrajectory polynomial_reference(const SystemModel& m, const Vec& p0, const Vec& p1,
                                         double move_time, double duration, double dt);
// Constant velocity motion (zero velocity gives a rest point).
ReferenceTrajectory line_reference(const SystemModel& m, const Vec& p0, const Vec& vel,
                                   double duration, double dt);
// Constant speed circle for the unicycle.
ReferenceTrajectory circle_reference(const SystemModel& m, const Vec& center, double radius,
                                     double omega, double phase, double duration, double dt);

Vec eval_dynamics(const SystemModel& m, const Vec& x, const Vec& u, const Vec* w = nullptr);
Vec output_measure(const SystemModel& m, const Vec& x, const Vec& eta);

// Generic classical RK4 step for y' = g(t, y).
Vec rk4_step(const std::function<Vec(double, const Vec&)>& g, double t, const Vec& y, double h);

// RK4 over dt with `substeps` equal steps, u and w held constant. Empty w means nominal.
Vec integrate_step(const SystemModel& m, const Vec& x, const Vec& u, const Vec& w, double dt,
                   int substeps = 1);

// Same integration with exact derivatives of the RK4 map with respect to x and u.
Vec integrate_step_sens(const SystemModel& m, const Vec& x, const Vec& u, const Vec& w, double dt,
                        int substeps, Mat& dx, Mat& du);

void check_finite(const Vec& v, const std::string& what);

ObstacleSchedule build_corridor(const std::vector<Vec>& path, double half_width, int N);
// True when every position k+1 lies in stage k of `next` (positions taken from the previous plan).
bool corridor_contains_shifted(const ObstacleSchedule& next, const std::vector<Vec>& prev_positions,
                               double tol = 1e-12);

// Vertex values for linear dims, uniform grids for nonlinear dims, zero elsewhere.
std::vector<Vec> grid_domain(const BoxSet& box, int points_per_nonlinear_dim,
                             const std::vector<int>& linear_dims,
                             const std::vector<int>& nonlinear_dims);

} // namespace safe_nmpc
