#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "safe_nmpc/json_io.hpp"
#include "safe_nmpc/ocp.hpp"

namespace safe_nmpc {

enum class DisturbanceMode { Zero, Uniform, VertexHold, WorstCaseProbe };
enum class NoiseMode { Zero, Uniform };

DisturbanceMode disturbance_mode_from_string(const std::string& s);
NoiseMode noise_mode_from_string(const std::string& s);
std::string to_string(DisturbanceMode m);

struct ReferenceSpec {
    std::string type = "line";  // line | polynomial | circle
    Vec p0, p1, vel, center;
    double move_time = 1.0, radius = 1.0, omega = 0.0, phase = 0.0;
};

struct ObstacleSpec {
    std::string mode = "none";  // none | corridor | static
    double half_width = 1.0;
    Polytope region;            // static free-space polytope on the position M x
};

struct Scenario {
    DesignArtifact artifact;
    std::string artifact_path;
    ReferenceSpec reference;
    ObstacleSpec obstacles;
    int N = 10;
    double Ts = 0.2;
    double duration = 2.0;
    Vec x0, xhat0;  // empty xhat0 -> x0
    DisturbanceMode disturbance = DisturbanceMode::Zero;
    double dwell = 0.0;             // vertex_hold dwell, 0 -> Ts
    double disturbance_scale = 1.0; // realized W is scaled about its center
    NoiseMode noise = NoiseMode::Zero;
    std::uint64_t seed = 0;
    int control_substeps = 10;      // fine steps per sampling interval
    int ocp_substeps = 0;           // RK4 steps per shooting interval, 0 -> control_substeps
    bool halt_on_infeasible = true;
    OcpOptions ocp;

    int steps() const;
    void check() const;
};

// Parse a scenario; relative artifact paths are resolved against base_dir.
Scenario parse_scenario(const json& j, const std::string& base_dir);
Scenario load_scenario(const std::string& path);

// Disturbance draws reproducible from a seed stream; vertex_hold keeps its vertex for `dwell`.
class DisturbanceSampler {
public:
    DisturbanceSampler(DisturbanceMode mode, const BoxSet& W, const Vec& w_bias, const Mat& Pdelta, const Mat& E,
                       double dwell, std::uint64_t seed);
    Vec sample(double t);

private:
    DisturbanceMode mode_;
    BoxSet W_;
    Vec w_bias_;
    double dwell_;
    std::mt19937_64 rng_;
    Vec held_;
    double held_until_ = -1.0;
    Vec probe_;
};

// Vertex of W maximizing ||E w0||_{Pdelta} (first in enumeration order on ties).
Vec worst_case_vertex(const Mat& Pdelta, const Mat& E, const BoxSet& W);

Vec uniform_in_box(const BoxSet& b, std::mt19937_64& rng);

struct FineRecord {
    double t = 0.0;
    Vec x, xhat, u, w, eta;
    double s = 0.0;
    double margin_sys = 0.0, margin_obs = 0.0, margin_term = 0.0;
    std::string status;
    int plan = 0;
};

struct StepRecord {
    double t = 0.0;
    std::vector<Vec> z, v;
    double objective = 0.0;
    double interval_cost = 0.0;  // trapezoidal stage cost of the first interval of the plan
    OcpStatus status = OcpStatus::Optimal;
    int iterations = 0;
    double kkt = 0.0;
    bool used_candidate = false;
    bool has_candidate = false;
    Margins candidate;
    double candidate_objective = 0.0;
    std::vector<double> tube;
    Margins margins;
    double tracking_error = 0.0;  // ||x - x^r|| at the sampling instant
};

struct SimSummary {
    int violations_sys = 0, violations_obs = 0;
    double worst_margin_sys = INFINITY, worst_margin_obs = INFINITY;
    double worst_tube_residual = -INFINITY;      // max sqrt(V(x or xhat, z(tau))) - s_tau
    double worst_observer_residual = -INFINITY;  // max sqrt(V(x, xhat)) - epsilon
    double worst_candidate_margin = INFINITY;
    double initial_tracking_error = 0.0, final_tracking_error = 0.0;
    double total_cost = 0.0;
    double tail_tracking_cost = 0.0;  // mean ||x - x^r||_Q^2 over the second half
    bool halted = false;
    std::string halt_reason;
    int steps = 0;
    int candidate_fallbacks = 0;

    json to_json() const;
};

struct SimTrace {
    std::string variant;
    std::vector<FineRecord> fine;
    std::vector<StepRecord> steps;
    Vec final_x, final_xhat;
    double final_t = 0.0;
    SimSummary summary;
};

SimTrace run_closed_loop(const Scenario& sc);

// Fixed column order: t, x.., xhat.., u.., w.., eta.., s, margin_sys, margin_obs, margin_term, status.
std::string trace_csv(const SimTrace& tr);
json trace_steps_json(const SimTrace& tr);

ReferenceTrajectory make_reference(const SystemModel& m, const ReferenceSpec& spec, double duration, double dt);

} // namespace safe_nmpc
