#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safe_nmpc/conic.hpp"
#include "safe_nmpc/json_io.hpp"
#include "safe_nmpc/model.hpp"

namespace safe_nmpc {

// Feedback gains stored at the nodes of a rectilinear grid over some state coordinates,
// evaluated by multilinear interpolation (clamped at the grid boundary).
struct GainTable {
    std::vector<int> dims;
    std::vector<std::vector<double>> axes;
    std::vector<Mat> K;  // first axis varies slowest

    static GainTable constant(const Mat& K);
    bool is_constant() const { return dims.empty(); }
    int nodes() const { return static_cast<int>(K.size()); }
    int node_index(const std::vector<int>& idx) const;
    Mat eval(const Vec& x) const;
};

// One point of the semi-infinite LMI grid: a state/input pair and the gain-table node it uses.
struct GridPoint {
    Vec x, u;
    int node = 0;
    std::string tag;
};

struct SynthGrid {
    std::vector<GridPoint> points;
    GainTable table;  // zero gains, defines the node layout
};

// Nonlinear Jacobian coordinates are gridded with `points` values, linear ones take their two bounds.
SynthGrid make_synth_grid(const SystemModel& m, const BoxSet& x_box, const BoxSet& u_box, int points);
// Dense grid used for validation; nodes index nothing (gains are interpolated).
SynthGrid make_dense_grid(const SystemModel& m, const BoxSet& x_box, const BoxSet& u_box, int points,
                          int factor);

struct CostWeights {
    Vec c_s;          // per system row
    double c_o = 1.0; // obstacle constant
};
// Inverse squared constraint interval per row; obstacle weight from the position box.
CostWeights default_cost_weights(const BoxSet& u_box, const BoxSet& x_box, const Mat& M);

struct Multipliers {
    double lambda = 0.0;
    double lambda_delta = 0.0, lambda_delta_eps = 0.0, lambda_eps = 0.0;
};

struct ValidationReport {
    std::map<std::string, double> worst;
    std::map<std::string, std::string> tag;

    void record(const std::string& family, double residual, const std::string& where);
    bool passed(double tol = 1e-6) const;
    json to_json() const;
};

struct DesignArtifact {
    std::string variant;  // tmpc, rmpc, rompc
    std::string model_name;
    Vec w_bias;
    Mat C, F;
    BoxSet u_box, x_box, W, H;
    Mat Q, R;
    Mat P, K, Pdelta;
    GainTable Kdelta;
    double rho = 0.0, wbar = 0.0, alpha = 0.0, epsilon = 0.0, c_o = 0.0;
    double epsilon_reg = 0.0;
    Vec c_s, c_s_o;
    Mat L;
    Multipliers mult;
    int grid_points = 2;
    ValidationReport validation;

    bool robust() const { return variant == "rmpc" || variant == "rompc"; }
    SystemModel model() const;
    Polytope rows() const { return system_rows(u_box, x_box); }
    // Throws ConfigError naming the first violated invariant.
    void check_invariants() const;
};

json artifact_to_json(const DesignArtifact& a);
DesignArtifact artifact_from_json(const json& j);
DesignArtifact load_artifact(const std::string& path);
void save_artifact(const DesignArtifact& a, const std::string& path);

// ---- pipelines

struct TmpcTerminal {
    Mat P, K;
    double residual = 0.0;
};
TmpcTerminal synth_tmpc_terminal(const SystemModel& m, const Mat& Q, const Mat& R, double epsilon_reg,
                                 const SynthGrid& grid, const SdpOptions& opt = {});

// Largest alpha with the alpha-sublevel set of P inside the rows under u = u^r + K(x - x^r),
// over every reference point r = [u^r; x^r]. Throws ConfigError if a reference violates a row.
double compute_alpha_lp(const Mat& P, const Mat& K, const std::vector<Vec>& reference_points,
                        const Polytope& rows);

struct Tightening {
    Vec c_s;
    double c_o = 0.0;
};
Tightening compute_tightening_constants(const Mat& P, const GainTable& K, const Polytope& rows, const Mat& M);

struct CcmResult {
    Mat Pdelta;
    GainTable Kdelta;
    Vec c_s;
    double c_o = 0.0;
    double lambda = 0.0;
    double objective = 0.0;
    double residual = 0.0;
};
// lambda empty: searched by a logarithmic sweep followed by golden-section refinement of the objective.
CcmResult synth_ccm(const SystemModel& m, double rho, std::optional<double> lambda, const SynthGrid& grid,
                    const BoxSet& W, const Polytope& rows, const CostWeights& w, const SdpOptions& opt = {});

double compute_wbar(const Mat& Pdelta, const Mat& E, const BoxSet& W);

Mat synth_terminal_cost(const SystemModel& m, const GainTable& Kdelta, const Mat& Q, const Mat& R,
                        const SynthGrid& grid, const SdpOptions& opt = {});

struct RompcResult {
    Mat Pdelta;
    GainTable Kdelta;
    Vec c_s, c_s_o;
    double c_o = 0.0;
    double objective = 0.0;
    double residual = 0.0;
    Multipliers mult;
};
// Multipliers must satisfy lambda_delta >= lambda_delta_eps * epsilon^2 (delta = 1).
RompcResult synth_rompc(const SystemModel& m, const Mat& L, double rho, const Multipliers& mult,
                        double epsilon, const SynthGrid& grid, const BoxSet& W, const BoxSet& H,
                        const Polytope& rows, const CostWeights& w, const SdpOptions& opt = {});

double compute_wbar_o(const Mat& Pdelta, const Mat& L, const Mat& C, const Mat& F, const BoxSet& H,
                      double epsilon);

struct ObserverGain {
    Mat L;
    double l_bound = 0.0, delta2 = 0.0, epsilon2 = 0.0;
    double objective = 0.0;
};
ObserverGain optimize_observer_gain(const Mat& Pdelta, const GainTable& Kdelta, const SystemModel& m,
                                    const Multipliers& mult, const SynthGrid& grid, const BoxSet& W,
                                    const BoxSet& H, double c_l, const SdpOptions& opt = {});

// Numeric residual of ||P^{1/2} L C P^{-1/2}|| <= l in its block form (PSD margin).
double norm_bound_margin(const Mat& Pdelta, const Mat& L, const Mat& C, double l);

ValidationReport validate_design(const DesignArtifact& a, int dense_grid_factor);

// ---- configuration-driven pipeline

struct SynthConfig {
    std::string variant;
    std::string model;
    Vec w_bias;
    Mat C, F;
    BoxSet u_box, x_box, W, H;
    Mat Q, R;
    double rho = 1.0;
    std::optional<double> lambda;
    int grid_points = 5;
    int validation_factor = 10;
    double epsilon_reg = 0.0;
    std::string alpha_mode;  // lp | min | value
    double alpha_value = 0.0;
    double alpha_margin = 0.0;
    std::vector<Vec> alpha_reference;  // [u; x] points for the LP
    Mat L;
    double epsilon = 0.0;
    Multipliers mult;
    std::optional<double> lambda_eps;
    bool optimize_L = false;
    double c_l = 1.0;
    std::optional<CostWeights> weights;
    SdpOptions sdp;
};

SynthConfig parse_synth_config(const json& j);
// Throws InfeasibleError when an SDP is infeasible; validation results are stored in the artifact.
DesignArtifact run_synthesis(const SynthConfig& cfg);

} // namespace safe_nmpc
