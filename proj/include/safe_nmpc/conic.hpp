#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "safe_nmpc/common.hpp"

namespace safe_nmpc {

// Matrix-valued affine function of the flattened decision vector: c0 + sum_k x_k * terms[k].
struct AffineMat {
    int rows = 0, cols = 0;
    Mat c0;
    std::map<int, Mat> terms;

    AffineMat() = default;
    AffineMat(int r, int c) : rows(r), cols(c), c0(Mat::Zero(r, c)) {}
    static AffineMat constant(const Mat& m);
    static AffineMat zero(int r, int c) { return AffineMat(r, c); }

    Mat eval(const Vec& x) const;
    AffineMat transpose() const;
    AffineMat sym() const;  // this + this^T
    void add_term(int idx, const Mat& m);
};

AffineMat operator+(const AffineMat& a, const AffineMat& b);
AffineMat operator-(const AffineMat& a, const AffineMat& b);
AffineMat operator*(double s, const AffineMat& a);
AffineMat operator*(const Mat& m, const AffineMat& a);
AffineMat operator*(const AffineMat& a, const Mat& m);
AffineMat operator+(const AffineMat& a, const Mat& m);
AffineMat operator-(const AffineMat& a, const Mat& m);
// Block assembly; empty entries (rows == 0 && cols == 0) are zero blocks sized from their row/column.
AffineMat blocks(const std::vector<std::vector<AffineMat>>& grid);

enum class VarKind { Symmetric, Rectangular, Scalar };

struct VarBlock {
    std::string name;
    VarKind kind = VarKind::Scalar;
    int rows = 1, cols = 1;
    int offset = 0, size = 1;
};

class DecisionLayout {
public:
    int add_sym(const std::string& name, int n);
    int add_mat(const std::string& name, int rows, int cols);
    int add_scalar(const std::string& name);

    int size() const { return size_; }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const VarBlock& block(const std::string& name) const;
    const std::vector<VarBlock>& blocks() const { return blocks_; }

    AffineMat var(const std::string& name) const;
    Mat value(const Vec& x, const std::string& name) const;
    // Symmetric blocks store upper-triangular entries, row by row.
    Vec flatten(const std::map<std::string, Mat>& values) const;
    std::map<std::string, Mat> unflatten(const Vec& x) const;

private:
    int add(VarBlock b);
    std::vector<VarBlock> blocks_;
    std::map<std::string, int> index_;
    int size_ = 0;
};

enum class Sense { NSD, PSD };  // A <= 0 or A >= 0

struct LmiBlock {
    Mat c0;
    std::vector<std::pair<int, Mat>> terms;
    Sense sense = Sense::NSD;
    std::string tag;

    static LmiBlock from(const AffineMat& a, Sense sense, const std::string& tag);
    int dim() const { return static_cast<int>(c0.rows()); }
    Mat eval(const Vec& x) const;
};

struct LmiCheck {
    bool feasible = false;
    double margin = 0.0;
};

// margin = max eigenvalue for NSD, -(min eigenvalue) for PSD; feasible iff margin <= tol.
LmiCheck check_lmi(const Mat& S, Sense sense, double tol);

enum class SdpStatus { Optimal, Feasible, Infeasible, MaxIter };
std::string to_string(SdpStatus s);

struct SdpProblem {
    DecisionLayout layout;
    Vec c;  // linear objective (empty -> zero)
    // Weighted -log det terms of symmetric affine expressions added to the objective.
    std::vector<std::pair<AffineMat, double>> logdet;
    std::vector<LmiBlock> lmis;
    double var_bound = 1e6;  // |x_k| <= var_bound keeps Newton systems bounded

    void add_lmi(const AffineMat& a, Sense sense, const std::string& tag);
    void minimize_trace(const std::string& sym_var, double weight = 1.0);
    void minimize_scalar(const std::string& var, double weight);
    void minimize_logdet_neg(const std::string& sym_var, double weight = 1.0);
};

struct SdpSolution {
    Vec x;
    double objective = 0.0;
    double residual = 0.0;  // worst max eigenvalue in the violating direction
    std::string worst_tag;
    double gap = 0.0;
    int iterations = 0;
    SdpStatus status = SdpStatus::Infeasible;

    bool ok() const { return status == SdpStatus::Optimal || status == SdpStatus::Feasible; }
};

struct SdpOptions {
    double tol = 1e-7;        // LMI residual tolerance and infeasibility threshold
    double gap = 1e-9;        // duality-gap target for the barrier path
    int max_iter = 400;       // total Newton iterations
    bool feasibility_only = false;
};

SdpSolution solve_sdp(const SdpProblem& p, const SdpOptions& opt = {});
SdpSolution solve_sdp(const SdpProblem& p, double tol, int max_iter);

// Worst residual over all blocks at x, with the tag of the worst block.
double lmi_residual(const std::vector<LmiBlock>& lmis, const Vec& x, std::string* tag = nullptr);

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
    LpStatus status = LpStatus::Infeasible;
    double value = 0.0;
    Vec x;
    int binding_row = -1;
};

// max alpha s.t. a_j alpha <= b_j (single-variable LP; value is the tightest row ratio).
LpResult solve_lp_1d(const Vec& a, const Vec& b);
// max c^T x s.t. A x <= b, x free. Two-phase dense simplex with Bland's rule.
LpResult solve_lp(const Vec& c, const Mat& A, const Vec& b);

// Largest multiplier in [lo, hi] with probe true (probe(lo) must hold). Throws InfeasibleError.
double bisect_multiplier(double lo, double hi, const std::function<bool(double)>& probe, int iters);
// Golden-section minimization of a unimodal function on [lo, hi].
double golden_minimize(double lo, double hi, const std::function<double(double)>& f, int iters);

} // namespace safe_nmpc
