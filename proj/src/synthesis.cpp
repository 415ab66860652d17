#include "safe_nmpc/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <fmt/format.h>

namespace safe_nmpc {

// ---------------------------------------------------------------- gain table

GainTable GainTable::constant(const Mat& K) {
    GainTable t;
    t.K.push_back(K);
    return t;
}

int GainTable::node_index(const std::vector<int>& idx) const {
    int k = 0;
    for (size_t d = 0; d < axes.size(); ++d)
        k = k * static_cast<int>(axes[d].size()) + idx[d];
    return k;
}

Mat GainTable::eval(const Vec& x) const {
    require(!K.empty(), "empty gain table");
    if (dims.empty())
        return K[0];
    const size_t nd = dims.size();
    std::vector<int> lo(nd);
    std::vector<double> frac(nd);
    for (size_t d = 0; d < nd; ++d) {
        const auto& ax = axes[d];
        const double v = x(dims[d]);
        if (ax.size() == 1 || v <= ax.front()) {
            lo[d] = 0;
            frac[d] = 0.0;
        } else if (v >= ax.back()) {
            lo[d] = static_cast<int>(ax.size()) - 2;
            frac[d] = 1.0;
        } else {
            const auto it = std::upper_bound(ax.begin(), ax.end(), v);
            lo[d] = static_cast<int>(it - ax.begin()) - 1;
            frac[d] = (v - ax[lo[d]]) / (ax[lo[d] + 1] - ax[lo[d]]);
        }
    }
    Mat out = Mat::Zero(K[0].rows(), K[0].cols());
    std::vector<int> idx(nd);
    for (unsigned mask = 0; mask < (1u << nd); ++mask) {
        double w = 1.0;
        bool valid = true;
        for (size_t d = 0; d < nd; ++d) {
            const bool hi = (mask >> d) & 1u;
            if (axes[d].size() == 1) {
                if (hi) {
                    valid = false;
                    break;
                }
                idx[d] = 0;
                continue;
            }
            idx[d] = lo[d] + (hi ? 1 : 0);
            w *= hi ? frac[d] : 1.0 - frac[d];
        }
        if (valid && w != 0.0)
            out += w * K[node_index(idx)];
    }
    return out;
}

// ---------------------------------------------------------------- grids

namespace {

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i)
        v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
    v.back() = b;
    return v;
}

SynthGrid build_grid(const SystemModel& m, const BoxSet& x_box, const BoxSet& u_box, int points) {
    require(points >= 2, "grid needs at least two points per gridded dimension");
    require(x_box.dim() == m.n_x && u_box.dim() == m.n_u, "constraint boxes do not match the model");
    struct Axis {
        int dim;
        std::vector<double> values;
    };
    std::vector<Axis> axes;
    auto bounds = [&](int d) {
        return d < m.n_x ? std::pair{x_box.lower(d), x_box.upper(d)}
                         : std::pair{u_box.lower(d - m.n_x), u_box.upper(d - m.n_x)};
    };
    std::vector<int> all;
    for (int d : m.structure.nonlinear)
        all.push_back(d);
    for (int d : m.structure.linear)
        all.push_back(d);
    std::sort(all.begin(), all.end());
    for (int d : all) {
        const auto [lo, hi] = bounds(d);
        const bool nonlinear =
            std::find(m.structure.nonlinear.begin(), m.structure.nonlinear.end(), d) != m.structure.nonlinear.end();
        axes.push_back({d, nonlinear ? linspace(lo, hi, points) : std::vector<double>{lo, hi}});
    }
    SynthGrid g;
    std::vector<int> state_axes;
    for (size_t a = 0; a < axes.size(); ++a)
        if (axes[a].dim < m.n_x) {
            g.table.dims.push_back(axes[a].dim);
            g.table.axes.push_back(axes[a].values);
            state_axes.push_back(static_cast<int>(a));
        }
    int nodes = 1;
    for (const auto& ax : g.table.axes)
        nodes *= static_cast<int>(ax.size());
    g.table.K.assign(nodes, Mat::Zero(m.n_u, m.n_x));

    const Vec xc = 0.5 * (x_box.lower + x_box.upper);
    const Vec uc = 0.5 * (u_box.lower + u_box.upper);
    std::vector<int> idx(axes.size(), 0);
    while (true) {
        GridPoint p;
        p.x = xc;
        p.u = uc;
        std::string tag = "grid";
        for (size_t a = 0; a < axes.size(); ++a) {
            const double v = axes[a].values[idx[a]];
            if (axes[a].dim < m.n_x)
                p.x(axes[a].dim) = v;
            else
                p.u(axes[a].dim - m.n_x) = v;
            tag += fmt::format("[{}]={}", axes[a].dim, v);
        }
        std::vector<int> node(state_axes.size());
        for (size_t s = 0; s < state_axes.size(); ++s)
            node[s] = idx[state_axes[s]];
        p.node = g.table.node_index(node);
        p.tag = axes.empty() ? "grid" : tag;
        g.points.push_back(p);
        int a = static_cast<int>(axes.size()) - 1;
        while (a >= 0 && ++idx[a] == static_cast<int>(axes[a].values.size())) {
            idx[a] = 0;
            --a;
        }
        if (a < 0)
            break;
    }
    return g;
}

} // namespace

SynthGrid make_synth_grid(const SystemModel& m, const BoxSet& x_box, const BoxSet& u_box, int points) {
    return build_grid(m, x_box, u_box, points);
}

SynthGrid make_dense_grid(const SystemModel& m, const BoxSet& x_box, const BoxSet& u_box, int points,
                          int factor) {
    require(factor >= 1, "validation factor must be >= 1");
    SynthGrid g = build_grid(m, x_box, u_box, (points - 1) * factor + 1);
    for (auto& p : g.points)
        p.node = -1;
    return g;
}

CostWeights default_cost_weights(const BoxSet& u_box, const BoxSet& x_box, const Mat& M) {
    const Polytope rows = system_rows(u_box, x_box);
    CostWeights w;
    w.c_s = Vec(rows.rows());
    const int nu = u_box.dim();
    for (int j = 0; j < rows.rows(); ++j) {
        const int i = j / 2;
        const double width = i < nu ? u_box.upper(i) - u_box.lower(i) : x_box.upper(i - nu) - x_box.lower(i - nu);
        w.c_s(j) = width > 0 ? 1.0 / (width * width) : 1.0;
    }
    const Vec widths = M.cwiseAbs() * (x_box.upper - x_box.lower);
    const double mean = widths.size() ? widths.mean() : 1.0;
    w.c_o = mean > 0 ? 1.0 / (mean * mean) : 1.0;
    return w;
}

// ---------------------------------------------------------------- validation report

void ValidationReport::record(const std::string& family, double residual, const std::string& where) {
    auto it = worst.find(family);
    if (it == worst.end() || residual > it->second) {
        worst[family] = residual;
        tag[family] = where;
    }
}

bool ValidationReport::passed(double tol) const {
    for (const auto& [f, r] : worst)
        if (!(r <= tol))
            return false;
    return true;
}

json ValidationReport::to_json() const {
    json j = json::object();
    for (const auto& [f, r] : worst)
        j[f] = {{"worst_residual", r}, {"at", tag.at(f)}};
    return j;
}

// ---------------------------------------------------------------- helpers

namespace {

AffineMat cst(const Mat& m) { return AffineMat::constant(m); }
AffineMat cst(double v) { return AffineMat::constant(Mat::Constant(1, 1, v)); }
AffineMat none() { return AffineMat(); }

// s * M for a scalar affine expression s.
AffineMat scaled(const AffineMat& s, const Mat& M) {
    AffineMat out = AffineMat::constant(s.c0(0, 0) * M);
    for (const auto& [k, t] : s.terms)
        out.add_term(k, t(0, 0) * M);
    return out;
}

std::vector<Vec> box_vertices(const BoxSet& b) {
    if (b.dim() == 0)
        return {};
    return b.vertices();
}

void jacobians(const SystemModel& m, const GridPoint& p, Mat& A, Mat& B) { m.jac(p.x, p.u, A, B); }

// L_j [Y; X] for a row on [u; x].
AffineMat row_times(const Polytope& rows, int j, int nu, const AffineMat& Y, const AffineMat& X) {
    const Mat Lu = rows.L.row(j).head(nu);
    const Mat Lx = rows.L.row(j).tail(rows.L.cols() - nu);
    return Lu * Y + Lx * X;
}

std::vector<int> unique_nodes(const SynthGrid& g) {
    std::vector<int> nodes;
    for (const auto& p : g.points)
        if (std::find(nodes.begin(), nodes.end(), p.node) == nodes.end())
            nodes.push_back(p.node);
    return nodes;
}

void require_solved(const SdpSolution& s, const std::string& what) {
    if (s.status == SdpStatus::Infeasible)
        throw InfeasibleError(fmt::format("{} infeasible (worst residual {:.3e} at {})", what, s.residual,
                                          s.worst_tag));
}

// Sweep then golden-section refine a multiplier; `objective` returns +inf when infeasible.
double search_multiplier(double lo, double hi, const std::function<double(double)>& objective,
                         const std::string& what) {
    const int n = 16;
    std::vector<double> grid(n), val(n);
    int best = -1;
    for (int i = 0; i < n; ++i) {
        grid[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
        val[i] = objective(grid[i]);
        if (std::isfinite(val[i]) && (best < 0 || val[i] < val[best]))
            best = i;
    }
    if (best < 0)
        throw InfeasibleError(what + ": no feasible multiplier in the searched range");
    const double a = grid[std::max(0, best - 1)], b = grid[std::min(n - 1, best + 1)];
    const double l = golden_minimize(a, b, objective, 20);
    return objective(l) <= val[best] ? l : grid[best];
}

} // namespace

// ---------------------------------------------------------------- TMPC terminal ingredients

TmpcTerminal synth_tmpc_terminal(const SystemModel& m, const Mat& Q, const Mat& R, double epsilon_reg,
                                 const SynthGrid& grid, const SdpOptions& opt) {
    require(Q.rows() == m.n_x && R.rows() == m.n_u, "Q/R dimensions do not match the model");
    require(min_eig(Q) > 0 && min_eig(R) > 0, "Q and R must be positive definite");
    require(!grid.points.empty(), "empty synthesis grid");
    const int n = m.n_x, nu = m.n_u;
    const Mat Qh = sqrtm_spd(Q + epsilon_reg * Mat::Identity(n, n));
    const Mat Rh = sqrtm_spd(R);
    SdpProblem p;
    p.layout.add_sym("X", n);
    p.layout.add_mat("Y", nu, n);
    const AffineMat X = p.layout.var("X"), Y = p.layout.var("Y");
    p.add_lmi(X, Sense::PSD, "X");
    Mat A, B;
    for (const auto& gp : grid.points) {
        jacobians(m, gp, A, B);
        const AffineMat S = (A * X + B * Y).sym();
        const AffineMat QX = Qh * X, RY = Rh * Y;
        p.add_lmi(blocks({{S, QX.transpose(), RY.transpose()},
                          {QX, cst(Mat(-Mat::Identity(n, n))), none()},
                          {RY, none(), cst(Mat(-Mat::Identity(nu, nu)))}}),
                  Sense::NSD, "tracking " + gp.tag);
    }
    p.minimize_logdet_neg("X");
    SdpSolution s = solve_sdp(p, opt);
    require_solved(s, "terminal ingredient SDP");
    TmpcTerminal t;
    const Mat Xv = p.layout.value(s.x, "X");
    t.P = Xv.inverse();
    t.P = 0.5 * (t.P + t.P.transpose());
    t.K = p.layout.value(s.x, "Y") * t.P;
    t.residual = s.residual;
    return t;
}

double compute_alpha_lp(const Mat& P, const Mat& K, const std::vector<Vec>& reference_points,
                        const Polytope& rows) {
    require(min_eig(P) > 0, "alpha LP needs a positive definite P");
    const int nu = static_cast<int>(K.rows());
    const Mat Pih = inv_sqrtm_spd(P);
    std::vector<double> a, b;
    for (const Vec& r : reference_points) {
        require(r.size() == rows.L.cols(), "reference point must be [u; x]");
        for (int j = 0; j < rows.rows(); ++j) {
            const Mat Lu = rows.L.row(j).head(nu), Lx = rows.L.row(j).tail(rows.L.cols() - nu);
            const Mat g = Lu * K + Lx;
            const double d = (Pih * g.transpose()).norm();
            const double num = rows.l(j) - rows.L.row(j).dot(r);
            if (num < 0)
                throw ConfigError(fmt::format("design inconsistency: reference violates row {} by {:.3e}", j, -num));
            a.push_back(d);
            b.push_back(num);
        }
    }
    const LpResult lp = solve_lp_1d(Eigen::Map<Vec>(a.data(), a.size()), Eigen::Map<Vec>(b.data(), b.size()));
    require(lp.status == LpStatus::Optimal, "alpha LP is unbounded (no constraining rows)");
    return lp.value;
}

Tightening compute_tightening_constants(const Mat& P, const GainTable& K, const Polytope& rows, const Mat& M) {
    require(min_eig(P) > 0, "tightening needs a positive definite metric");
    const Mat Pih = inv_sqrtm_spd(P);
    const int nu = static_cast<int>(K.K.front().rows());
    Tightening t;
    t.c_s = Vec::Zero(rows.rows());
    for (int j = 0; j < rows.rows(); ++j) {
        const Mat Lu = rows.L.row(j).head(nu), Lx = rows.L.row(j).tail(rows.L.cols() - nu);
        for (const Mat& Kk : K.K)
            t.c_s(j) = std::max(t.c_s(j), (Pih * (Lu * Kk + Lx).transpose()).norm());
    }
    t.c_o = spectral_norm(Pih * M.transpose());
    return t;
}

double compute_wbar(const Mat& Pdelta, const Mat& E, const BoxSet& W) {
    double best = 0.0;
    for (const Vec& w : box_vertices(W)) {
        const Vec e = E * w;
        best = std::max(best, std::sqrt(std::max(0.0, e.dot(Pdelta * e))));
    }
    return best;
}

double compute_wbar_o(const Mat& Pdelta, const Mat& L, const Mat& C, const Mat& F, const BoxSet& H,
                      double epsilon) {
    double best = 0.0;
    for (const Vec& eta : box_vertices(H)) {
        const Vec e = L * F * eta;
        best = std::max(best, std::sqrt(std::max(0.0, e.dot(Pdelta * e))));
    }
    const double gain = spectral_norm(sqrtm_spd(Pdelta) * L * C * inv_sqrtm_spd(Pdelta));
    return best + gain * epsilon;
}

double norm_bound_margin(const Mat& Pdelta, const Mat& L, const Mat& C, double l) {
    const int n = static_cast<int>(Pdelta.rows());
    Mat S(2 * n, 2 * n);
    const Mat PLC = Pdelta * L * C;
    S << Pdelta, PLC, PLC.transpose(), l * l * Pdelta;
    return check_lmi(0.5 * (S + S.transpose()), Sense::PSD, 0.0).margin;
}

// ---------------------------------------------------------------- contraction metric SDPs

namespace {

struct MetricVars {
    AffineMat X;
    std::vector<AffineMat> Y;  // per table node
};

// Shared variables and LMIs of the robust SDPs: X, Y per node, c^2 per row, c_o^2, contraction,
// Lipschitz and obstacle LMIs.
MetricVars add_metric_core(SdpProblem& p, const SystemModel& m, double rho, const SynthGrid& grid,
                           const Polytope& rows) {
    const int n = m.n_x, nu = m.n_u;
    p.layout.add_sym("X", n);
    for (int k = 0; k < grid.table.nodes(); ++k)
        p.layout.add_mat(fmt::format("Y{}", k), nu, n);
    for (int j = 0; j < rows.rows(); ++j)
        p.layout.add_scalar(fmt::format("cs{}", j));
    p.layout.add_scalar("co");
    MetricVars v;
    v.X = p.layout.var("X");
    for (int k = 0; k < grid.table.nodes(); ++k)
        v.Y.push_back(p.layout.var(fmt::format("Y{}", k)));
    p.add_lmi(v.X, Sense::PSD, "X");
    Mat A, B;
    for (const auto& gp : grid.points) {
        jacobians(m, gp, A, B);
        p.add_lmi((A * v.X + B * v.Y[gp.node]).sym() + 2.0 * rho * v.X, Sense::NSD, "contraction " + gp.tag);
    }
    for (int node : unique_nodes(grid))
        for (int j = 0; j < rows.rows(); ++j) {
            const AffineMat r = row_times(rows, j, nu, v.Y[node], v.X);
            p.add_lmi(blocks({{p.layout.var(fmt::format("cs{}", j)), r}, {r.transpose(), v.X}}), Sense::PSD,
                      fmt::format("lipschitz row {} node {}", j, node));
        }
    const int np = static_cast<int>(m.M.rows());
    const AffineMat MX = m.M * v.X;
    p.add_lmi(blocks({{scaled(p.layout.var("co"), Mat::Identity(np, np)), MX}, {MX.transpose(), v.X}}), Sense::PSD,
              "lipschitz obstacle");
    return v;
}

void extract_metric(const SdpProblem& p, const SdpSolution& s, const SynthGrid& grid, Mat& Pd, GainTable& K) {
    const Mat X = p.layout.value(s.x, "X");
    Pd = X.inverse();
    Pd = 0.5 * (Pd + Pd.transpose());
    K = grid.table;
    for (int k = 0; k < K.nodes(); ++k)
        K.K[k] = p.layout.value(s.x, fmt::format("Y{}", k)) * Pd;
}

} // namespace

CcmResult synth_ccm(const SystemModel& m, double rho, std::optional<double> lambda, const SynthGrid& grid,
                    const BoxSet& W, const Polytope& rows, const CostWeights& w, const SdpOptions& opt) {
    require(rho > 0, "contraction rate must be positive");
    require(W.dim() == m.n_w, "disturbance box does not match n_w");
    require(w.c_s.size() == rows.rows(), "cost weights do not match the rows");
    const int n = m.n_x;
    auto build = [&](double lam) {
        SdpProblem p;
        MetricVars v = add_metric_core(p, m, rho, grid, rows);
        p.layout.add_sym("Wbar", n + 1);
        const AffineMat Wb = p.layout.var("Wbar");
        for (const Vec& w0 : box_vertices(W)) {
            Mat Z = Mat::Zero(n + 1, n + 1);
            Z.block(0, n, n, 1) = m.E * w0;
            Z.block(n, 0, 1, n) = (m.E * w0).transpose();
            p.add_lmi(cst(Z) - Wb, Sense::NSD, "rpi vertex");
        }
        Mat A, B;
        for (const auto& gp : grid.points) {
            jacobians(m, gp, A, B);
            const AffineMat S = (A * v.X + B * v.Y[gp.node]).sym() + lam * v.X;
            p.add_lmi(Wb + blocks({{S, none()}, {none(), cst(-lam)}}), Sense::NSD, "rpi " + gp.tag);
        }
        p.c = Vec::Zero(p.layout.size());
        for (int j = 0; j < rows.rows(); ++j)
            p.minimize_scalar(fmt::format("cs{}", j), w.c_s(j));
        p.minimize_scalar("co", w.c_o);
        return p;
    };
    auto objective = [&](double lam) {
        const SdpSolution s = solve_sdp(build(lam), opt);
        return s.ok() ? s.objective : std::numeric_limits<double>::infinity();
    };
    const double lam = lambda ? *lambda : search_multiplier(1e-3 * rho, 4.0 * rho, objective, "RPI multiplier");
    const SdpProblem p = build(lam);
    const SdpSolution s = solve_sdp(p, opt);
    require_solved(s, "contraction metric SDP");
    CcmResult r;
    extract_metric(p, s, grid, r.Pdelta, r.Kdelta);
    const Tightening t = compute_tightening_constants(r.Pdelta, r.Kdelta, rows, m.M);
    r.c_s = t.c_s;
    r.c_o = t.c_o;
    r.lambda = lam;
    r.objective = s.objective;
    r.residual = s.residual;
    return r;
}

Mat synth_terminal_cost(const SystemModel& m, const GainTable& Kdelta, const Mat& Q, const Mat& R,
                        const SynthGrid& grid, const SdpOptions& opt) {
    const int n = m.n_x;
    SdpProblem p;
    p.layout.add_sym("P", n);
    const AffineMat P = p.layout.var("P");
    p.add_lmi(P, Sense::PSD, "P");
    Mat A, B;
    for (const auto& gp : grid.points) {
        jacobians(m, gp, A, B);
        const Mat K = Kdelta.eval(gp.x);
        const Mat Acl = A + B * K;
        p.add_lmi((Acl.transpose() * P).sym() + Mat(Q + K.transpose() * R * K), Sense::NSD,
                  "terminal cost " + gp.tag);
    }
    p.minimize_trace("P");
    const SdpSolution s = solve_sdp(p, opt);
    require_solved(s, "terminal cost SDP");
    Mat Pv = p.layout.value(s.x, "P");
    return 0.5 * (Pv + Pv.transpose());
}

RompcResult synth_rompc(const SystemModel& m, const Mat& L, double rho, const Multipliers& mult,
                        double epsilon, const SynthGrid& grid, const BoxSet& W, const BoxSet& H,
                        const Polytope& rows, const CostWeights& w, const SdpOptions& opt) {
    require(rho > 0 && epsilon > 0, "rho and epsilon must be positive");
    require(L.rows() == m.n_x && L.cols() == m.n_y, "observer gain must be n_x x n_y");
    require(H.dim() == m.n_eta && W.dim() == m.n_w, "noise/disturbance boxes do not match the model");
    require(mult.lambda_delta >= 0 && mult.lambda_delta_eps >= 0 && mult.lambda_eps >= 0,
            "multipliers must be nonnegative");
    require(mult.lambda_delta >= mult.lambda_delta_eps * epsilon * epsilon,
            "multiplier inequality violated: lambda_delta must be >= lambda_delta_eps * epsilon^2");
    const int n = m.n_x, nu = m.n_u;
    const double e2 = epsilon * epsilon;
    SdpProblem p;
    MetricVars v = add_metric_core(p, m, rho, grid, rows);
    p.layout.add_sym("Hbar", 2 * n + 1);
    p.layout.add_sym("Wbar", n + 1);
    p.layout.add_sym("Hbar1", n + 1);
    const AffineMat Hb = p.layout.var("Hbar"), Wb = p.layout.var("Wbar"), H1 = p.layout.var("Hbar1");
    const Mat LC = L * m.C;
    for (const Vec& eta : box_vertices(H)) {
        const Vec lf = L * m.F * eta;
        Mat Z = Mat::Zero(2 * n + 1, 2 * n + 1);
        Z.block(0, 2 * n, n, 1) = lf;
        Z.block(2 * n, 0, 1, n) = lf.transpose();
        p.add_lmi(cst(Z) - Hb, Sense::NSD, "rpi_delta vertex");
        Mat Z1 = Mat::Zero(n + 1, n + 1);
        Z1.block(0, n, n, 1) = -lf;
        Z1.block(n, 0, 1, n) = -lf.transpose();
        p.add_lmi(cst(Z1) - H1, Sense::NSD, "rpi_eps noise vertex");
    }
    for (const Vec& w0 : box_vertices(W)) {
        const Vec ew = m.E * w0;
        Mat Z = Mat::Zero(n + 1, n + 1);
        Z.block(0, n, n, 1) = ew;
        Z.block(n, 0, 1, n) = ew.transpose();
        p.add_lmi(cst(Z) - Wb, Sense::NSD, "rpi_eps disturbance vertex");
    }
    Mat A, B;
    for (const auto& gp : grid.points) {
        jacobians(m, gp, A, B);
        const AffineMat S = (A * v.X + B * v.Y[gp.node]).sym() + mult.lambda_delta * v.X;
        const AffineMat LCX = LC * v.X;
        p.add_lmi(Hb + blocks({{S, LCX, AffineMat::zero(n, 1)},
                               {LCX.transpose(), (-mult.lambda_delta_eps) * v.X, AffineMat::zero(n, 1)},
                               {AffineMat::zero(1, n), AffineMat::zero(1, n),
                                cst(mult.lambda_delta_eps * e2 - mult.lambda_delta)}}),
                  Sense::NSD, "rpi_delta " + gp.tag);
        const AffineMat Se = (Mat(A - LC) * v.X).sym() + mult.lambda_eps * v.X;
        p.add_lmi(Wb + H1 + blocks({{Se, none()}, {none(), cst(-mult.lambda_eps * e2)}}), Sense::NSD,
                  "rpi_eps " + gp.tag);
    }
    p.c = Vec::Zero(p.layout.size());
    for (int j = 0; j < rows.rows(); ++j)
        p.minimize_scalar(fmt::format("cs{}", j), (j < 2 * nu ? 1.0 : 1.0 + e2) * w.c_s(j));
    p.minimize_scalar("co", (1.0 + e2) * w.c_o);
    const SdpSolution s = solve_sdp(p, opt);
    require_solved(s, "output-feedback metric SDP");
    RompcResult r;
    extract_metric(p, s, grid, r.Pdelta, r.Kdelta);
    const Tightening t = compute_tightening_constants(r.Pdelta, r.Kdelta, rows, m.M);
    r.c_s = t.c_s;
    r.c_o = t.c_o;
    r.c_s_o = t.c_s;
    r.c_s_o.head(2 * nu).setZero();
    r.objective = s.objective;
    r.residual = s.residual;
    r.mult = mult;
    return r;
}

ObserverGain optimize_observer_gain(const Mat& Pdelta, const GainTable& Kdelta, const SystemModel& m,
                                    const Multipliers& mult, const SynthGrid& grid, const BoxSet& W,
                                    const BoxSet& H, double c_l, const SdpOptions& opt) {
    const int n = m.n_x;
    const Mat X = Pdelta.inverse();
    SdpProblem p;
    p.layout.add_mat("L", n, m.n_y);
    p.layout.add_scalar("eps2");
    p.layout.add_scalar("delta2");
    p.layout.add_scalar("l2");
    const AffineMat L = p.layout.var("L"), e2 = p.layout.var("eps2"), d2 = p.layout.var("delta2"),
                    l2 = p.layout.var("l2");
    const AffineMat LCX = L * Mat(m.C * X);
    Mat A, B;
    for (const auto& gp : grid.points) {
        jacobians(m, gp, A, B);
        const Mat Y = Kdelta.eval(gp.x) * X;
        const Mat S = A * X + B * Y + (A * X + B * Y).transpose() + mult.lambda_delta * X;
        const AffineMat Se = cst(Mat(A * X + X * A.transpose() + mult.lambda_eps * X)) - LCX.sym();
        for (const Vec& eta : box_vertices(H)) {
            const AffineMat LFe = L * Mat(m.F * eta);
            p.add_lmi(blocks({{cst(S), LCX, LFe},
                              {LCX.transpose(), cst(Mat(-mult.lambda_delta_eps * X)), AffineMat::zero(n, 1)},
                              {LFe.transpose(), AffineMat::zero(1, n),
                               mult.lambda_delta_eps * e2 - mult.lambda_delta * d2}}),
                      Sense::NSD, "rpi_delta " + gp.tag);
            for (const Vec& w0 : box_vertices(W)) {
                const AffineMat off = cst(Mat(m.E * w0)) - LFe;
                p.add_lmi(blocks({{Se, off}, {off.transpose(), (-mult.lambda_eps) * e2}}), Sense::NSD,
                          "rpi_eps " + gp.tag);
            }
        }
    }
    const AffineMat PLC = Pdelta * L * m.C;
    p.add_lmi(blocks({{cst(Pdelta), PLC}, {PLC.transpose(), scaled(l2, Pdelta)}}), Sense::PSD, "norm bound");
    p.c = Vec::Zero(p.layout.size());
    p.minimize_scalar("eps2", mult.lambda_delta_eps);
    p.minimize_scalar("delta2", mult.lambda_delta);
    p.minimize_scalar("l2", c_l);
    const SdpSolution s = solve_sdp(p, opt);
    require_solved(s, "observer gain SDP");
    ObserverGain g;
    g.L = p.layout.value(s.x, "L");
    g.epsilon2 = s.x(p.layout.block("eps2").offset);
    g.delta2 = s.x(p.layout.block("delta2").offset);
    g.l_bound = std::sqrt(std::max(0.0, s.x(p.layout.block("l2").offset)));
    g.objective = s.objective;
    return g;
}

// ---------------------------------------------------------------- validation

ValidationReport validate_design(const DesignArtifact& a, int dense_grid_factor) {
    const SystemModel m = a.model();
    const SynthGrid g = make_dense_grid(m, a.x_box, a.u_box, a.grid_points, dense_grid_factor);
    const Polytope rows = a.rows();
    const int n = m.n_x, nu = m.n_u;
    ValidationReport rep;
    Mat A, B;
    if (a.variant == "tmpc") {
        const Mat X = a.P.inverse(), Y = a.K * X;
        const Mat Qh = sqrtm_spd(a.Q + a.epsilon_reg * Mat::Identity(n, n)), Rh = sqrtm_spd(a.R);
        for (const auto& gp : g.points) {
            m.jac(gp.x, gp.u, A, B);
            Mat S = Mat::Zero(2 * n + nu, 2 * n + nu);
            S.block(0, 0, n, n) = A * X + B * Y + (A * X + B * Y).transpose();
            S.block(n, 0, n, n) = Qh * X;
            S.block(0, n, n, n) = (Qh * X).transpose();
            S.block(2 * n, 0, nu, n) = Rh * Y;
            S.block(0, 2 * n, n, nu) = (Rh * Y).transpose();
            S.block(n, n, n, n) = -Mat::Identity(n, n);
            S.block(2 * n, 2 * n, nu, nu) = -Mat::Identity(nu, nu);
            rep.record("tracking", check_lmi(0.5 * (S + S.transpose()), Sense::NSD, 0).margin, gp.tag);
        }
        return rep;
    }
    const Mat X = a.Pdelta.inverse();
    const auto sym = [](const Mat& S) { return Mat(0.5 * (S + S.transpose())); };
    for (const auto& gp : g.points) {
        m.jac(gp.x, gp.u, A, B);
        const Mat K = a.Kdelta.eval(gp.x);
        const Mat Y = K * X;
        const Mat S = A * X + B * Y + (A * X + B * Y).transpose();
        rep.record("contraction", check_lmi(sym(S + 2 * a.rho * X), Sense::NSD, 0).margin, gp.tag);
        for (int j = 0; j < rows.rows(); ++j) {
            const Mat r = rows.L.row(j).head(nu) * Y + rows.L.row(j).tail(n) * X;
            Mat Lm(n + 1, n + 1);
            Lm << a.c_s(j) * a.c_s(j), r, r.transpose(), X;
            rep.record("lipschitz_sys", check_lmi(sym(Lm), Sense::PSD, 0).margin, fmt::format("row {} {}", j, gp.tag));
        }
        const Mat Acl = A + B * K;
        rep.record("terminal_cost",
                   check_lmi(sym(Acl.transpose() * a.P + a.P * Acl + a.Q + K.transpose() * a.R * K), Sense::NSD, 0)
                       .margin,
                   gp.tag);
        if (a.variant == "rmpc") {
            const double lam = a.mult.lambda;
            for (const Vec& w0 : box_vertices(a.W)) {
                Mat R(n + 1, n + 1);
                R << S + lam * X, m.E * w0, (m.E * w0).transpose(), Mat::Constant(1, 1, -lam);
                rep.record("rpi", check_lmi(sym(R), Sense::NSD, 0).margin, gp.tag);
            }
        } else {
            const Multipliers& mu = a.mult;
            const double e2 = a.epsilon * a.epsilon;
            const Mat LCX = a.L * m.C * X;
            for (const Vec& eta : box_vertices(a.H)) {
                const Vec lf = a.L * m.F * eta;
                Mat D = Mat::Zero(2 * n + 1, 2 * n + 1);
                D.block(0, 0, n, n) = S + mu.lambda_delta * X;
                D.block(0, n, n, n) = LCX;
                D.block(n, 0, n, n) = LCX.transpose();
                D.block(n, n, n, n) = -mu.lambda_delta_eps * X;
                D.block(0, 2 * n, n, 1) = lf;
                D.block(2 * n, 0, 1, n) = lf.transpose();
                D(2 * n, 2 * n) = mu.lambda_delta_eps * e2 - mu.lambda_delta;
                rep.record("rpi_delta", check_lmi(sym(D), Sense::NSD, 0).margin, gp.tag);
                const Mat Ae = A - a.L * m.C;
                for (const Vec& w0 : box_vertices(a.W)) {
                    Mat Ee(n + 1, n + 1);
                    const Vec off = m.E * w0 - lf;
                    Ee << Ae * X + X * Ae.transpose() + mu.lambda_eps * X, off, off.transpose(),
                        Mat::Constant(1, 1, -mu.lambda_eps * e2);
                    rep.record("rpi_eps", check_lmi(sym(Ee), Sense::NSD, 0).margin, gp.tag);
                }
            }
        }
    }
    const int np = static_cast<int>(m.M.rows());
    Mat O(np + n, np + n);
    O << a.c_o * a.c_o * Mat::Identity(np, np), m.M * X, (m.M * X).transpose(), X;
    rep.record("lipschitz_obs", check_lmi(sym(O), Sense::PSD, 0).margin, "obstacle");
    return rep;
}

// ---------------------------------------------------------------- artifact

SystemModel DesignArtifact::model() const {
    ModelOptions o;
    o.w_bias = w_bias;
    o.C = C;
    o.F = F;
    return make_model(model_name, o);
}

void DesignArtifact::check_invariants() const {
    auto fail = [](const std::string& name) { throw ConfigError("artifact invariant violated: " + name); };
    if (variant != "tmpc" && variant != "rmpc" && variant != "rompc")
        fail("variant");
    const SystemModel m = model();
    if (P.rows() != m.n_x || P.cols() != m.n_x || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9 ||
        min_eig(P) <= 0)
        fail("P symmetric positive definite");
    if (Pdelta.rows() != m.n_x || Pdelta.cols() != m.n_x ||
        (Pdelta - Pdelta.transpose()).cwiseAbs().maxCoeff() > 1e-9 || min_eig(Pdelta) <= 0)
        fail("Pdelta symmetric positive definite");
    if (Kdelta.K.empty())
        fail("Kdelta gain table");
    for (const Mat& k : Kdelta.K)
        if (k.rows() != m.n_u || k.cols() != m.n_x)
            fail("Kdelta gain dimensions");
    if (u_box.dim() != m.n_u || x_box.dim() != m.n_x)
        fail("constraint box dimensions");
    if (alpha < 0)
        fail("alpha >= 0");
    if (variant == "tmpc") {
        if (K.rows() != m.n_u || K.cols() != m.n_x)
            fail("K dimensions");
    } else {
        if (!(rho > 0))
            fail("rho > 0");
        if (wbar < 0 || c_o < 0 || c_s.size() != 2 * (m.n_u + m.n_x) || (c_s.array() < 0).any())
            fail("tightening constants nonnegative");
        if (W.dim() != m.n_w)
            fail("disturbance box dimensions");
    }
    if (variant == "rmpc" && alpha < wbar / rho - 1e-12)
        fail("alpha >= wbar/rho");
    if (variant == "rompc") {
        if (alpha < wbar / rho + epsilon - 1e-12)
            fail("alpha >= wbar/rho + epsilon");
        if (c_s_o.size() != c_s.size() || c_s_o.head(2 * m.n_u).cwiseAbs().maxCoeff() != 0.0)
            fail("input-row c_s_o = 0");
        if (L.rows() != m.n_x || L.cols() != m.n_y)
            fail("observer gain dimensions");
        if (H.dim() != m.n_eta)
            fail("noise box dimensions");
        if (!(epsilon > 0))
            fail("epsilon > 0");
    }
    if (!validation.passed(1e-6))
        fail("validation residual <= 1e-6");
}

json artifact_to_json(const DesignArtifact& a) {
    json j;
    j["schema"] = 1;
    j["variant"] = a.variant;
    j["model"] = {{"name", a.model_name}, {"w_bias", vec_to_json(a.w_bias)}, {"C", mat_to_json(a.C)},
                  {"F", mat_to_json(a.F)}};
    j["constraints"] = {{"u", box_to_json(a.u_box)}, {"x", box_to_json(a.x_box)}};
    j["W"] = box_to_json(a.W);
    if (a.H.dim())
        j["H"] = box_to_json(a.H);
    j["Q"] = mat_to_json(a.Q);
    j["R"] = mat_to_json(a.R);
    j["P"] = mat_to_json(a.P);
    if (a.K.size())
        j["K"] = mat_to_json(a.K);
    j["Pdelta"] = mat_to_json(a.Pdelta);
    json gains = json::array();
    for (const Mat& k : a.Kdelta.K)
        gains.push_back(mat_to_json(k));
    j["Kdelta"] = {{"interpolation", "multilinear"}, {"dims", a.Kdelta.dims}, {"axes", a.Kdelta.axes},
                   {"gains", gains}};
    j["rho"] = a.rho;
    j["wbar"] = a.wbar;
    j["alpha"] = a.alpha;
    j["epsilon"] = a.epsilon;
    j["epsilon_reg"] = a.epsilon_reg;
    j["c_s"] = vec_to_json(a.c_s);
    j["c_s_o"] = vec_to_json(a.c_s_o);
    j["c_o"] = a.c_o;
    if (a.L.size())
        j["L"] = mat_to_json(a.L);
    j["multipliers"] = {{"lambda", a.mult.lambda},
                        {"lambda_delta", a.mult.lambda_delta},
                        {"lambda_delta_eps", a.mult.lambda_delta_eps},
                        {"lambda_eps", a.mult.lambda_eps}};
    j["grid_points"] = a.grid_points;
    j["validation"] = a.validation.to_json();
    return j;
}

DesignArtifact artifact_from_json(const json& j) {
    try {
        require(j.value("schema", 0) == 1, "artifact schema must be 1");
        DesignArtifact a;
        a.variant = j.at("variant").get<std::string>();
        const json& m = j.at("model");
        a.model_name = m.at("name").get<std::string>();
        a.w_bias = vec_from_json(m.at("w_bias"), "model.w_bias");
        a.C = mat_from_json(m.at("C"), "model.C");
        a.F = mat_from_json(m.at("F"), "model.F");
        a.u_box = box_from_json(j.at("constraints").at("u"), "constraints.u");
        a.x_box = box_from_json(j.at("constraints").at("x"), "constraints.x");
        a.W = box_from_json(j.at("W"), "W");
        if (j.contains("H"))
            a.H = box_from_json(j.at("H"), "H");
        a.Q = mat_from_json(j.at("Q"), "Q");
        a.R = mat_from_json(j.at("R"), "R");
        a.P = mat_from_json(j.at("P"), "P");
        if (j.contains("K"))
            a.K = mat_from_json(j.at("K"), "K");
        a.Pdelta = mat_from_json(j.at("Pdelta"), "Pdelta");
        const json& kd = j.at("Kdelta");
        a.Kdelta.dims = kd.at("dims").get<std::vector<int>>();
        a.Kdelta.axes = kd.at("axes").get<std::vector<std::vector<double>>>();
        for (const auto& g : kd.at("gains"))
            a.Kdelta.K.push_back(mat_from_json(g, "Kdelta"));
        size_t nodes = 1;
        for (const auto& ax : a.Kdelta.axes)
            nodes *= ax.size();
        require(a.Kdelta.dims.size() == a.Kdelta.axes.size() && nodes == a.Kdelta.K.size(),
                "artifact invariant violated: Kdelta table layout");
        a.rho = j.at("rho").get<double>();
        a.wbar = j.at("wbar").get<double>();
        a.alpha = j.at("alpha").get<double>();
        a.epsilon = j.value("epsilon", 0.0);
        a.epsilon_reg = j.value("epsilon_reg", 0.0);
        a.c_s = vec_from_json(j.at("c_s"), "c_s");
        a.c_s_o = vec_from_json(j.at("c_s_o"), "c_s_o");
        a.c_o = j.at("c_o").get<double>();
        if (j.contains("L"))
            a.L = mat_from_json(j.at("L"), "L");
        const json& mu = j.at("multipliers");
        a.mult.lambda = mu.value("lambda", 0.0);
        a.mult.lambda_delta = mu.value("lambda_delta", 0.0);
        a.mult.lambda_delta_eps = mu.value("lambda_delta_eps", 0.0);
        a.mult.lambda_eps = mu.value("lambda_eps", 0.0);
        a.grid_points = j.value("grid_points", 2);
        for (const auto& [f, v] : j.at("validation").items()) {
            a.validation.worst[f] = v.at("worst_residual").get<double>();
            a.validation.tag[f] = v.at("at").get<std::string>();
        }
        a.check_invariants();
        return a;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed artifact: ") + e.what());
    }
}

DesignArtifact load_artifact(const std::string& path) { return artifact_from_json(read_json_file(path)); }

void save_artifact(const DesignArtifact& a, const std::string& path) {
    write_text_file(path, artifact_to_json(a).dump(2) + "\n");
}

// ---------------------------------------------------------------- configuration

SynthConfig parse_synth_config(const json& j) {
    try {
        require(j.value("schema", 1) == 1, "config schema must be 1");
        SynthConfig c;
        c.variant = j.at("variant").get<std::string>();
        require(c.variant == "tmpc" || c.variant == "rmpc" || c.variant == "rompc",
                "variant must be tmpc, rmpc or rompc");
        const json& m = j.at("model");
        c.model = m.at("name").get<std::string>();
        const SystemModel base = make_model(c.model);
        c.w_bias = m.contains("w_bias") ? vec_from_json(m.at("w_bias"), "model.w_bias") : Vec::Zero(base.n_w);
        if (m.contains("C"))
            c.C = weight_from_json(m.at("C"), base.n_x, "model.C");
        if (m.contains("F"))
            c.F = mat_from_json(m.at("F"), "model.F");
        const SystemModel model = make_model(c.model, {c.w_bias, c.C, c.F});
        const json& cons = j.at("constraints");
        c.u_box = BoxSet(vec_from_json(cons.at("u_lower"), "u_lower"), vec_from_json(cons.at("u_upper"), "u_upper"));
        c.x_box = BoxSet(vec_from_json(cons.at("x_lower"), "x_lower"), vec_from_json(cons.at("x_upper"), "x_upper"));
        require(c.u_box.dim() == model.n_u && c.x_box.dim() == model.n_x, "constraint boxes do not match the model");
        c.W = j.contains("W") ? box_from_json(j.at("W"), "W") : BoxSet(Vec::Zero(model.n_w), Vec::Zero(model.n_w));
        require(c.W.dim() == model.n_w, "W does not match n_w");
        if (j.contains("H"))
            c.H = box_from_json(j.at("H"), "H");
        c.Q = weight_from_json(j.at("Q"), model.n_x, "Q");
        c.R = weight_from_json(j.at("R"), model.n_u, "R");
        c.rho = j.value("rho", 1.0);
        if (j.contains("lambda") && !j.at("lambda").is_null())
            c.lambda = j.at("lambda").get<double>();
        if (j.contains("grid")) {
            c.grid_points = j.at("grid").value("points", 5);
            c.validation_factor = j.at("grid").value("validation_factor", 10);
        }
        if (j.contains("tmpc"))
            c.epsilon_reg = j.at("tmpc").value("epsilon_reg", 0.0);
        c.alpha_mode = c.variant == "tmpc" ? "lp" : "min";
        if (j.contains("alpha")) {
            const json& a = j.at("alpha");
            c.alpha_mode = a.value("mode", c.alpha_mode);
            c.alpha_value = a.value("value", 0.0);
            c.alpha_margin = a.value("margin", 0.0);
            if (a.contains("reference"))
                for (const auto& r : a.at("reference"))
                    c.alpha_reference.push_back(vec_from_json(r, "alpha.reference"));
        }
        require(c.alpha_mode == "lp" || c.alpha_mode == "min" || c.alpha_mode == "value",
                "alpha.mode must be lp, min or value");
        if (c.variant == "rompc") {
            require(j.contains("rompc"), "rompc variant needs a rompc section");
            require(c.H.dim() == model.n_eta, "H must match the noise dimension");
            const json& r = j.at("rompc");
            c.L = mat_from_json(r.at("L"), "rompc.L");
            c.epsilon = r.at("epsilon").get<double>();
            c.mult.lambda_delta = r.at("lambda_delta").get<double>();
            c.mult.lambda_delta_eps = r.at("lambda_delta_eps").get<double>();
            if (r.contains("lambda_eps") && !r.at("lambda_eps").is_null())
                c.lambda_eps = r.at("lambda_eps").get<double>();
            c.optimize_L = r.value("optimize_L", false);
            c.c_l = r.value("c_l", 1.0);
            require(c.mult.lambda_delta >= c.mult.lambda_delta_eps * c.epsilon * c.epsilon,
                    "multiplier inequality violated: lambda_delta must be >= lambda_delta_eps * epsilon^2");
        }
        if (j.contains("cost_weights")) {
            CostWeights w;
            w.c_s = vec_from_json(j.at("cost_weights").at("c_s"), "cost_weights.c_s");
            w.c_o = j.at("cost_weights").at("c_o").get<double>();
            c.weights = w;
        }
        if (j.contains("sdp")) {
            c.sdp.tol = j.at("sdp").value("tol", c.sdp.tol);
            c.sdp.max_iter = j.at("sdp").value("max_iter", c.sdp.max_iter);
            c.sdp.gap = j.at("sdp").value("gap", c.sdp.gap);
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed synthesis config: ") + e.what());
    }
}

DesignArtifact run_synthesis(const SynthConfig& cfg) {
    const SystemModel m = make_model(cfg.model, {cfg.w_bias, cfg.C, cfg.F});
    const SynthGrid grid = make_synth_grid(m, cfg.x_box, cfg.u_box, cfg.grid_points);
    const Polytope rows = system_rows(cfg.u_box, cfg.x_box);
    const CostWeights weights = cfg.weights ? *cfg.weights : default_cost_weights(cfg.u_box, cfg.x_box, m.M);
    require(weights.c_s.size() == rows.rows(), "cost_weights.c_s must have one entry per system row");

    DesignArtifact a;
    a.variant = cfg.variant;
    a.model_name = cfg.model;
    a.w_bias = m.w_bias;
    a.C = m.C;
    a.F = m.F;
    a.u_box = cfg.u_box;
    a.x_box = cfg.x_box;
    a.W = cfg.W;
    a.H = cfg.H;
    a.Q = cfg.Q;
    a.R = cfg.R;
    a.rho = cfg.rho;
    a.grid_points = cfg.grid_points;
    a.epsilon_reg = cfg.epsilon_reg;

    if (cfg.variant == "tmpc") {
        const TmpcTerminal t = synth_tmpc_terminal(m, cfg.Q, cfg.R, cfg.epsilon_reg, grid, cfg.sdp);
        a.P = t.P;
        a.K = t.K;
        a.Pdelta = t.P;
        a.Kdelta = GainTable::constant(t.K);
        const Tightening tt = compute_tightening_constants(t.P, a.Kdelta, rows, m.M);
        a.c_s = tt.c_s;
        a.c_s_o = Vec::Zero(rows.rows());
        a.c_o = tt.c_o;
        if (cfg.alpha_mode == "value") {
            a.alpha = cfg.alpha_value;
        } else {
            std::vector<Vec> refs = cfg.alpha_reference;
            if (refs.empty()) {
                Vec r(m.n_u + m.n_x);
                r << 0.5 * (cfg.u_box.lower + cfg.u_box.upper), 0.5 * (cfg.x_box.lower + cfg.x_box.upper);
                refs.push_back(r);
            }
            a.alpha = compute_alpha_lp(t.P, t.K, refs, rows) - cfg.alpha_margin;
        }
    } else if (cfg.variant == "rmpc") {
        const CcmResult r = synth_ccm(m, cfg.rho, cfg.lambda, grid, cfg.W, rows, weights, cfg.sdp);
        a.Pdelta = r.Pdelta;
        a.Kdelta = r.Kdelta;
        a.c_s = r.c_s;
        a.c_s_o = Vec::Zero(rows.rows());
        a.c_o = r.c_o;
        a.mult.lambda = r.lambda;
        a.P = synth_terminal_cost(m, a.Kdelta, cfg.Q, cfg.R, grid, cfg.sdp);
        a.wbar = compute_wbar(a.Pdelta, m.E, cfg.W);
    } else {
        Multipliers mu = cfg.mult;
        auto solve = [&](const Mat& L, double lam_eps) {
            Multipliers mm = mu;
            mm.lambda_eps = lam_eps;
            return synth_rompc(m, L, cfg.rho, mm, cfg.epsilon, grid, cfg.W, cfg.H, rows, weights, cfg.sdp);
        };
        double lam_eps = 0.0;
        if (cfg.lambda_eps) {
            lam_eps = *cfg.lambda_eps;
        } else {
            auto obj = [&](double le) {
                try {
                    return solve(cfg.L, le).objective;
                } catch (const InfeasibleError&) {
                    return std::numeric_limits<double>::infinity();
                }
            };
            lam_eps = search_multiplier(1e-3 * cfg.rho, 8.0 * cfg.rho, obj, "observer-error multiplier");
        }
        RompcResult r = solve(cfg.L, lam_eps);
        Mat L = cfg.L;
        if (cfg.optimize_L) {
            const ObserverGain og =
                optimize_observer_gain(r.Pdelta, r.Kdelta, m, r.mult, grid, cfg.W, cfg.H, cfg.c_l, cfg.sdp);
            try {
                RompcResult r2 = solve(og.L, lam_eps);
                if (r2.objective < r.objective) {
                    r = r2;
                    L = og.L;
                }
            } catch (const InfeasibleError&) {
                // keep the configured gain
            }
        }
        a.Pdelta = r.Pdelta;
        a.Kdelta = r.Kdelta;
        a.c_s = r.c_s;
        a.c_s_o = r.c_s_o;
        a.c_o = r.c_o;
        a.mult = r.mult;
        a.L = L;
        a.epsilon = cfg.epsilon;
        a.P = synth_terminal_cost(m, a.Kdelta, cfg.Q, cfg.R, grid, cfg.sdp);
        a.wbar = compute_wbar_o(a.Pdelta, L, m.C, m.F, cfg.H, cfg.epsilon);
    }
    if (a.robust()) {
        const double bound = a.wbar / a.rho + (a.variant == "rompc" ? a.epsilon : 0.0);
        if (cfg.alpha_mode == "value") {
            require(cfg.alpha_value >= bound - 1e-12, "alpha.value is below the invariance bound");
            a.alpha = cfg.alpha_value;
        } else if (cfg.alpha_mode == "lp") {
            double best = std::numeric_limits<double>::infinity();
            Vec r(m.n_u + m.n_x);
            r << 0.5 * (cfg.u_box.lower + cfg.u_box.upper), 0.5 * (cfg.x_box.lower + cfg.x_box.upper);
            const std::vector<Vec> refs = cfg.alpha_reference.empty() ? std::vector<Vec>{r} : cfg.alpha_reference;
            for (const Mat& K : a.Kdelta.K)
                best = std::min(best, compute_alpha_lp(a.Pdelta, K, refs, rows));
            if (best < bound)
                throw InfeasibleError("terminal set from the alpha LP is smaller than the invariance bound");
            a.alpha = best;
        } else {
            a.alpha = bound + cfg.alpha_margin;
        }
    }
    a.validation = validate_design(a, cfg.validation_factor);
    return a;
}

} // namespace safe_nmpc
