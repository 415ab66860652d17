#include "safe_nmpc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>

#include "safe_nmpc/qp.hpp"

namespace safe_nmpc {

std::string to_string(OcpStatus s) {
    switch (s) {
    case OcpStatus::Optimal:
        return "optimal";
    case OcpStatus::FeasibleSuboptimal:
        return "feasible_suboptimal";
    case OcpStatus::Infeasible:
        return "infeasible";
    case OcpStatus::MaxIter:
        return "max_iter";
    }
    return "unknown";
}

namespace {

bool input_free(const Polytope& rows, int nu, int j) {
    return nu == 0 || rows.L.row(j).head(nu).cwiseAbs().maxCoeff() == 0.0;
}

void check_nonempty(const Polytope& rows, int node, const std::string& family) {
    std::vector<std::string> warn;
    tighten_rows(rows, Vec::Zero(rows.rows()), 0.0, Vec(), &warn);
    if (!warn.empty())
        throw ConfigError(fmt::format("tightened {} rows empty at stage {}: {}", family, node, warn.front()));
}

Vec stack(const Vec& u, const Vec& x) {
    Vec y(u.size() + x.size());
    y << u, x;
    return y;
}

} // namespace

OcpProblem build_ocp(const DesignArtifact& a, const ReferenceTrajectory& ref, const ObstacleSchedule& obstacles,
                     const Vec& x0, int N, double Ts, double t0, int substeps) {
    require(N >= 1 && Ts > 0 && substeps >= 1, "OCP needs N >= 1, Ts > 0 and substeps >= 1");
    OcpProblem p;
    p.variant = a.variant;
    p.model = a.model();
    require(x0.size() == p.model.n_x, "initial state dimension mismatch");
    p.N = N;
    p.Ts = Ts;
    p.substeps = substeps;
    p.t0 = t0;
    p.x0 = x0;
    p.w_pred = p.model.w_bias;
    p.Q = a.Q;
    p.R = a.R;
    p.P = a.P;
    const bool robust = a.robust();
    p.tube = robust ? make_tube_profile(a.rho, a.wbar, Ts, N) : make_tube_profile(1.0, 0.0, Ts, N);
    p.epsilon = a.variant == "rompc" ? a.epsilon : 0.0;
    p.alpha = a.alpha;
    p.s_T = p.tube.s[N];
    p.Pset = robust ? a.Pdelta : a.P;
    p.radius = robust ? a.alpha - p.s_T - p.epsilon : a.alpha;
    if (p.radius < 0)
        throw ConfigError(fmt::format("terminal set empty: alpha - s_T - epsilon = {:.6g}", p.radius));

    const Polytope raw = a.rows();
    for (int k = 0; k <= N; ++k) {
        const RefPoint r = ref.at(t0 + k * Ts);
        p.xr.push_back(r.x);
        p.ur.push_back(r.u);
        const double s = p.tube.s[k];
        Polytope sys = raw;
        Polytope obs;
        if (obstacles.size() > 0)
            obs = obstacles.for_node(k);
        else {
            obs.L = Mat(0, p.model.M.rows());
            obs.l = Vec(0);
        }
        if (robust) {
            Vec extra;
            if (a.variant == "rompc")
                extra = a.c_s_o * a.epsilon;
            sys = tighten_rows(raw, a.c_s, s, extra);
            if (obs.rows())
                obs = tighten_rows(obs, Vec::Constant(obs.rows(), a.c_o), s + p.epsilon, Vec());
        }
        check_nonempty(sys, k, "system");
        if (obs.rows())
            check_nonempty(obs, k, "obstacle");
        p.sys.push_back(sys);
        p.obs.push_back(obs);
    }
    return p;
}

double interval_cost(const OcpProblem& p, const std::vector<Vec>& z, const std::vector<Vec>& v, int k) {
    auto q = [&](const Vec& e) { return e.dot(p.Q * e); };
    auto r = [&](const Vec& e) { return e.dot(p.R * e); };
    return 0.5 * p.Ts *
           (q(z[k] - p.xr[k]) + q(z[k + 1] - p.xr[k + 1]) + r(v[k] - p.ur[k]) + r(v[k] - p.ur[k + 1]));
}

double ocp_objective(const OcpProblem& p, const std::vector<Vec>& z, const std::vector<Vec>& v) {
    double J = 0.0;
    for (int k = 0; k < p.N; ++k)
        J += interval_cost(p, z, v, k);
    const Vec e = z[p.N] - p.xr[p.N];
    return J + e.dot(p.P * e);
}

namespace {

double terminal_margin(const OcpProblem& p, const Vec& zN) {
    const Vec e = zN - p.xr[p.N];
    const double V = std::max(0.0, e.dot(p.Pset * e));
    if (p.variant == "tmpc")
        return p.radius * p.radius - V;
    return p.radius - std::sqrt(V);
}

} // namespace

Margins evaluate_feasibility(const OcpSolution& s, const OcpProblem& p) {
    Margins m;
    const int nu = p.nv();
    m.initial = (s.z[0] - p.x0).norm();
    m.sys = INFINITY;
    m.obs = INFINITY;
    for (int k = 0; k < p.N; ++k) {
        const Vec next = integrate_step(p.model, s.z[k], s.v[k], p.w_pred, p.Ts, p.substeps);
        m.defect = std::max(m.defect, (next - s.z[k + 1]).norm());
    }
    for (int k = 0; k <= p.N; ++k) {
        const Polytope& rows = p.sys[k];
        const Vec y = stack(k < p.N ? s.v[k] : Vec(Vec::Zero(nu)), s.z[k]);
        const Vec mg = rows.margins(y);
        for (int j = 0; j < rows.rows(); ++j)
            if (k < p.N || input_free(rows, nu, j))
                m.sys = std::min(m.sys, mg(j));
        if (p.obs[k].rows())
            m.obs = std::min(m.obs, p.obs[k].min_margin(p.model.M * s.z[k]));
    }
    m.terminal = terminal_margin(p, s.z[p.N]);
    return m;
}

namespace {

// Linear inequality rows of the problem in terms of (node, kind) for bookkeeping.
struct RowRef {
    int node;
    int row;
    int family;  // 0 sys, 1 obs, 2 terminal
};

std::string row_name(const RowRef& r) {
    static const char* names[] = {"system", "obstacle", "terminal"};
    return fmt::format("node {} {} row {}", r.node, names[r.family], r.row);
}

} // namespace

OcpSolution solve_ocp(const OcpProblem& p, const OcpSolution* warm, const OcpOptions& opt) {
    const int N = p.N, nx = p.nz(), nu = p.nv();
    const int nv_all = nu * N;
    const SystemModel& m = p.model;

    std::vector<Vec> z(N + 1), v(N);
    if (warm && static_cast<int>(warm->z.size()) == N + 1 && static_cast<int>(warm->v.size()) == N) {
        z = warm->z;
        v = warm->v;
    } else {
        for (int k = 0; k <= N; ++k)
            z[k] = p.xr[k];
        for (int k = 0; k < N; ++k)
            v[k] = p.ur[k];
    }

    // Fixed row sets per node.
    std::vector<RowRef> refs;
    for (int k = 0; k <= N; ++k) {
        for (int j = 0; j < p.sys[k].rows(); ++j)
            if (k < N || input_free(p.sys[k], nu, j))
                refs.push_back({k, j, 0});
        for (int j = 0; j < p.obs[k].rows(); ++j)
            refs.push_back({k, j, 1});
    }
    refs.push_back({N, 0, 2});
    const int mi = static_cast<int>(refs.size());

    const bool tmpc = p.variant == "tmpc";
    auto row_values = [&](const std::vector<Vec>& zz, const std::vector<Vec>& vv) {
        // g(y) <= 0 form
        Vec g(mi);
        for (int i = 0; i < mi; ++i) {
            const RowRef& r = refs[i];
            if (r.family == 0) {
                const Vec y = stack(r.node < N ? vv[r.node] : Vec(Vec::Zero(nu)), zz[r.node]);
                g(i) = p.sys[r.node].L.row(r.row).dot(y) - p.sys[r.node].l(r.row);
            } else if (r.family == 1) {
                g(i) = p.obs[r.node].L.row(r.row).dot(m.M * zz[r.node]) - p.obs[r.node].l(r.row);
            } else {
                const Vec e = zz[N] - p.xr[N];
                g(i) = e.dot(p.Pset * e) - p.radius * p.radius;
            }
        }
        return g;
    };
    auto defects = [&](const std::vector<Vec>& zz, const std::vector<Vec>& vv, std::vector<Vec>& c) {
        c.resize(N);
        for (int k = 0; k < N; ++k)
            c[k] = integrate_step(m, zz[k], vv[k], p.w_pred, p.Ts, p.substeps) - zz[k + 1];
    };
    auto infeasibility = [&](const std::vector<Vec>& zz, const std::vector<Vec>& vv, double* soft) {
        std::vector<Vec> c;
        defects(zz, vv, c);
        double total = (zz[0] - p.x0).lpNorm<1>();
        for (const Vec& ck : c)
            total += ck.lpNorm<1>();
        const Vec g = row_values(zz, vv);
        double sv = 0.0;
        for (int i = 0; i < mi; ++i) {
            if (opt.soft_obstacles && refs[i].family == 1) {
                sv = std::max(sv, g(i));
                continue;
            }
            total += std::max(0.0, g(i));
        }
        if (soft)
            *soft = sv;
        return total;
    };
    // Node weights of the quadratic objective (Hessians of f).
    std::vector<Mat> Hz(N + 1);
    for (int k = 0; k <= N; ++k)
        Hz[k] = 2.0 * (k == 0 || k == N ? 0.5 : 1.0) * p.Ts * p.Q;
    Hz[N] += 2.0 * p.P;
    const Mat Hv = 2.0 * p.Ts * p.R;

    OcpSolution sol;
    double nu_merit = 1.0;
    double mu_term = 0.0;
    bool converged = false;
    int it = 0;
    std::vector<double> sigma_last;
    for (it = 1; it <= opt.max_iter; ++it) {
        // Linearize.
        std::vector<Mat> A(N), B(N);
        std::vector<Vec> c(N);
        for (int k = 0; k < N; ++k) {
            const Vec nxt = integrate_step_sens(m, z[k], v[k], p.w_pred, p.Ts, p.substeps, A[k], B[k]);
            c[k] = nxt - z[k + 1];
        }
        // Condensed state increments dz_k = G_k dv + h_k.
        std::vector<Mat> G(N + 1);
        std::vector<Vec> h(N + 1);
        G[0] = Mat::Zero(nx, nv_all);
        h[0] = p.x0 - z[0];
        for (int k = 0; k < N; ++k) {
            G[k + 1] = A[k] * G[k];
            G[k + 1].block(0, k * nu, nx, nu) += B[k];
            h[k + 1] = A[k] * h[k] + c[k];
        }
        // Objective gradient blocks.
        std::vector<Vec> gz(N + 1), gv(N);
        for (int k = 0; k <= N; ++k)
            gz[k] = Hz[k] * (z[k] - p.xr[k]);
        for (int k = 0; k < N; ++k)
            gv[k] = p.Ts * p.R * (2.0 * v[k] - p.ur[k] - p.ur[k + 1]);
        std::vector<Mat> Hzk = Hz;
        Hzk[N] += 2.0 * mu_term * p.Pset;

        QpProblem qp;
        qp.H = Mat::Zero(nv_all, nv_all);
        qp.g = Vec::Zero(nv_all);
        for (int k = 0; k <= N; ++k) {
            if (k > 0) {
                qp.H.noalias() += G[k].transpose() * Hzk[k] * G[k];
                qp.g.noalias() += G[k].transpose() * (Hzk[k] * h[k] + gz[k]);
            }
        }
        for (int k = 0; k < N; ++k) {
            qp.H.block(k * nu, k * nu, nu, nu) += Hv;
            qp.g.segment(k * nu, nu) += gv[k];
        }
        qp.H = 0.5 * (qp.H + qp.H.transpose());
        qp.A = Mat(0, nv_all);
        qp.b = Vec(0);
        qp.C = Mat::Zero(mi, nv_all);
        qp.d = Vec::Zero(mi);
        const Vec g0 = row_values(z, v);
        for (int i = 0; i < mi; ++i) {
            const RowRef& r = refs[i];
            Mat rowz;
            if (r.family == 0) {
                const Polytope& P = p.sys[r.node];
                rowz = P.L.row(r.row).tail(nx);
                if (r.node < N)
                    qp.C.block(i, r.node * nu, 1, nu) += P.L.row(r.row).head(nu);
            } else if (r.family == 1) {
                rowz = p.obs[r.node].L.row(r.row) * m.M;
            } else {
                rowz = (2.0 * p.Pset * (z[N] - p.xr[N])).transpose();
            }
            qp.C.row(i) += rowz * G[r.node];
            qp.d(i) = -g0(i) - (rowz * h[r.node])(0, 0);
        }
        QpOptions qo;
        qo.elastic_penalty = opt.elastic_penalty;
        const QpResult q = solve_qp(qp, qo);
        if (!q.x.allFinite())
            break;

        // Full-space step and adjoint multipliers.
        std::vector<Vec> dz(N + 1), dv(N);
        for (int k = 0; k <= N; ++k)
            dz[k] = G[k] * q.x + h[k];
        for (int k = 0; k < N; ++k)
            dv[k] = q.x.segment(k * nu, nu);
        double stat = 0.0;
        for (int k = 0; k <= N; ++k)
            stat = std::max(stat, (Hzk[k] * dz[k]).cwiseAbs().maxCoeff());
        for (int k = 0; k < N; ++k)
            stat = std::max(stat, (Hv * dv[k]).cwiseAbs().maxCoeff());
        std::vector<Vec> lam(N + 1, Vec::Zero(nx));
        {
            std::vector<Vec> cmu(N + 1, Vec::Zero(nx));
            for (int i = 0; i < mi; ++i) {
                const RowRef& r = refs[i];
                Vec rowz;
                if (r.family == 0)
                    rowz = p.sys[r.node].L.row(r.row).tail(nx).transpose();
                else if (r.family == 1)
                    rowz = (p.obs[r.node].L.row(r.row) * m.M).transpose();
                else
                    rowz = 2.0 * p.Pset * (z[N] - p.xr[N]);
                cmu[r.node] += q.mu(i) * rowz;
            }
            lam[N] = Hzk[N] * dz[N] + gz[N] + cmu[N];
            for (int k = N - 1; k >= 0; --k)
                lam[k] = Hzk[k] * dz[k] + gz[k] + cmu[k] + A[k].transpose() * lam[k + 1];
        }
        double lam_max = 0.0;
        for (const Vec& l : lam)
            lam_max = std::max(lam_max, l.cwiseAbs().maxCoeff());
        const double mu_max = mi ? q.mu.cwiseAbs().maxCoeff() : 0.0;
        nu_merit = std::max(nu_merit, 1.5 * std::max(lam_max, mu_max) + 1.0);
        mu_term = std::max(0.0, q.mu(mi - 1));

        double soft_now = 0.0;
        const double infeas = infeasibility(z, v, &soft_now);
        double comp = 0.0;
        for (int i = 0; i < mi; ++i)
            comp = std::max(comp, std::min(std::abs(q.mu(i)), std::max(0.0, -g0(i))));
        double primal = 0.0;
        {
            primal = (z[0] - p.x0).cwiseAbs().maxCoeff();
            for (const Vec& ck : c)
                primal = std::max(primal, ck.cwiseAbs().maxCoeff());
            for (int i = 0; i < mi; ++i)
                if (!(opt.soft_obstacles && refs[i].family == 1))
                    primal = std::max(primal, g0(i));
        }
        sol.kkt = std::max({stat, comp, primal});
        const double sig_max = q.sigma.size() ? q.sigma.maxCoeff() : 0.0;
        sigma_last.assign(q.sigma.data(), q.sigma.data() + q.sigma.size());

        double step_norm = q.x.cwiseAbs().maxCoeff();
        for (const Vec& d : dz)
            step_norm = std::max(step_norm, d.cwiseAbs().maxCoeff());

        if (sol.kkt <= opt.tol && primal <= 1e-9) {
            converged = true;
            // The step is tiny; take it to polish linear-quadratic problems exactly.
            std::vector<Vec> zt = z, vt = v;
            for (int k = 0; k <= N; ++k)
                zt[k] += dz[k];
            for (int k = 0; k < N; ++k)
                vt[k] += dv[k];
            if (infeasibility(zt, vt, nullptr) <= infeas + 1e-12) {
                z = zt;
                v = vt;
            }
            break;
        }
        if (step_norm < 1e-10 && (sig_max > 1e-7 || primal > 1e-6))
            break;  // stationary for the infeasibility measure

        // l1 merit line search.
        const double f0 = ocp_objective(p, z, v);
        const double phi0 = f0 + nu_merit * infeas;
        double df = 0.0;
        for (int k = 0; k <= N; ++k)
            df += gz[k].dot(dz[k]);
        for (int k = 0; k < N; ++k)
            df += gv[k].dot(dv[k]);
        const double Dphi = df - nu_merit * std::max(0.0, infeas - (q.sigma.size() ? q.sigma.sum() : 0.0));
        double step = 1.0;
        std::vector<Vec> zt(N + 1), vt(N);
        for (int ls = 0; ls < 30; ++ls) {
            for (int k = 0; k <= N; ++k)
                zt[k] = z[k] + step * dz[k];
            for (int k = 0; k < N; ++k)
                vt[k] = v[k] + step * dv[k];
            const double phi = ocp_objective(p, zt, vt) + nu_merit * infeasibility(zt, vt, nullptr);
            if (std::isfinite(phi) && phi <= phi0 + 1e-4 * step * std::min(Dphi, 0.0) + 1e-14 * std::abs(phi0))
                break;
            step *= 0.5;
        }
        z = zt;
        v = vt;
    }
    sol.iterations = std::min(it, opt.max_iter);
    sol.z = z;
    sol.v = v;
    sol.objective = ocp_objective(p, z, v);
    sol.margins = evaluate_feasibility(sol, p);
    double soft = 0.0;
    const double infeas = infeasibility(z, v, &soft);
    (void)infeas;
    sol.soft_violation = opt.soft_obstacles ? std::max(0.0, soft) : 0.0;
    Margins hard = sol.margins;
    if (opt.soft_obstacles)
        hard.obs = std::max(hard.obs, 0.0);
    const bool feasible = hard.feasible(1e-7);
    if (converged && feasible)
        sol.status = OcpStatus::Optimal;
    else if (feasible)
        sol.status = OcpStatus::FeasibleSuboptimal;
    else if (converged || (!sigma_last.empty() && *std::max_element(sigma_last.begin(), sigma_last.end()) > 1e-7) ||
             sol.iterations < opt.max_iter)
        sol.status = OcpStatus::Infeasible;
    else
        sol.status = OcpStatus::MaxIter;
    if (sol.status == OcpStatus::Infeasible || sol.status == OcpStatus::MaxIter) {
        const Vec g = row_values(z, v);
        for (int i = 0; i < mi; ++i)
            if (g(i) > 1e-7 || (i < static_cast<int>(sigma_last.size()) && sigma_last[i] > 1e-7))
                sol.binding.push_back(row_name(refs[i]));
    }
    if (opt.soft_obstacles && sol.soft_violation > 1e-7 && sol.status == OcpStatus::Optimal)
        sol.status = OcpStatus::FeasibleSuboptimal;
    return sol;
}

OcpSolution make_candidate(const OcpSolution& prev, const DesignArtifact& a, const OcpProblem& next,
                           const Vec& new_initial_state) {
    const int N = next.N;
    require(static_cast<int>(prev.z.size()) == N + 1 && static_cast<int>(prev.v.size()) == N,
            "candidate needs a previous solution with the same horizon");
    OcpSolution c;
    c.z.resize(N + 1);
    c.v.resize(N);
    if (a.variant == "tmpc") {
        for (int k = 0; k < N; ++k)
            c.z[k] = prev.z[k + 1];
        for (int k = 0; k + 1 < N; ++k)
            c.v[k] = prev.v[k + 1];
    } else {
        c.z[0] = new_initial_state;
        for (int k = 0; k + 1 < N; ++k) {
            c.v[k] = feedback_kappa(a, c.z[k], prev.z[k + 1], prev.v[k + 1]);
            c.z[k + 1] = integrate_step(next.model, c.z[k], c.v[k], next.w_pred, next.Ts, next.substeps);
        }
    }
    // Tail from the terminal law around the reference.
    c.v[N - 1] = feedback_kappa(a, c.z[N - 1], next.xr[N - 1], next.ur[N - 1]);
    c.z[N] = integrate_step(next.model, c.z[N - 1], c.v[N - 1], next.w_pred, next.Ts, next.substeps);
    c.objective = ocp_objective(next, c.z, c.v);
    c.margins = evaluate_feasibility(c, next);
    c.status = c.margins.feasible(1e-6) ? OcpStatus::FeasibleSuboptimal : OcpStatus::Infeasible;
    return c;
}

} // namespace safe_nmpc
