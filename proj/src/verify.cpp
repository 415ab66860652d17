#include "safe_nmpc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <random>

namespace safe_nmpc {

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double num_from(const json& j, const char* key, double fallback) {
    if (!j.contains(key) || j.at(key).is_null())
        return fallback;
    return j.at(key).get<double>();
}

Vec random_unit(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> G(0.0, 1.0);
    Vec d(n);
    do {
        for (int i = 0; i < n; ++i)
            d(i) = G(rng);
    } while (d.norm() < 1e-12);
    return d / d.norm();
}

double candidate_min(const Margins& c) { return std::min({c.sys, c.obs, c.terminal, -c.defect, -c.initial}); }

} // namespace

json CheckResult::to_json() const {
    return json{{"name", name},         {"passed", passed},   {"worst", num(worst)}, {"tolerance", tolerance},
                {"violations", violations}, {"samples", samples}, {"details", details}};
}

json report_to_json(const std::vector<CheckResult>& checks) {
    json j;
    j["schema"] = 1;
    bool all = !checks.empty();
    json arr = json::array();
    for (const CheckResult& c : checks) {
        arr.push_back(c.to_json());
        all = all && c.passed;
    }
    j["checks"] = arr;
    j["passed"] = all;
    return j;
}

CheckResult verify_descent(const SimTrace& tr, const DesignArtifact& a) {
    CheckResult r;
    r.name = "descent";
    r.tolerance = 1e-4;
    if (a.variant == "tmpc") {
        r.worst = -INFINITY;
        for (size_t i = 1; i < tr.steps.size(); ++i) {
            const StepRecord& p = tr.steps[i - 1];
            const StepRecord& c = tr.steps[i];
            const double res = (c.objective - p.objective + p.interval_cost) / (1.0 + std::abs(p.objective));
            r.worst = std::max(r.worst, res);
            ++r.samples;
            if (res > r.tolerance)
                ++r.violations;
        }
        if (r.samples == 0)
            r.worst = 0.0;
        r.passed = r.violations == 0 && !tr.summary.halted;
        const double e0 = tr.summary.initial_tracking_error;
        r.details["final_over_initial_error"] = e0 > 0 ? num(tr.summary.final_tracking_error / e0) : json(0.0);
    } else {
        const double tail = tr.summary.tail_tracking_cost;
        const double scale = a.wbar / a.rho;
        r.worst = tail;
        r.samples = static_cast<int>(tr.steps.size());
        r.passed = std::isfinite(tail) && !tr.summary.halted;
        r.details["tail_tracking_cost"] = tail;
        r.details["tube_limit"] = scale;
        r.details["tail_rms_over_tube_limit"] = scale > 0 ? num(std::sqrt(tail) / scale) : json(nullptr);
    }
    r.details["halted"] = tr.summary.halted;
    return r;
}

CheckResult verify_recursive_feasibility(const SimTrace& tr, double tol) {
    CheckResult r;
    r.name = "recursive_feasibility";
    r.tolerance = tol;
    double worst_margin = INFINITY;
    for (const StepRecord& s : tr.steps) {
        if (!s.has_candidate)
            continue;
        const double m = candidate_min(s.candidate);
        worst_margin = std::min(worst_margin, m);
        ++r.samples;
        if (m < -tol)
            ++r.violations;
    }
    r.worst = std::isfinite(worst_margin) ? -worst_margin : 0.0;
    r.passed = r.violations == 0;
    r.details["worst_candidate_margin"] = num(worst_margin);
    return r;
}

CheckResult verify_tube_containment(const SimTrace& tr, const DesignArtifact& a) {
    CheckResult r;
    r.name = "tube_containment";
    r.tolerance = 1e-6;
    r.samples = static_cast<int>(tr.fine.size());
    if (!a.robust()) {
        r.passed = true;
        r.details["note"] = "no tube for the tracking scheme";
        return r;
    }
    const double tube = tr.summary.worst_tube_residual;
    const double obs = tr.summary.worst_observer_residual;
    r.worst = std::isfinite(tube) ? tube : 0.0;
    if (a.variant == "rompc" && std::isfinite(obs))
        r.worst = std::max(r.worst, obs);
    r.passed = r.worst <= r.tolerance;
    r.violations = r.passed ? 0 : 1;
    r.details["tube_residual"] = num(tube);
    r.details["observer_residual"] = num(obs);
    return r;
}

CheckResult verify_constraints(const SimTrace& tr) {
    CheckResult r;
    r.name = "constraints";
    r.samples = static_cast<int>(tr.fine.size());
    r.violations = tr.summary.violations_sys + tr.summary.violations_obs;
    r.worst = -std::min(tr.summary.worst_margin_sys, tr.summary.worst_margin_obs);
    if (!std::isfinite(r.worst))
        r.worst = 0.0;
    r.passed = r.violations == 0;
    r.details["violations_sys"] = tr.summary.violations_sys;
    r.details["violations_obs"] = tr.summary.violations_obs;
    r.details["worst_margin_sys"] = num(tr.summary.worst_margin_sys);
    r.details["worst_margin_obs"] = num(tr.summary.worst_margin_obs);
    return r;
}

CheckResult verify_terminal_invariance(const DesignArtifact& a, const ReferenceTrajectory& ref, double Ts,
                                       int n_samples, std::uint64_t seed, int substeps) {
    CheckResult r;
    r.name = "terminal_invariance";
    r.tolerance = 1e-6;
    const SystemModel m = a.model();
    const bool robust = a.robust();
    const Mat Pset = robust ? a.Pdelta : a.P;
    const Mat Pis = inv_sqrtm_spd(Pset);
    // Robust sets are measured in sqrt(V); the tracking set in V itself.
    const double radius = robust ? a.alpha - (a.variant == "rompc" ? a.epsilon : 0.0) : a.alpha;
    const double growth = robust ? tube_size(a.rho, a.wbar, Ts) : 0.0;
    const double t_end = std::max(0.0, ref.end_time() - Ts);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    r.samples = n_samples;
    r.worst = -INFINITY;
    if (radius < 0) {
        r.violations = n_samples;
        r.worst = -radius;
        r.details["note"] = "terminal set empty";
        return r;
    }
    const double h = Ts / substeps;
    for (int i = 0; i < n_samples; ++i) {
        const double t0 = i == 0 ? 0.0 : U(rng) * t_end;
        const double scale = i == 0 ? 0.0 : radius;  // first sample sits on the reference
        Vec z = ref.at(t0).x + scale * (Pis * random_unit(m.n_x, rng));
        for (int k = 0; k < substeps; ++k) {
            const double tk = t0 + k * h;
            auto rhs = [&](double tau, const Vec& zz) -> Vec {
                const RefPoint rp = ref.at(tk + tau);
                const Vec u = feedback_kappa(a, zz, rp.x, rp.u);
                return eval_dynamics(m, zz, u, &m.w_bias);
            };
            z = rk4_step(rhs, 0.0, z, h);
        }
        const Vec e = z - ref.at(t0 + Ts).x;
        const double V = std::max(0.0, e.dot(Pset * e));
        double margin_after, margin_scale;
        if (robust) {
            margin_after = radius - std::sqrt(V) - growth;
            margin_scale = 1.0;
        } else {
            margin_after = radius * radius - V;
            margin_scale = 1.0 + radius * radius;
        }
        const double res = -margin_after / margin_scale;
        r.worst = std::max(r.worst, res);
        if (res > r.tolerance)
            ++r.violations;
    }
    r.passed = r.violations == 0;
    r.details["radius"] = radius;
    r.details["tube_growth"] = growth;
    return r;
}

CheckResult verify_lipschitz_and_contraction(const DesignArtifact& a, int n_samples, std::uint64_t seed,
                                             double dt) {
    CheckResult r;
    r.name = "lipschitz_contraction";
    r.tolerance = 1e-6;
    require(a.robust(), "lipschitz/contraction check needs a robust artifact");
    const SystemModel m = a.model();
    const int n = m.n_x, nu = m.n_u;
    const Polytope rows = a.rows();
    const Mat& P = a.Pdelta;
    const double wbar_state = compute_wbar(P, m.E, a.W);
    const auto verts = a.W.vertices();
    std::mt19937_64 rng(seed);
    double lip_sys = 0.0, lip_obs = 0.0, lip_obs_extra = 0.0;  // worst ratio - 1
    double contraction = -INFINITY, growth = -INFINITY, ratio = -INFINITY;
    int viol_lip = 0, viol_con = 0, viol_growth = 0, viol_ratio = 0;
    const double q = std::exp(-a.rho * dt);
    const int steps = 20;
    for (int i = 0; i < n_samples; ++i) {
        const Vec x = uniform_in_box(a.x_box, rng);
        const Vec z = i == 0 ? x : uniform_in_box(a.x_box, rng);
        const Vec v = uniform_in_box(a.u_box, rng);
        const Vec dx = x - z;
        const double sv = std::sqrt(std::max(0.0, dx.dot(P * dx)));
        const Vec u = feedback_kappa(a, x, z, v);
        Vec d(nu + n);
        d << u - v, dx;
        // Lipschitz bounds of the constraint rows and the obstacle normals.
        for (int j = 0; j < rows.rows(); ++j) {
            const double lhs = std::abs(rows.L.row(j).dot(d));
            const double bound = a.c_s(j) * sv;
            const double excess = lhs - bound * (1 + 1e-6);
            lip_sys = std::max(lip_sys, bound > 0 ? lhs / bound - 1 : (lhs > 0 ? INFINITY : 0.0));
            if (excess > 1e-12)
                ++viol_lip;
            if (a.variant == "rompc") {
                // estimate error acts on the state part of the rows only
                const double lo = std::abs(rows.L.row(j).tail(n).dot(dx));
                const double bo = a.c_s_o(j) * sv;
                lip_obs_extra = std::max(lip_obs_extra, bo > 0 ? lo / bo - 1 : (lo > 0 ? INFINITY : 0.0));
                if (lo - bo * (1 + 1e-6) > 1e-12)
                    ++viol_lip;
            }
        }
        const double lo = (m.M * dx).norm();
        const double bo = a.c_o * sv;
        lip_obs = std::max(lip_obs, bo > 0 ? lo / bo - 1 : (lo > 0 ? INFINITY : 0.0));
        if (lo - bo * (1 + 1e-6) > 1e-12)
            ++viol_lip;

        // Differential growth of sqrt(V) along the closed loop.
        const Vec fz = eval_dynamics(m, z, v, &m.w_bias);
        auto rate = [&](const Vec& w) {
            const Vec fx = eval_dynamics(m, x, u, &w);
            return sv > 0 ? dx.dot(P * (fx - fz)) / sv : 0.0;
        };
        const double scale = 1.0 + (sv > 0 ? std::abs(rate(m.w_bias)) + a.rho * sv : 0.0);
        const double c = (rate(m.w_bias) + a.rho * sv) / scale;
        contraction = std::max(contraction, c);
        if (c > 1e-4)
            ++viol_con;
        Vec w = m.w_bias + (i % 2 == 0 ? verts[(i / 2) % verts.size()] : uniform_in_box(a.W, rng));
        if (i == 1)
            w = m.w_bias + worst_case_vertex(P, m.E, a.W);
        const double g = (rate(w) + a.rho * sv - wbar_state) / (scale + wbar_state);
        growth = std::max(growth, g);
        if (g > 1e-4)
            ++viol_growth;

        // Contraction over a finite interval with the feedback acting continuously.
        if (sv > 1e-9) {
            Vec joint(2 * n);
            joint << x, z;
            auto rhs = [&](double, const Vec& qv) -> Vec {
                const Vec xq = qv.head(n), zq = qv.tail(n);
                Vec dd(2 * n);
                dd.head(n) = eval_dynamics(m, xq, feedback_kappa(a, xq, zq, v), &m.w_bias);
                dd.tail(n) = eval_dynamics(m, zq, v, &m.w_bias);
                return dd;
            };
            for (int k = 0; k < steps; ++k)
                joint = rk4_step(rhs, 0.0, joint, dt / steps);
            const Vec e = joint.head(n) - joint.tail(n);
            const double rr = std::sqrt(std::max(0.0, e.dot(P * e))) / sv - q;
            ratio = std::max(ratio, rr);
            if (rr > 1e-6)
                ++viol_ratio;
        }
    }
    r.samples = n_samples;
    r.violations = viol_lip + viol_con + viol_growth + viol_ratio;
    r.worst = std::max({lip_sys, lip_obs, lip_obs_extra});
    r.passed = r.violations == 0;
    r.details["lipschitz_sys_excess"] = num(lip_sys);
    r.details["lipschitz_obs_excess"] = num(lip_obs);
    r.details["lipschitz_observer_excess"] = num(lip_obs_extra);
    r.details["lipschitz_violations"] = viol_lip;
    r.details["contraction_residual"] = num(contraction);
    r.details["contraction_violations"] = viol_con;
    r.details["growth_residual"] = num(growth);
    r.details["growth_violations"] = viol_growth;
    r.details["contraction_ratio_excess"] = num(ratio);
    r.details["contraction_ratio_violations"] = viol_ratio;
    return r;
}

double brute_force_alpha(const Mat& P, const Mat& K, const Vec& ref_point, const Polytope& rows, int n_samples,
                         std::uint64_t seed) {
    const int n = static_cast<int>(P.rows());
    const int nu = static_cast<int>(K.rows());
    require(ref_point.size() == nu + n, "reference point must be [u; x]");
    if (rows.rows() == 0)
        return INFINITY;
    const Mat Pis = inv_sqrtm_spd(P);
    const Vec margin = rows.margins(ref_point);
    require(margin.minCoeff() >= 0, "reference point violates the rows");
    // Direction of every boundary sample mapped through the closed loop rows.
    Mat G(nu + n, n);
    G << K, Mat::Identity(n, n);
    const Mat LG = rows.L * G * Pis;
    std::mt19937_64 rng(seed);
    Mat S(rows.rows(), n_samples);
    for (int i = 0; i < n_samples; ++i)
        S.col(i) = LG * random_unit(n, rng);
    auto ok = [&](double alpha) {
        for (int i = 0; i < n_samples; ++i)
            for (int j = 0; j < rows.rows(); ++j)
                if (alpha * S(j, i) > margin(j))
                    return false;
        return true;
    };
    double lo = 0.0, hi = 1.0;
    while (ok(hi)) {
        hi *= 2.0;
        if (hi > 1e12)
            return INFINITY;
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

CheckResult verify_alpha(const DesignArtifact& a, int n_samples, std::uint64_t seed, double rel_tol) {
    CheckResult r;
    r.name = "alpha_oracle";
    r.tolerance = rel_tol;
    require(a.variant == "tmpc", "alpha oracle check applies to the tracking artifact");
    const Polytope rows = a.rows();
    Vec center(a.u_box.dim() + a.x_box.dim());
    center << 0.5 * (a.u_box.lower + a.u_box.upper), 0.5 * (a.x_box.lower + a.x_box.upper);
    const double lp = compute_alpha_lp(a.P, a.K, {center}, rows);
    const double bf = brute_force_alpha(a.P, a.K, center, rows, n_samples, seed);
    r.samples = n_samples;
    r.worst = std::abs(bf - lp) / std::max(lp, 1e-300);
    r.passed = std::isfinite(bf) && r.worst <= rel_tol;
    r.violations = r.passed ? 0 : 1;
    r.details["alpha_lp"] = lp;
    r.details["alpha_sampled"] = num(bf);
    r.details["alpha_artifact"] = a.alpha;
    return r;
}

SimTrace trace_from_steps_json(const json& j) {
    require(j.is_object() && j.value("schema", 0) == 1, "trace: unsupported schema (expected 1)");
    require(j.contains("steps") && j.contains("summary"), "trace: missing steps or summary");
    SimTrace tr;
    tr.variant = j.value("variant", std::string());
    auto margins = [](const json& m) {
        Margins g;
        g.defect = num_from(m, "defect", 0.0);
        g.initial = num_from(m, "initial", 0.0);
        g.sys = num_from(m, "sys", INFINITY);
        g.obs = num_from(m, "obs", INFINITY);
        g.terminal = num_from(m, "terminal", INFINITY);
        return g;
    };
    for (const json& s : j.at("steps")) {
        StepRecord r;
        r.t = s.at("t").get<double>();
        r.objective = s.at("objective").get<double>();
        r.interval_cost = s.value("interval_cost", 0.0);
        r.iterations = s.value("iterations", 0);
        r.kkt = num_from(s, "kkt", 0.0);
        r.used_candidate = s.value("used_candidate", false);
        r.tracking_error = s.value("tracking_error", 0.0);
        const std::string st = s.value("status", std::string("optimal"));
        r.status = st == "optimal"               ? OcpStatus::Optimal
                   : st == "feasible_suboptimal" ? OcpStatus::FeasibleSuboptimal
                   : st == "infeasible"          ? OcpStatus::Infeasible
                                                 : OcpStatus::MaxIter;
        if (s.contains("margins"))
            r.margins = margins(s.at("margins"));
        if (s.contains("candidate")) {
            r.has_candidate = true;
            r.candidate = margins(s.at("candidate"));
            r.candidate_objective = s.value("candidate_objective", 0.0);
        }
        if (s.contains("tube"))
            r.tube = s.at("tube").get<std::vector<double>>();
        tr.steps.push_back(r);
    }
    const json& m = j.at("summary");
    SimSummary& S = tr.summary;
    S.violations_sys = m.value("violations_sys", 0);
    S.violations_obs = m.value("violations_obs", 0);
    S.worst_margin_sys = num_from(m, "worst_margin_sys", INFINITY);
    S.worst_margin_obs = num_from(m, "worst_margin_obs", INFINITY);
    S.worst_tube_residual = num_from(m, "worst_tube_residual", -INFINITY);
    S.worst_observer_residual = num_from(m, "worst_observer_residual", -INFINITY);
    S.worst_candidate_margin = num_from(m, "worst_candidate_margin", INFINITY);
    S.initial_tracking_error = m.value("initial_tracking_error", 0.0);
    S.final_tracking_error = m.value("final_tracking_error", 0.0);
    S.total_cost = m.value("total_cost", 0.0);
    S.tail_tracking_cost = m.value("tail_tracking_cost", 0.0);
    S.halted = m.value("halted", false);
    S.halt_reason = m.value("halt_reason", std::string());
    S.steps = m.value("steps", 0);
    S.candidate_fallbacks = m.value("candidate_fallbacks", 0);
    return tr;
}

} // namespace safe_nmpc
