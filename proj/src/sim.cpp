#include "safe_nmpc/sim.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <fmt/format.h>

#include "safe_nmpc/observer.hpp"

namespace safe_nmpc {

DisturbanceMode disturbance_mode_from_string(const std::string& s) {
    if (s == "zero")
        return DisturbanceMode::Zero;
    if (s == "uniform")
        return DisturbanceMode::Uniform;
    if (s == "vertex_hold")
        return DisturbanceMode::VertexHold;
    if (s == "worst_case_probe")
        return DisturbanceMode::WorstCaseProbe;
    throw ConfigError("unknown disturbance mode: " + s);
}

NoiseMode noise_mode_from_string(const std::string& s) {
    if (s == "zero")
        return NoiseMode::Zero;
    if (s == "uniform")
        return NoiseMode::Uniform;
    throw ConfigError("unknown noise mode: " + s);
}

std::string to_string(DisturbanceMode m) {
    switch (m) {
    case DisturbanceMode::Zero:
        return "zero";
    case DisturbanceMode::Uniform:
        return "uniform";
    case DisturbanceMode::VertexHold:
        return "vertex_hold";
    case DisturbanceMode::WorstCaseProbe:
        return "worst_case_probe";
    }
    return "unknown";
}

int Scenario::steps() const { return static_cast<int>(std::lround(duration / Ts)); }

void Scenario::check() const {
    require(N >= 1, "scenario: N must be >= 1");
    require(Ts > 0, "scenario: Ts must be positive");
    require(duration > 0, "scenario: duration must be positive");
    require(std::abs(steps() * Ts - duration) <= 1e-9 * std::max(1.0, duration),
            "scenario: duration must be a multiple of Ts");
    require(control_substeps >= 1, "scenario: control_substeps must be >= 1");
    require(ocp_substeps >= 0, "scenario: ocp_substeps must be >= 0");
    require(dwell >= 0, "scenario: dwell must be >= 0");
    require(disturbance_scale >= 0, "scenario: disturbance scale must be >= 0");
    const SystemModel m = artifact.model();
    require(x0.size() == m.n_x, "scenario: x0 dimension mismatch");
    require(xhat0.size() == 0 || xhat0.size() == m.n_x, "scenario: xhat0 dimension mismatch");
    require(obstacles.mode == "none" || obstacles.mode == "corridor" || obstacles.mode == "static",
            "scenario: obstacle mode must be none, corridor or static");
    if (obstacles.mode == "corridor")
        require(obstacles.half_width > 0, "scenario: corridor half_width must be positive");
    if (obstacles.mode == "static")
        require(obstacles.region.rows() > 0 && obstacles.region.L.cols() == m.n_p,
                "scenario: static obstacle region must have rows on the position");
    if (noise == NoiseMode::Uniform)
        require(artifact.H.dim() == m.n_eta, "scenario: uniform noise needs a noise box H in the artifact");
}

Scenario parse_scenario(const json& j, const std::string& base_dir) {
    require(j.is_object(), "scenario must be a JSON object");
    require(j.value("schema", 0) == 1, "scenario: unsupported schema (expected 1)");
    Scenario sc;
    require(j.contains("artifact"), "scenario: missing artifact");
    std::filesystem::path ap = j.at("artifact").get<std::string>();
    if (ap.is_relative() && !base_dir.empty())
        ap = std::filesystem::path(base_dir) / ap;
    sc.artifact_path = ap.string();
    sc.artifact = load_artifact(sc.artifact_path);
    const SystemModel m = sc.artifact.model();
    sc.N = j.value("N", sc.N);
    sc.Ts = j.value("Ts", sc.Ts);
    sc.duration = j.value("duration", sc.duration);
    require(j.contains("x0"), "scenario: missing x0");
    sc.x0 = vec_from_json(j.at("x0"), "x0");
    if (j.contains("xhat0"))
        sc.xhat0 = vec_from_json(j.at("xhat0"), "xhat0");
    if (j.contains("reference")) {
        const json& r = j.at("reference");
        ReferenceSpec& s = sc.reference;
        s.type = r.value("type", s.type);
        const Vec zero = Vec::Zero(m.n_p);
        s.p0 = r.contains("p0") ? vec_from_json(r.at("p0"), "reference.p0") : zero;
        s.p1 = r.contains("p1") ? vec_from_json(r.at("p1"), "reference.p1") : zero;
        s.vel = r.contains("vel") ? vec_from_json(r.at("vel"), "reference.vel") : zero;
        s.center = r.contains("center") ? vec_from_json(r.at("center"), "reference.center") : zero;
        s.move_time = r.value("move_time", s.move_time);
        s.radius = r.value("radius", s.radius);
        s.omega = r.value("omega", s.omega);
        s.phase = r.value("phase", s.phase);
    } else {
        sc.reference.p0 = sc.reference.vel = Vec::Zero(m.n_p);
    }
    if (j.contains("obstacles")) {
        const json& o = j.at("obstacles");
        sc.obstacles.mode = o.value("mode", std::string("none"));
        sc.obstacles.half_width = o.value("half_width", sc.obstacles.half_width);
        if (o.contains("L")) {
            sc.obstacles.region.L = mat_from_json(o.at("L"), "obstacles.L");
            sc.obstacles.region.l = vec_from_json(o.at("l"), "obstacles.l");
            require(sc.obstacles.region.L.rows() == sc.obstacles.region.l.size(), "obstacles: L and l mismatch");
            sc.obstacles.region.normalize();
        }
    }
    if (j.contains("disturbance")) {
        const json& d = j.at("disturbance");
        sc.disturbance = disturbance_mode_from_string(d.value("mode", std::string("zero")));
        sc.dwell = d.value("dwell", 0.0);
        sc.disturbance_scale = d.value("scale", 1.0);
    }
    if (j.contains("noise"))
        sc.noise = noise_mode_from_string(j.at("noise").value("mode", std::string("zero")));
    sc.seed = j.value("seed", std::uint64_t{0});
    sc.control_substeps = j.value("control_substeps", sc.control_substeps);
    sc.ocp_substeps = j.value("ocp_substeps", sc.ocp_substeps);
    const std::string inf = j.value("on_infeasible", std::string("halt"));
    require(inf == "halt" || inf == "candidate", "scenario: on_infeasible must be halt or candidate");
    sc.halt_on_infeasible = inf == "halt";
    if (j.contains("ocp")) {
        const json& o = j.at("ocp");
        sc.ocp.tol = o.value("tol", sc.ocp.tol);
        sc.ocp.max_iter = o.value("max_iter", sc.ocp.max_iter);
    }
    sc.check();
    return sc;
}

Scenario load_scenario(const std::string& path) {
    const json j = read_json_file(path);
    return parse_scenario(j, std::filesystem::path(path).parent_path().string());
}

Vec uniform_in_box(const BoxSet& b, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec p(b.dim());
    for (int i = 0; i < b.dim(); ++i)
        p(i) = b.lower(i) + U(rng) * (b.upper(i) - b.lower(i));
    return p;
}

Vec worst_case_vertex(const Mat& Pdelta, const Mat& E, const BoxSet& W) {
    const auto verts = W.vertices();
    Vec best = verts.front();
    double best_v = -1.0;
    for (const Vec& w : verts) {
        const Vec e = E * w;
        const double v = e.dot(Pdelta * e);
        if (v > best_v) {
            best_v = v;
            best = w;
        }
    }
    return best;
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id)};
    return std::mt19937_64(seq);
}

} // namespace

DisturbanceSampler::DisturbanceSampler(DisturbanceMode mode, const BoxSet& W, const Vec& w_bias, const Mat& Pdelta,
                                       const Mat& E, double dwell, std::uint64_t seed)
    : mode_(mode), W_(W), w_bias_(w_bias), dwell_(dwell), rng_(stream(seed, 1)) {
    if (mode_ == DisturbanceMode::WorstCaseProbe)
        probe_ = worst_case_vertex(Pdelta, E, W_);
}

Vec DisturbanceSampler::sample(double t) {
    switch (mode_) {
    case DisturbanceMode::Zero:
        return w_bias_;
    case DisturbanceMode::Uniform:
        return w_bias_ + uniform_in_box(W_, rng_);
    case DisturbanceMode::VertexHold: {
        if (held_.size() == 0 || t >= held_until_ - 1e-12) {
            const auto verts = W_.vertices();
            std::uniform_int_distribution<int> pick(0, static_cast<int>(verts.size()) - 1);
            held_ = verts[pick(rng_)];
            held_until_ = t + dwell_;
        }
        return w_bias_ + held_;
    }
    case DisturbanceMode::WorstCaseProbe:
        return w_bias_ + probe_;
    }
    return w_bias_;
}

ReferenceTrajectory make_reference(const SystemModel& m, const ReferenceSpec& spec, double duration, double dt) {
    if (spec.type == "line")
        return line_reference(m, spec.p0, spec.vel, duration, dt);
    if (spec.type == "polynomial")
        return polynomial_reference(m, spec.p0, spec.p1, spec.move_time, duration, dt);
    if (spec.type == "circle")
        return circle_reference(m, spec.center, spec.radius, spec.omega, spec.phase, duration, dt);
    throw ConfigError("unknown reference type: " + spec.type);
}

json SimSummary::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json j;
    j["schema"] = 1;
    j["violations_sys"] = violations_sys;
    j["violations_obs"] = violations_obs;
    j["worst_margin_sys"] = num(worst_margin_sys);
    j["worst_margin_obs"] = num(worst_margin_obs);
    j["worst_tube_residual"] = num(worst_tube_residual);
    j["worst_observer_residual"] = num(worst_observer_residual);
    j["worst_candidate_margin"] = num(worst_candidate_margin);
    j["initial_tracking_error"] = initial_tracking_error;
    j["final_tracking_error"] = final_tracking_error;
    j["total_cost"] = total_cost;
    j["tail_tracking_cost"] = tail_tracking_cost;
    j["halted"] = halted;
    j["halt_reason"] = halt_reason;
    j["steps"] = steps;
    j["candidate_fallbacks"] = candidate_fallbacks;
    return j;
}

namespace {

ObstacleSchedule make_schedule(const Scenario& sc, const SystemModel& m, const ReferenceTrajectory& ref, double t,
                               const Vec& x_meas, const OcpSolution* prev) {
    ObstacleSchedule S;
    if (sc.obstacles.mode == "static") {
        S.stages.assign(sc.N, sc.obstacles.region);
    } else if (sc.obstacles.mode == "corridor") {
        std::vector<Vec> path;
        if (prev) {
            // previous plan shifted by one node, last node repeated
            for (int k = 1; k <= sc.N; ++k)
                path.push_back(m.M * prev->z[k]);
            path.push_back(m.M * prev->z[sc.N]);
        } else {
            path.push_back(m.M * x_meas);
            for (int k = 1; k <= sc.N; ++k)
                path.push_back(m.M * ref.at(t + k * sc.Ts).x);
        }
        S = build_corridor(path, sc.obstacles.half_width, sc.N);
    }
    return S;
}

double candidate_min(const Margins& c) {
    return std::min({c.sys, c.obs, c.terminal, -c.defect, -c.initial});
}

} // namespace

SimTrace run_closed_loop(const Scenario& sc) {
    sc.check();
    const DesignArtifact& a = sc.artifact;
    const SystemModel m = a.model();
    const bool robust = a.robust();
    const bool rompc = a.variant == "rompc";
    const int nf = sc.control_substeps;
    const int ocp_sub = sc.ocp_substeps > 0 ? sc.ocp_substeps : nf;
    const double h = sc.Ts / nf;
    const int steps = sc.steps();
    const Polytope raw = a.rows();
    const ReferenceTrajectory ref =
        make_reference(m, sc.reference, sc.duration + (sc.N + 2) * sc.Ts, std::min(0.05, sc.Ts / 4));

    const BoxSet Wreal = a.W.scaled(sc.disturbance_scale);
    DisturbanceSampler dist(sc.disturbance, Wreal, m.w_bias, robust ? a.Pdelta : a.P, m.E,
                            sc.dwell > 0 ? sc.dwell : sc.Ts, sc.seed);
    std::mt19937_64 noise_rng = stream(sc.seed, 2);

    SimTrace tr;
    tr.variant = a.variant;
    SimSummary& sum = tr.summary;
    Vec x = sc.x0;
    Vec xhat = sc.xhat0.size() ? sc.xhat0 : sc.x0;
    const Mat Lobs = rompc ? a.L : Mat();
    std::optional<OcpSolution> prev;
    sum.initial_tracking_error = (x - ref.at(0.0).x).norm();
    double tail_sum = 0.0;
    int tail_count = 0;

    for (int i = 0; i < steps; ++i) {
        const double t = i * sc.Ts;
        const Vec xs = rompc ? xhat : x;
        const ObstacleSchedule obs = make_schedule(sc, m, ref, t, xs, prev ? &*prev : nullptr);
        const OcpProblem p = build_ocp(a, ref, obs, xs, sc.N, sc.Ts, t, ocp_sub);

        StepRecord rec;
        rec.t = t;
        rec.tracking_error = (x - ref.at(t).x).norm();
        OcpSolution cand;
        if (prev) {
            cand = make_candidate(*prev, a, p, xs);
            rec.has_candidate = true;
            rec.candidate = cand.margins;
            rec.candidate_objective = cand.objective;
            sum.worst_candidate_margin = std::min(sum.worst_candidate_margin, candidate_min(cand.margins));
        }
        OcpSolution sol = solve_ocp(p, prev ? &cand : nullptr, sc.ocp);
        rec.status = sol.status;
        rec.iterations = sol.iterations;
        rec.kkt = sol.kkt;
        std::string status = to_string(sol.status);
        const bool ok = sol.status == OcpStatus::Optimal || sol.status == OcpStatus::FeasibleSuboptimal;
        const bool cand_ok = rec.has_candidate && cand.margins.feasible(1e-9);
        if (ok && cand_ok && cand.objective < sol.objective) {
            // keep the certified candidate when the local solve did not improve on it
            sol = cand;
            rec.used_candidate = true;
            status = "candidate";
        } else if (!ok) {
            if (!sc.halt_on_infeasible && rec.has_candidate && cand.margins.feasible(1e-6)) {
                sol = cand;
                rec.used_candidate = true;
                status = "candidate_fallback";
                ++sum.candidate_fallbacks;
            } else {
                sum.halted = true;
                std::string rows;
                for (size_t b = 0; b < sol.binding.size() && b < 5; ++b)
                    rows += (b ? "; " : "") + sol.binding[b];
                sum.halt_reason = fmt::format("t={} status={} binding=[{}]", t, to_string(sol.status), rows);
                rec.z = sol.z;
                rec.v = sol.v;
                rec.objective = sol.objective;
                rec.margins = sol.margins;
                tr.steps.push_back(rec);
                break;
            }
        }
        rec.z = sol.z;
        rec.v = sol.v;
        rec.objective = sol.objective;
        rec.margins = sol.margins;
        rec.interval_cost = interval_cost(p, sol.z, sol.v, 0);
        rec.tube = p.tube.s;
        tr.steps.push_back(rec);

        const Polytope* obs0 = obs.size() ? &obs.for_node(0) : nullptr;
        const Vec v0 = sol.v[0];
        Vec zf = sol.z[0];
        for (int j = 0; j < nf; ++j) {
            const double tau = j * h;
            const double tf = t + tau;
            Vec u;
            if (!robust)
                u = v0;
            else
                u = feedback_kappa(a, rompc ? xhat : x, zf, v0);
            const Vec w = dist.sample(tf);
            Vec eta = Vec::Zero(m.n_eta);
            if (sc.noise == NoiseMode::Uniform)
                eta = uniform_in_box(a.H, noise_rng);

            FineRecord fr;
            fr.t = tf;
            fr.x = x;
            fr.xhat = rompc ? xhat : x;
            fr.u = u;
            fr.w = w;
            fr.eta = eta;
            fr.s = robust ? tube_size(a.rho, a.wbar, tau) : 0.0;
            Vec ux(m.n_u + m.n_x);
            ux << u, x;
            fr.margin_sys = raw.min_margin(ux);
            fr.margin_obs = obs0 ? obs0->min_margin(m.M * x) : INFINITY;
            fr.margin_term = sol.margins.terminal;
            fr.status = status;
            fr.plan = i;
            if (fr.margin_sys < -1e-9)
                ++sum.violations_sys;
            if (fr.margin_obs < -1e-9)
                ++sum.violations_obs;
            sum.worst_margin_sys = std::min(sum.worst_margin_sys, fr.margin_sys);
            sum.worst_margin_obs = std::min(sum.worst_margin_obs, fr.margin_obs);
            const RefPoint r = ref.at(tf);
            const Vec ex = x - r.x, eu = u - r.u;
            sum.total_cost += h * (ex.dot(a.Q * ex) + eu.dot(a.R * eu));
            if (tf >= 0.5 * sc.duration - 1e-12) {
                tail_sum += ex.dot(a.Q * ex);
                ++tail_count;
            }
            if (robust && j == 0) {
                const Vec& xm = rompc ? xhat : x;
                sum.worst_tube_residual = std::max(sum.worst_tube_residual, std::sqrt(vdelta(a.Pdelta, xm, zf)));
            }
            tr.fine.push_back(std::move(fr));

            const Vec y = output_measure(m, x, eta);
            if (!robust) {
                x = integrate_step(m, x, u, w, h, 1);
                zf = integrate_step(m, zf, v0, m.w_bias, h, 1);
            } else {
                // The feedback acts continuously: it is re-evaluated in every RK4 stage of the joint
                // plant / estimate / nominal system while w and y are held over the fine step.
                const int n = m.n_x;
                const int blocks = rompc ? 3 : 2;
                Vec joint(blocks * n);
                joint.head(n) = x;
                joint.segment(n, n) = zf;
                if (rompc)
                    joint.tail(n) = xhat;
                auto rhs = [&](double, const Vec& q) -> Vec {
                    const Vec xq = q.head(n), zq = q.segment(n, n);
                    const Vec xm = rompc ? Vec(q.tail(n)) : xq;
                    const Vec uq = feedback_kappa(a, xm, zq, v0);
                    Vec d(q.size());
                    d.head(n) = eval_dynamics(m, xq, uq, &w);
                    d.segment(n, n) = eval_dynamics(m, zq, v0, &m.w_bias);
                    if (rompc)
                        d.tail(n) = eval_dynamics(m, xm, uq, &m.w_bias) + Lobs * (y - m.C * xm);
                    return d;
                };
                joint = rk4_step(rhs, 0.0, joint, h);
                check_finite(joint, "closed-loop state");
                x = joint.head(n);
                zf = joint.segment(n, n);
                if (rompc)
                    xhat = joint.tail(n);
            }
            if (robust) {
                const Vec& xm = rompc ? xhat : x;
                const double s_next = tube_size(a.rho, a.wbar, tau + h);
                sum.worst_tube_residual =
                    std::max(sum.worst_tube_residual, std::sqrt(vdelta(a.Pdelta, xm, zf)) - s_next);
            }
            if (rompc)
                sum.worst_observer_residual =
                    std::max(sum.worst_observer_residual, std::sqrt(vdelta(a.Pdelta, x, xhat)) - a.epsilon);
        }
        prev = sol;
        ++sum.steps;
    }
    tr.final_x = x;
    tr.final_xhat = rompc ? xhat : x;
    tr.final_t = sum.steps * sc.Ts;
    sum.final_tracking_error = (x - ref.at(tr.final_t).x).norm();
    sum.tail_tracking_cost = tail_count ? tail_sum / tail_count : 0.0;
    return tr;
}

std::string trace_csv(const SimTrace& tr) {
    std::string out;
    if (tr.fine.empty())
        return "t,s,margin_sys,margin_obs,margin_term,status\n";
    const FineRecord& f0 = tr.fine.front();
    out += "t";
    auto cols = [&](const char* name, int n) {
        for (int i = 0; i < n; ++i)
            out += fmt::format(",{}{}", name, i);
    };
    cols("x", static_cast<int>(f0.x.size()));
    cols("xhat", static_cast<int>(f0.xhat.size()));
    cols("u", static_cast<int>(f0.u.size()));
    cols("w", static_cast<int>(f0.w.size()));
    cols("eta", static_cast<int>(f0.eta.size()));
    out += ",s,margin_sys,margin_obs,margin_term,status\n";
    for (const FineRecord& f : tr.fine) {
        out += fmt::format("{}", f.t);
        for (const Vec* v : {&f.x, &f.xhat, &f.u, &f.w, &f.eta})
            for (int i = 0; i < v->size(); ++i)
                out += fmt::format(",{}", (*v)(i));
        out += fmt::format(",{},{},{},{},{}\n", f.s, f.margin_sys, f.margin_obs, f.margin_term, f.status);
    }
    return out;
}

json trace_steps_json(const SimTrace& tr) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    auto margins = [&](const Margins& mg) {
        return json{{"defect", num(mg.defect)},     {"initial", num(mg.initial)}, {"sys", num(mg.sys)},
                    {"obs", num(mg.obs)},           {"terminal", num(mg.terminal)}};
    };
    json steps = json::array();
    for (const StepRecord& s : tr.steps) {
        json j;
        j["t"] = s.t;
        j["objective"] = s.objective;
        j["interval_cost"] = s.interval_cost;
        j["status"] = to_string(s.status);
        j["iterations"] = s.iterations;
        j["kkt"] = s.kkt;
        j["used_candidate"] = s.used_candidate;
        j["tracking_error"] = s.tracking_error;
        j["margins"] = margins(s.margins);
        if (s.has_candidate) {
            j["candidate"] = margins(s.candidate);
            j["candidate_objective"] = s.candidate_objective;
        }
        j["tube"] = s.tube;
        json z = json::array(), v = json::array();
        for (const Vec& zk : s.z)
            z.push_back(vec_to_json(zk));
        for (const Vec& vk : s.v)
            v.push_back(vec_to_json(vk));
        j["z"] = z;
        j["v"] = v;
        steps.push_back(j);
    }
    return json{{"schema", 1}, {"variant", tr.variant}, {"summary", tr.summary.to_json()}, {"steps", steps}};
}

} // namespace safe_nmpc
