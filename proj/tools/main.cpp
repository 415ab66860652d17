#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fmt/format.h>
#include <mutex>
#include <sstream>
#include <thread>

#include "safe_nmpc/verify.hpp"

using namespace safe_nmpc;
namespace fs = std::filesystem;

namespace {

constexpr int kExitVerify = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasibleSynth = 3;
constexpr int kExitInfeasibleHalt = 4;

int worker_count(int jobs) {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SAFE_NMPC_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0)
            n = cap;
    }
    return std::max(1, std::min(n, jobs));
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty())
        fs::create_directories(dir);
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---------------------------------------------------------------- synth

int cmd_synth(const std::string& config, const std::string& out, const std::string& validation_out) {
    const SynthConfig cfg = parse_synth_config(read_json_file(config));
    const DesignArtifact a = run_synthesis(cfg);
    const fs::path op(out);
    if (op.has_parent_path())
        ensure_dir(op.parent_path().string());
    save_artifact(a, out);
    json v;
    v["schema"] = 1;
    v["variant"] = a.variant;
    v["passed"] = a.validation.passed();
    v["families"] = a.validation.to_json();
    const std::string vpath = validation_out.empty() ? out + ".validation.json" : validation_out;
    write_text_file(vpath, v.dump(2) + "\n");
    fmt::print("{} artifact written to {} (validation {})\n", a.variant, out, a.validation.passed() ? "passed" : "FAILED");
    return a.validation.passed() ? 0 : kExitVerify;
}

// ---------------------------------------------------------------- simulate

struct RunOutcome {
    std::uint64_t seed = 0;
    SimSummary summary;
    std::string error;
};

RunOutcome run_one(Scenario sc, const std::string& outdir, const std::string& suffix) {
    RunOutcome o;
    o.seed = sc.seed;
    const SimTrace tr = run_closed_loop(sc);
    write_text_file(join(outdir, "trace" + suffix + ".csv"), trace_csv(tr));
    write_text_file(join(outdir, "steps" + suffix + ".json"), trace_steps_json(tr).dump() + "\n");
    json s = tr.summary.to_json();
    s["seed"] = sc.seed;
    s["variant"] = tr.variant;
    write_text_file(join(outdir, "summary" + suffix + ".json"), s.dump(2) + "\n");
    o.summary = tr.summary;
    return o;
}

int outcome_code(const SimSummary& s) {
    if (s.halted)
        return kExitInfeasibleHalt;
    if (s.violations_sys + s.violations_obs > 0)
        return kExitVerify;
    return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& artifact, const std::string& outdir,
                 int batch, std::optional<std::uint64_t> seed) {
    json j = read_json_file(scenario_path);
    const std::string base = fs::path(scenario_path).parent_path().string();
    if (!artifact.empty())
        j["artifact"] = fs::absolute(artifact).string();
    Scenario sc = parse_scenario(j, base);
    if (seed)
        sc.seed = *seed;
    ensure_dir(outdir);
    if (batch <= 1) {
        const RunOutcome o = run_one(sc, outdir, "");
        fmt::print("steps {} violations {} halted {}{}\n", o.summary.steps,
                   o.summary.violations_sys + o.summary.violations_obs, o.summary.halted,
                   o.summary.halted ? " (" + o.summary.halt_reason + ")" : "");
        return outcome_code(o.summary);
    }
    std::vector<RunOutcome> results(batch);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < batch; i = next++) {
            Scenario s = sc;
            s.seed = sc.seed + static_cast<std::uint64_t>(i);
            try {
                results[i] = run_one(s, outdir, fmt::format("_seed{}", s.seed));
            } catch (const std::exception& e) {
                results[i].seed = s.seed;
                results[i].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const int nw = worker_count(batch);
    for (int w = 0; w < nw; ++w)
        pool.emplace_back(worker);
    for (auto& t : pool)
        t.join();
    json agg;
    agg["schema"] = 1;
    agg["runs"] = batch;
    json runs = json::array();
    int code = 0, violations = 0, halted = 0;
    double worst_tube = -INFINITY, worst_cand = INFINITY;
    for (const RunOutcome& o : results) {
        if (!o.error.empty()) {
            runs.push_back({{"seed", o.seed}, {"error", o.error}});
            code = std::max(code, kExitConfig);
            continue;
        }
        json s = o.summary.to_json();
        s["seed"] = o.seed;
        runs.push_back(s);
        violations += o.summary.violations_sys + o.summary.violations_obs;
        halted += o.summary.halted ? 1 : 0;
        worst_tube = std::max(worst_tube, o.summary.worst_tube_residual);
        worst_cand = std::min(worst_cand, o.summary.worst_candidate_margin);
        const int c = outcome_code(o.summary);
        code = code == 0 ? c : std::max(code, c);
    }
    agg["total_violations"] = violations;
    agg["halted_runs"] = halted;
    agg["worst_tube_residual"] = std::isfinite(worst_tube) ? json(worst_tube) : json(nullptr);
    agg["worst_candidate_margin"] = std::isfinite(worst_cand) ? json(worst_cand) : json(nullptr);
    agg["per_seed"] = runs;
    write_text_file(join(outdir, "summary.json"), agg.dump(2) + "\n");
    fmt::print("{} runs: violations {} halted {}\n", batch, violations, halted);
    return code;
}

// ---------------------------------------------------------------- verify

const std::vector<std::string> kChecks = {"descent",     "recursive_feasibility", "tube_containment",
                                          "constraints", "terminal_invariance",   "lipschitz",
                                          "alpha"};

int cmd_verify(const std::string& artifact_path, const std::string& trace_path, const std::string& scenario_path,
               const std::string& checks_arg, int samples, std::uint64_t seed, const std::string& out) {
    std::vector<std::string> checks;
    std::stringstream ss(checks_arg);
    for (std::string c; std::getline(ss, c, ',');)
        if (!c.empty())
            checks.push_back(c);
    if (checks.empty())
        throw ConfigError("no checks selected");
    for (const std::string& c : checks)
        if (std::find(kChecks.begin(), kChecks.end(), c) == kChecks.end())
            throw ConfigError("unknown check: " + c);

    std::optional<Scenario> sc;
    if (!scenario_path.empty())
        sc = load_scenario(scenario_path);
    std::optional<DesignArtifact> art;
    if (!artifact_path.empty())
        art = load_artifact(artifact_path);
    else if (sc)
        art = sc->artifact;
    std::optional<SimTrace> tr;
    if (!trace_path.empty())
        tr = trace_from_steps_json(read_json_file(trace_path));

    auto need_art = [&]() -> const DesignArtifact& {
        if (!art)
            throw ConfigError("this check needs --artifact (or --scenario)");
        return *art;
    };
    auto need_trace = [&]() -> const SimTrace& {
        if (!tr)
            throw ConfigError("this check needs --trace");
        return *tr;
    };
    std::vector<CheckResult> results;
    for (const std::string& c : checks) {
        if (c == "descent")
            results.push_back(verify_descent(need_trace(), need_art()));
        else if (c == "recursive_feasibility")
            results.push_back(verify_recursive_feasibility(need_trace()));
        else if (c == "tube_containment")
            results.push_back(verify_tube_containment(need_trace(), need_art()));
        else if (c == "constraints")
            results.push_back(verify_constraints(need_trace()));
        else if (c == "terminal_invariance") {
            const DesignArtifact& a = need_art();
            const SystemModel m = a.model();
            double Ts = 0.2;
            ReferenceTrajectory ref;
            if (sc) {
                Ts = sc->Ts;
                ref = make_reference(m, sc->reference, sc->duration + Ts, std::min(0.05, Ts / 4));
            } else {
                const Vec rest = 0.5 * (a.x_box.lower + a.x_box.upper);
                ref = line_reference(m, m.M * rest, Vec::Zero(m.n_p), 10 * Ts, Ts / 4);
            }
            results.push_back(verify_terminal_invariance(a, ref, Ts, samples, seed));
        } else if (c == "lipschitz")
            results.push_back(verify_lipschitz_and_contraction(need_art(), samples, seed));
        else if (c == "alpha")
            results.push_back(verify_alpha(need_art(), std::max(samples, 1000), seed));
    }
    const json rep = report_to_json(results);
    if (!out.empty())
        write_text_file(out, rep.dump(2) + "\n");
    for (const CheckResult& r : results)
        fmt::print("{:<24} {}  worst {:.3e}  violations {}\n", r.name, r.passed ? "PASS" : "FAIL", r.worst,
                   r.violations);
    return rep["passed"].get<bool>() ? 0 : kExitVerify;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::vector<std::string>& files, const std::string& out) {
    std::string csv = "file,seed,steps,violations_sys,violations_obs,worst_margin_sys,worst_margin_obs,"
                      "worst_tube_residual,worst_observer_residual,worst_candidate_margin,final_tracking_error,"
                      "total_cost,halted\n";
    fmt::print("{:<32} {:>6} {:>6} {:>6} {:>12} {:>12} {:>12} {:>12}\n", "run", "steps", "v_sys", "v_obs",
               "tube_res", "cand_margin", "final_err", "cost");
    auto cell = [](const json& j, const char* k) -> std::string {
        if (!j.contains(k) || j.at(k).is_null())
            return "nan";
        return fmt::format("{}", j.at(k).get<double>());
    };
    auto emit = [&](const std::string& name, const json& s) {
        const std::string seed = s.contains("seed") ? fmt::format("{}", s.at("seed").get<std::uint64_t>()) : "";
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", name, seed, s.value("steps", 0),
                           s.value("violations_sys", 0), s.value("violations_obs", 0), cell(s, "worst_margin_sys"),
                           cell(s, "worst_margin_obs"), cell(s, "worst_tube_residual"),
                           cell(s, "worst_observer_residual"), cell(s, "worst_candidate_margin"),
                           cell(s, "final_tracking_error"), cell(s, "total_cost"), s.value("halted", false));
        fmt::print("{:<32} {:>6} {:>6} {:>6} {:>12} {:>12} {:>12} {:>12}\n", name + (seed.empty() ? "" : "#" + seed),
                   s.value("steps", 0), s.value("violations_sys", 0), s.value("violations_obs", 0),
                   cell(s, "worst_tube_residual"), cell(s, "worst_candidate_margin"), cell(s, "final_tracking_error"),
                   cell(s, "total_cost"));
    };
    for (const std::string& f : files) {
        const json j = read_json_file(f);
        const std::string name = fs::path(f).filename().string();
        if (j.contains("per_seed")) {
            for (const json& s : j.at("per_seed"))
                if (!s.contains("error"))
                    emit(name, s);
        } else if (j.contains("summary")) {
            emit(name, j.at("summary"));
        } else {
            emit(name, j);
        }
    }
    if (!out.empty())
        write_text_file(out, csv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe nonlinear MPC: offline synthesis, closed-loop simulation and verification"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Synthesize a design artifact from a JSON config");
    std::string synth_cfg, synth_out = "artifact.json", synth_val;
    synth->add_option("config", synth_cfg, "Synthesis config (JSON)")->required();
    synth->add_option("-o,--output", synth_out, "Artifact output path");
    synth->add_option("--validation", synth_val, "Validation report path (default: <output>.validation.json)");

    auto* sim = app.add_subcommand("simulate", "Run the closed loop of a scenario");
    std::string sim_scn, sim_art, sim_out = ".";
    int sim_batch = 1;
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("scenario", sim_scn, "Scenario (JSON)")->required();
    sim->add_option("--artifact", sim_art, "Override the artifact path of the scenario");
    sim->add_option("-o,--outdir", sim_out, "Output directory");
    sim->add_option("--seeds", sim_batch, "Run this many consecutive seeds (batch)")->check(CLI::PositiveNumber);
    sim->add_option("--seed", sim_seed, "Override the scenario seed");

    auto* ver = app.add_subcommand("verify", "Run verification checks");
    std::string ver_art, ver_trace, ver_scn, ver_checks, ver_out;
    int ver_samples = 100;
    std::uint64_t ver_seed = 1;
    ver->add_option("--artifact", ver_art, "Design artifact");
    ver->add_option("--trace", ver_trace, "Steps JSON written by simulate");
    ver->add_option("--scenario", ver_scn, "Scenario (reference for terminal invariance)");
    ver->add_option("--checks", ver_checks,
                    "Comma-separated: descent,recursive_feasibility,tube_containment,constraints,"
                    "terminal_invariance,lipschitz,alpha");
    ver->add_option("--samples", ver_samples, "Samples for sampling checks");
    ver->add_option("--seed", ver_seed, "Seed for sampling checks");
    ver->add_option("-o,--output", ver_out, "Report output path");

    auto* rep = app.add_subcommand("report", "Summarize run summaries as a table and CSV");
    std::vector<std::string> rep_files;
    std::string rep_out;
    rep->add_option("files", rep_files, "summary.json files")->required();
    rep->add_option("-o,--output", rep_out, "Aggregated CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    try {
        if (*synth)
            return cmd_synth(synth_cfg, synth_out, synth_val);
        if (*sim)
            return cmd_simulate(sim_scn, sim_art, sim_out, sim_batch, sim_seed);
        if (*ver)
            return cmd_verify(ver_art, ver_trace, ver_scn, ver_checks, ver_samples, ver_seed, ver_out);
        if (*rep)
            return cmd_report(rep_files, rep_out);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitConfig;
    } catch (const InfeasibleError& e) {
        fmt::print(stderr, "infeasible: {}\n", e.what());
        return kExitInfeasibleSynth;
    } catch (const NumericError& e) {
        fmt::print(stderr, "numeric error: {}\n", e.what());
        return kExitConfig;
    } catch (const json::exception& e) {
        fmt::print(stderr, "error: malformed JSON: {}\n", e.what());
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitConfig;
    }
    return 0;
}
