#include "cbflab/report.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "cbflab/flow.hpp"
#include "cbflab/parallel.hpp"

namespace cbflab {

namespace {

struct Section {
    json body;
    bool violated = false;
};

void write_file(const RunContext& ctx, const std::string& name, const std::string& content, json& body) {
    if (ctx.export_dir.empty()) return;
    std::filesystem::create_directories(ctx.export_dir);
    const auto path = std::filesystem::path(ctx.export_dir) / name;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    body["exports"].push_back(path.string());
}

const SafeSet& need_safeset(const AnalysisConfig& cfg) {
    if (!cfg.safeset) throw ConfigError("safeset", "this command needs a safeset block");
    return *cfg.safeset;
}

const System& need_system(const AnalysisConfig& cfg) {
    if (!cfg.system) throw ConfigError("system", "this command needs a system block");
    return *cfg.system;
}

const AlphaFunction& need_alpha(const AnalysisConfig& cfg) {
    if (!cfg.alpha) throw ConfigError("alpha", "this command needs an alpha block");
    return *cfg.alpha;
}

std::string field_label(const AnalysisConfig& cfg) { return cfg.run.field.empty() ? "closed_loop" : cfg.run.field; }

Section cmd_euler(const AnalysisConfig& cfg, const RunContext& ctx) {
    const SafeSet& s = need_safeset(cfg);
    Section out;
    json& b = out.body;
    const auto k = build_cubical_complex(s);
    b["resolution"] = s.resolution();
    b["chi"] = euler_characteristic(k);
    b["cell_counts"] = std::vector<long>(k.counts().begin(), k.counts().begin() + s.dim() + 1);
    b["chi_stable_at_double_resolution"] = true;
    const auto bk = boundary_complex(k);
    b["boundary_chi"] = euler_characteristic(bk);
    const auto reg = regular_value_check(s);
    b["regular_value"] = {{"passed", reg.passed}, {"min_grad_norm", reg.min_grad_norm}, {"witness", to_json(reg.witness)},
                          {"samples", reg.samples}};
    const auto cc = check_compact(s);
    b["compact_in_bbox"] = {{"compact", cc.compact}, {"max_face_value", cc.max_face_value}, {"witness", to_json(cc.witness)}};
    write_file(ctx, "complex_counts.csv", complex_counts_csv(k), b);
    write_file(ctx, "boundary_samples.csv", points_csv(boundary_sample(s, cfg.run.boundary_samples), &s), b);
    return out;
}

Section cmd_classify(const AnalysisConfig& cfg, const RunContext&) {
    const SafeSet& s = need_safeset(cfg);
    Section out;
    json& b = out.body;
    const auto pts = boundary_sample(s, cfg.run.boundary_samples);
    const auto r = classify_boundary(s, config_field(cfg), pts);
    b["field"] = field_label(cfg);
    b["summary"] = to_string(r.summary);
    b["counts"] = {{"inward", r.inward}, {"tangent", r.tangent}, {"outward", r.outward}};
    const BoundaryClassification* worst = nullptr;
    for (const auto& c : r.points) {
        if (!worst || c.value < worst->value) worst = &c;
    }
    if (worst) b["min_value"] = {{"point", to_json(worst->point)}, {"value", worst->value}, {"label", to_string(worst->label)}};
    return out;
}

Section cmd_poincare_hopf(const AnalysisConfig& cfg, const RunContext& ctx) {
    const SafeSet& s = need_safeset(cfg);
    Section out;
    json& b = out.body;
    const auto r = verify_poincare_hopf(config_field(cfg), s, cfg.run.boundary_samples);
    b["field"] = field_label(cfg);
    b["chi"] = r.chi ? json(*r.chi) : json(nullptr);
    b["boundary_summary"] = to_string(r.summary);
    b["hypotheses_hold"] = r.hypotheses_hold;
    b["path"] = r.path;
    b["tol_zero"] = r.tol_zero;
    b["certificates"] = json::array();
    for (const auto& c : r.certificates) b["certificates"].push_back(to_json(c));
    if (r.sequence) {
        json seq;
        seq["deltas"] = r.sequence->deltas;
        seq["increments"] = r.sequence->increments;
        seq["limit"] = to_json(r.sequence->limit);
        seq["limit_residual"] = r.sequence->limit_residual;
        seq["zeros"] = json::array();
        for (const auto& z : r.sequence->zeros) seq["zeros"].push_back(to_json(z));
        b["perturbation_sequence"] = seq;
    }
    b["theorem_contradiction"] = r.contradiction;
    b["notes"] = r.notes;
    write_file(ctx, "zeros.json", b["certificates"].dump(2), b);
    return out;
}

std::vector<PerturbationField> pick_perturbations(const AnalysisConfig& cfg, bool scaled) {
    std::vector<PerturbationField> out;
    for (const auto& p : cfg.perturbations) {
        if (!cfg.run.perturbation.empty() && p.name != cfg.run.perturbation) continue;
        if (p.scale_param.empty() != scaled) out.push_back(p);
    }
    if (out.empty() && cfg.run.perturbation.empty() && cfg.safeset) {
        for (auto& p : candidate_perturbations(*cfg.safeset)) {
            if (p.scale_param.empty() != scaled) out.push_back(std::move(p));
        }
    }
    return out;
}

Section cmd_obstruct_t3(const AnalysisConfig& cfg, const RunContext&) {
    const SafeSet& s = need_safeset(cfg);
    const System& sys = need_system(cfg);
    Section out;
    const bool user = !cfg.perturbations.empty();
    SearchOptions opts;
    opts.seed = cfg.run.seed;
    out.body["verdicts"] = json::array();
    for (const auto& p : pick_perturbations(cfg, false)) {
        try {
            const auto v = check_theorem3(sys, s, p, opts);
            out.violated = out.violated || v.outcome == Outcome::Violated;
            out.body["verdicts"].push_back(to_json(v));
        } catch (const ObstructionError& e) {
            // Built-in candidates may be inadmissible for a given h; user fields must be admissible.
            if (user || e.kind() != ObstructionError::Kind::Inadmissible) throw;
            out.body["skipped"].push_back({{"perturbation", p.name}, {"reason", e.what()}});
        }
    }
    return out;
}

Section cmd_obstruct_family(const AnalysisConfig& cfg, const RunContext&) {
    const SafeSet& s = need_safeset(cfg);
    const System& sys = need_system(cfg);
    Section out;
    SearchOptions opts;
    opts.seed = cfg.run.seed;
    out.body["verdicts"] = json::array();
    for (const auto& p : pick_perturbations(cfg, true)) {
        for (Theorem t : cfg.run.family_theorems) {
            const auto v = check_neighborhood_family(sys, s, p, t, opts, cfg.run.t0);
            out.violated = out.violated || v.outcome == Outcome::Violated;
            out.body["verdicts"].push_back(to_json(v));
        }
    }
    return out;
}

Section cmd_brockett(const AnalysisConfig& cfg, const RunContext&) {
    const System& sys = need_system(cfg);
    BrockettOptions opts;
    opts.seed = cfg.run.seed;
    Vec xstar = Vec::Zero(sys.n());
    if (cfg.brockett) {
        xstar = cfg.brockett->xstar;
        opts.ball_radius = cfg.brockett->ball_radius;
        opts.search_radius = cfg.brockett->search_radius;
    }
    const auto v = brockett_check(sys, xstar, opts);
    Section out;
    out.violated = v.outcome == Outcome::Violated;
    out.body = to_json(v);
    out.body["xstar"] = to_json(xstar);
    out.body["residual_statistics_scope"] = "all directions and rungs; the ladder shows the witness direction";
    return out;
}

Section cmd_flow_invariance(const AnalysisConfig& cfg, const RunContext& ctx) {
    const SafeSet& s = need_safeset(cfg);
    const VectorField x = config_field(cfg);
    Section out;
    json& b = out.body;
    const auto r = verify_forward_invariance(x, s, cfg.run.trajectories, cfg.run.horizon);
    b["field"] = field_label(cfg);
    b["horizon"] = cfg.run.horizon;
    b["passed"] = r.passed;
    b["min_h"] = r.min_h;
    b["trajectories"] = r.trajectories;
    b["failures"] = r.failures;
    b["errors"] = r.errors;
    b["finite_horizon_note"] = "forward invariance is checked on [0, horizon] only";
    if (!r.passed) b["witness"] = {{"start", to_json(r.witness_start)}, {"time", r.witness_time}};
    if (r.witness) write_file(ctx, "witness_trajectory.csv", trajectory_csv(*r.witness, &s), b);
    const auto cls = classify_boundary(s, x, boundary_sample(s, 200));
    if (cls.summary == BoundarySummary::AllInward) {
        const auto se = strict_entry_check(x, s, cfg.run.horizon);
        b["strict_entry"] = {{"passed", se.passed}, {"min_h", se.min_h}, {"samples", se.samples}};
    }
    return out;
}

Section cmd_flow_out(const AnalysisConfig& cfg, const RunContext& ctx) {
    const SafeSet& s = need_safeset(cfg);
    const double t0 = cfg.run.t0;
    Section out;
    json& b = out.body;
    const auto fo = flow_out(s, t0, 2 * t0);
    b["t0"] = t0;
    b["t1"] = 2 * t0;
    b["samples"] = fo.boundary_image.size();
    b["max_identity_error"] = fo.max_identity_error;
    b["effective_barrier"] = fo.effective.barrier().to_string();
    b["chi_c"] = euler_characteristic(build_cubical_complex(s));
    b["chi_tilde"] = euler_characteristic(build_cubical_complex(fo.effective));
    b["diffeomorphism_note"] = "chi equality and nesting are checked; a diffeomorphism is not verified numerically";
    write_file(ctx, "flowout_boundary_image.csv", points_csv(fo.boundary_image, &s), b);
    const bool have_field = cfg.alpha && (cfg.controller || !cfg.run.field.empty());
    if (have_field) {
        try {
            const auto l = verify_lemma1(s, config_field(cfg), *cfg.alpha, t0);
            b["lemma1"] = {{"passed", l.passed},          {"band_min_slack", l.band_min_slack}, {"min_inward", l.min_inward},
                           {"band_samples", l.band_samples}, {"image_samples", l.image_samples}};
        } catch (const FlowError& e) {
            if (e.kind() != FlowError::Kind::Hypothesis) throw;
            b["lemma1"] = {{"passed", false}, {"hypothesis_violation", e.what()}, {"witness", to_json(e.witness())}};
        }
    }
    return out;
}

Section cmd_synthesize(const AnalysisConfig& cfg, const RunContext& ctx) {
    const SafeSet& s = need_safeset(cfg);
    const System& sys = need_system(cfg);
    const AlphaFunction& alpha = need_alpha(cfg);
    if (!sys.is_affine()) throw ConfigError("system.type", "synthesize needs a control-affine system");
    const auto& a = *sys.affine();
    Section out;
    json& b = out.body;
    CoverOptions co;
    co.margin = cfg.run.margin;
    co.seed = cfg.run.seed;
    co.t0 = cfg.run.strict_t0;
    try {
        auto patches = build_local_cover(a, s, alpha, co);
        b["cover"] = {{"status", "ok"}, {"patches", patches.size()}, {"margin", co.margin}};
        auto k = blend(std::move(patches));
        const auto r = verify_strict(a, s, alpha, Controller(k), cfg.run.strict_t0, cfg.run.strict_samples, cfg.run.seed);
        b["verify_strict"] = {{"passed", r.passed},
                              {"samples", r.samples},
                              {"min_slack", r.min_slack},
                              {"witness", to_json(r.witness)},
                              {"uncovered", r.uncovered},
                              {"max_weight_error", r.max_weight_error},
                              {"min_blend_gap", r.min_blend_gap},
                              {"t0", r.t0}};
        write_file(ctx, "controller.json", blended_to_json(*k).dump(2), b);
    } catch (const SynthesisError& e) {
        if (e.kind() != SynthesisError::Kind::StrictnessFailure) throw;
        b["cover"] = {{"status", "failed"}, {"reason", e.what()}, {"witness", to_json(e.witness())}};
        b["note"] = "non-strict CBFs may admit no continuous safe controller";
    }
    if (cfg.controller && cfg.controller->kind == ControllerSpec::Kind::Qp) {
        const auto r = verify_strict(a, s, alpha, config_controller(cfg), cfg.run.strict_t0, cfg.run.strict_samples, cfg.run.seed);
        b["qp_filter"] = {{"min_slack", r.min_slack}, {"samples", r.samples}, {"witness", to_json(r.witness)}};
    }
    return out;
}

json table_one(const std::map<std::string, std::string>& outcomes) {
    auto outcome = [&](const std::string& key) {
        auto it = outcomes.find(key);
        return it == outcomes.end() ? json(nullptr) : json(it->second);
    };
    return json::array({
        {{"row", "CBF"}, {"unique_integrability", false}, {"perturbation", "{Z : dh_p Z_p <= 0}"},
         {"necessary_condition", "exists (p,u) in C x U: F(p,u) = Z_p"}, {"this_run", outcome("T3")}},
        {{"row", "CBF on D"}, {"unique_integrability", false}, {"perturbation", "{Z : Z_p in W}"},
         {"necessary_condition", "exists (p,u) in V x U: F(p,u) = Z_p"}, {"this_run", outcome("T4")}},
        {{"row", "Strict CBF"}, {"unique_integrability", false}, {"perturbation", "{Z : Z_p in W}"},
         {"necessary_condition", "exists (p,u) in C x U: F(p,u) = Z_p"}, {"this_run", outcome("Cor1")}},
        {{"row", "Brockett"}, {"unique_integrability", true}, {"perturbation", "z in W"},
         {"necessary_condition", "exists (x,u) in R^n x R^m: f(x,u) = z"}, {"this_run", outcome("Brockett")}},
    });
}

using Handler = std::function<Section(const AnalysisConfig&, const RunContext&)>;

const std::map<std::string, Handler>& handlers() {
    static const std::map<std::string, Handler> h{
        {"euler", cmd_euler},
        {"classify", cmd_classify},
        {"poincare-hopf", cmd_poincare_hopf},
        {"obstruct-t3", cmd_obstruct_t3},
        {"obstruct-family", cmd_obstruct_family},
        {"brockett", cmd_brockett},
        {"flow-invariance", cmd_flow_invariance},
        {"flow-out", cmd_flow_out},
        {"synthesize", cmd_synthesize},
    };
    return h;
}

// Worst outcome per theorem across the verdict lists found in a section body.
void collect_outcomes(const json& body, std::map<std::string, std::string>& out) {
    auto rank = [](const std::string& o) { return o == "violated" ? 2 : o == "inconclusive" ? 1 : 0; };
    auto take = [&](const json& v) {
        if (!v.contains("theorem")) return;
        const auto t = v["theorem"].get<std::string>();
        const auto o = v["outcome"].get<std::string>();
        if (!out.count(t) || rank(o) > rank(out[t])) out[t] = o;
    };
    if (body.contains("verdicts")) {
        for (const auto& v : body["verdicts"]) take(v);
    } else {
        take(body);
    }
}

Section cmd_all(const AnalysisConfig& cfg, const RunContext& ctx, bool& had_error) {
    Section out;
    json steps = json::array();
    std::map<std::string, std::string> outcomes;
    auto step = [&](const std::string& title, const std::vector<std::string>& commands) {
        json s{{"step", title}, {"results", json::object()}};
        for (const auto& c : commands) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                Section r = handlers().at(c)(cfg, ctx);
                out.violated = out.violated || r.violated;
                collect_outcomes(r.body, outcomes);
                s["results"][c] = std::move(r.body);
            } catch (const std::exception& e) {
                had_error = true;
                s["results"][c] = {{"error", e.what()}};
            }
            s["wall_time_s"][c] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        steps.push_back(std::move(s));
    };
    const bool has_field = cfg.controller || !cfg.run.field.empty();
    std::vector<std::string> controller_cmds{"euler"};
    if (has_field) controller_cmds.push_back("classify");
    step("Controller: CBF, safe set topology and closed loop", controller_cmds);
    step("Perturbation: admissible fields Z", {});
    json pert = json::array();
    if (cfg.safeset) {
        for (const auto& p : pick_perturbations(cfg, false)) pert.push_back({{"name", p.name}, {"family", false}});
        for (const auto& p : pick_perturbations(cfg, true)) pert.push_back({{"name", p.name}, {"family", true}});
    }
    steps.back()["results"]["perturbations"] = pert;
    step("Zero: Poincare-Hopf on the perturbed closed loop", has_field ? std::vector<std::string>{"poincare-hopf"} : std::vector<std::string>{});
    std::vector<std::string> input_cmds;
    if (cfg.system && cfg.safeset) input_cmds = {"obstruct-t3", "obstruct-family"};
    if (cfg.brockett) input_cmds.push_back("brockett");
    step("Input: conclude existence of (p, u) with F(p, u) = Z_p", input_cmds);
    out.body["narrative"] = std::move(steps);
    out.body["table_I"] = table_one(outcomes);
    return out;
}

json zero_box(const SubBox& b) { return {{"lower", to_json(b.lower)}, {"upper", to_json(b.upper)}}; }

}  // namespace

json to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

json to_json(const ZeroCertificate& c) {
    return {{"point", to_json(c.point)},
            {"residual", c.residual},
            {"method", to_string(c.method)},
            {"box", zero_box(c.box)},
            {"isolated", c.isolated ? "yes" : "non-isolated (heuristic)"}};
}

json to_json(const SolvabilityResult& r) {
    return {{"status", to_string(r.status)}, {"p", to_json(r.p)},   {"u", to_json(r.u)},
            {"residual", r.residual},        {"tol", r.tol},         {"method", to_string(r.method)}};
}

json to_json(const ObstructionVerdict& v) {
    json j;
    j["theorem"] = to_string(v.theorem);
    j["outcome"] = to_string(v.outcome);
    j["region"] = v.region;
    j["witness"] = json::object();
    if (!v.witness_field.empty()) j["witness"]["field"] = v.witness_field;
    if (v.witness_direction.size()) j["witness"]["direction"] = to_json(v.witness_direction);
    if (v.solution) j["witness"]["solving_pair"] = to_json(*v.solution);
    j["residual_statistics"] = {{"min", v.residuals.min},
                                {"max", v.residuals.max},
                                {"mean", v.residuals.mean},
                                {"count", v.residuals.count},
                                {"argmin", to_json(v.residuals.argmin)}};
    j["sampled_points"] = v.sampled_points;
    j["epsilon_ladder"] = json::array();
    for (const auto& r : v.ladder) {
        json rung{{"scale", r.scale},
                  {"status", to_string(r.status)},
                  {"min_residual", r.residuals.min},
                  {"max_residual", r.residuals.max}};
        if (r.refined_min) rung["refined_min_residual"] = *r.refined_min;
        j["epsilon_ladder"].push_back(std::move(rung));
    }
    j["notes"] = v.notes;
    return j;
}

json blended_to_json(const BlendedController& k) {
    json j;
    j["profile"] = k.profile();
    j["normalization"] = k.normalization();
    j["patches"] = json::array();
    for (const auto& p : k.patches()) {
        j["patches"].push_back({{"center", to_json(p.center)}, {"radius", p.radius}, {"input", to_json(p.input)}, {"margin", p.margin}});
    }
    return j;
}

std::shared_ptr<const BlendedController> blended_from_json(const json& j) {
    auto vec = [](const json& a) {
        Vec v(static_cast<Eigen::Index>(a.size()));
        for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
        return v;
    };
    std::vector<Patch> patches;
    for (const auto& p : j.at("patches")) {
        patches.push_back(Patch{vec(p.at("center")), p.at("radius").get<double>(), vec(p.at("input")), p.value("margin", 0.0)});
    }
    return blend(std::move(patches));
}

std::string config_hash(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) h = (h ^ c) * 1099511628211ull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"euler",           "classify", "poincare-hopf", "obstruct-t3", "obstruct-family",
                                                "brockett",        "flow-invariance", "flow-out", "synthesize",  "all"};
    return names;
}

RunResult run(const AnalysisConfig& cfg, const std::string& command, const RunContext& ctx) {
    RunResult rr;
    json& rep = rr.report;
    rep["tool"] = "cbflab";
    rep["version"] = kToolVersion;
    rep["schema_version"] = kSchemaVersion;
    rep["config"] = cfg.source;
    rep["config_hash"] = config_hash(cfg.text);
    rep["command"] = command;
    rep["seed"] = cfg.run.seed;
    rep["threads"] = thread_count();
    rep["warnings"] = cfg.warnings;

    const auto t0 = std::chrono::steady_clock::now();
    try {
        Section s;
        bool had_error = false;
        if (command == "all") {
            s = cmd_all(cfg, ctx, had_error);
        } else {
            auto it = handlers().find(command);
            if (it == handlers().end()) throw std::invalid_argument("unknown command '" + command + "'");
            s = it->second(cfg, ctx);
        }
        rep["results"] = std::move(s.body);
        rep["status"] = had_error ? "error" : "ok";
        rr.exit_code = had_error ? 1 : s.violated ? 2 : 0;
    } catch (const std::exception& e) {
        rep["status"] = "error";
        rep["error"] = e.what();
        rr.exit_code = 1;
    }
    rep["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep["exit_code"] = rr.exit_code;
    return rr;
}

}  // namespace cbflab
