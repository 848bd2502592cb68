#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "cbflab/parallel.hpp"
#include "cbflab/report.hpp"

int main(int argc, char** argv) {
    using namespace cbflab;
    CLI::App app{"cbflab: topological obstructions to continuous safe controllers"};
    std::string command, config_path, out_path, export_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads, resolution;
    app.add_option("command", command, "analysis to run (default: run.commands from the config)")
        ->check(CLI::IsMember(command_names()));
    app.add_option("--config,-c", config_path, "YAML config file")->required();
    app.add_option("--out,-o", out_path, "write the JSON report here instead of stdout");
    app.add_option("--seed", seed, "override run.seed");
    app.add_option("--threads", threads, "override run.threads")->check(CLI::PositiveNumber);
    app.add_option("--resolution", resolution, "override safeset.resolution")->check(CLI::Range(2, 4096));
    app.add_option("--export", export_dir, "directory for CSV/JSON side files");
    CLI11_PARSE(app, argc, argv);

    json out;
    int exit_code = 0;
    try {
        AnalysisConfig cfg = load_config(config_path);
        if (seed) cfg.run.seed = *seed;
        if (threads) cfg.run.threads = *threads;
        if (resolution && cfg.safeset) cfg.safeset = cfg.safeset->with_resolution(*resolution);
        set_thread_count(cfg.run.threads);
        std::vector<std::string> commands = command.empty() ? cfg.run.commands : std::vector<std::string>{command};
        if (commands.empty()) throw std::invalid_argument("no command given and run.commands is empty");
        std::vector<json> reports;
        for (const auto& c : commands) {
            auto rr = run(cfg, c, RunContext{export_dir});
            // An error outranks a violation.
            if (rr.exit_code == 1 || (rr.exit_code == 2 && exit_code == 0)) exit_code = rr.exit_code;
            reports.push_back(std::move(rr.report));
        }
        out = reports.size() == 1 ? reports.front() : json{{"reports", reports}, {"exit_code", exit_code}};
    } catch (const std::exception& e) {
        exit_code = 1;
        out = {{"tool", "cbflab"},
               {"version", kToolVersion},
               {"schema_version", kSchemaVersion},
               {"command", command},
               {"config", config_path},
               {"status", "error"},
               {"error", e.what()},
               {"exit_code", 1}};
    }
    const std::string text = out.dump(2) + "\n";
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream(out_path) << text;
    }
    if (exit_code == 1) {
        std::string msg = out.value("error", std::string());
        if (msg.empty() && out.contains("reports")) {
            for (const auto& r : out["reports"]) {
                if (r.contains("error")) msg = r["error"].get<std::string>();
            }
        }
        std::cerr << "cbflab: " << (msg.empty() ? "see report" : msg) << "\n";
    }
    return exit_code;
}
