#pragma once

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cbflab/config.hpp"
#include "cbflab/obstruction.hpp"
#include "cbflab/synthesis.hpp"
#include "cbflab/zeros.hpp"

namespace cbflab {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

json to_json(const Vec& v);
json to_json(const ZeroCertificate& c);
json to_json(const SolvabilityResult& r);
json to_json(const ObstructionVerdict& v);

json blended_to_json(const BlendedController& k);
std::shared_ptr<const BlendedController> blended_from_json(const json& j);

/// FNV-1a 64-bit, hex encoded.
std::string config_hash(const std::string& text);

const std::vector<std::string>& command_names();

struct RunContext {
    std::string export_dir;  // empty: no CSV/JSON side files
};

struct RunResult {
    json report;
    int exit_code = 0;  // 0 completed, 2 some verdict Violated, 1 error
};

/// Runs one command and wraps its results in the versioned report envelope.
RunResult run(const AnalysisConfig& cfg, const std::string& command, const RunContext& ctx = {});

}  // namespace cbflab
