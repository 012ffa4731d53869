#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "evolab/experiment.hpp"
#include "evolab/gateway.hpp"
#include "evolab/ideas.hpp"

namespace evolab::config {

namespace fs = std::filesystem;

/// One model endpoint. `type` is "mock" (scripted program file) or "http".
struct BackendConfig {
    std::string type = "http";
    std::string model;
    /// mock: program JSON file, relative to the config file.
    std::string program;
    /// http
    std::string chat_url = "http://localhost:11434/v1/chat/completions";
    std::string embedding_url = "http://localhost:11434/api/embed";
    std::map<std::string, std::string> headers;
    std::string api_key_env;
    int timeout_seconds = 120;
    /// chat generation params
    double temperature = 0.7;
    int max_output_tokens = 4096;
    std::optional<std::int64_t> seed;
};

struct LiteratureConfig {
    /// "fixture" or "semantic-scholar"
    std::string provider = "semantic-scholar";
    std::string fixture_path;
    std::string search_url = "https://api.semanticscholar.org/graph/v1/paper/search";
    std::string api_key_env = "S2_API_KEY";
    int timeout_seconds = 30;
    std::size_t limit = 10;
};

inline constexpr std::array<const char*, 5> kChatRoles{"researcher", "reviewer", "judge", "engineer", "evolution"};

struct RunConfig {
    std::size_t k_i = 2;
    std::size_t k_e = 1;
    std::size_t n_i = 21;
    std::array<int, 4> stage_budgets = experiment::kDefaultStageBudgets;
    std::size_t idea_workers = 3;
    std::size_t experiment_workers = 4;
    std::size_t tournament_workers = 3;
    experiment::Objective objective;

    ideas::TreeShape tree;
    std::size_t top_k = 3;
    std::size_t round_width = 1;
    std::size_t max_goal_chars = 4000;

    LiteratureConfig literature;
    experiment::SandboxConfig sandbox;
    gateway::RetryPolicy retry;

    /// Per chat role; roles without an entry use "default".
    std::map<std::string, BackendConfig> backends;
    BackendConfig embedding;
    std::size_t embedding_dimension = 0;

    /// Single workers everywhere so scripted sequences are consumed in a fixed order.
    bool deterministic = false;

    /// Directory against which relative paths in the file are resolved.
    fs::path base_dir = ".";

    /// Documented defaults: hosted models per role behind an OpenAI-compatible endpoint.
    static RunConfig defaults();

    /// Throws ValidationError on counts below 1 and similar.
    void validate() const;

    /// With deterministic set, all worker counts become 1.
    RunConfig effective() const;
};

/// Unknown keys are rejected so typos surface as configuration errors.
RunConfig from_json(const nlohmann::json& j, const fs::path& base_dir = ".");
nlohmann::json to_json(const RunConfig& cfg);

/// Reads a JSON config file over the defaults. Throws ConfigError / ParseError.
RunConfig load(const fs::path& path);

/// Gateway with every configured role bound. Mock backends that name the same program share one
/// instance so rule sequences advance across roles.
gateway::ModelGateway build_gateway(const RunConfig& cfg);

std::unique_ptr<ideas::LiteratureProvider> build_literature(const RunConfig& cfg);

}  // namespace evolab::config
