#include "evolab/config.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"

namespace evolab::config {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
        throw ConfigError(fmt::format("{}: expected an object", where));
    }
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}.{}: {}", where, key, e.what()));
    }
}

std::string resolve(const std::string& path, const fs::path& base) {
    if (path.empty()) {
        return path;
    }
    fs::path p(path);
    if (p.is_relative()) {
        p = base / p;
    }
    return fs::absolute(p).lexically_normal().string();
}

BackendConfig backend_from_json(const json& j, std::string_view where, const fs::path& base) {
    reject_unknown(j, where,
                   {"type", "model", "program", "chat_url", "embedding_url", "headers", "api_key_env", "timeout_seconds",
                    "temperature", "max_output_tokens", "seed"});
    BackendConfig b;
    read(j, "type", b.type, where);
    read(j, "model", b.model, where);
    read(j, "program", b.program, where);
    read(j, "chat_url", b.chat_url, where);
    read(j, "embedding_url", b.embedding_url, where);
    read(j, "headers", b.headers, where);
    read(j, "api_key_env", b.api_key_env, where);
    read(j, "timeout_seconds", b.timeout_seconds, where);
    read(j, "temperature", b.temperature, where);
    read(j, "max_output_tokens", b.max_output_tokens, where);
    if (j.contains("seed") && !j["seed"].is_null()) {
        b.seed = j["seed"].get<std::int64_t>();
    }
    if (b.type != "mock" && b.type != "http") {
        throw ConfigError(fmt::format("{}.type must be 'mock' or 'http', got '{}'", where, b.type));
    }
    b.program = resolve(b.program, base);
    return b;
}

json backend_to_json(const BackendConfig& b) {
    json j = {{"type", b.type},
              {"model", b.model},
              {"temperature", b.temperature},
              {"max_output_tokens", b.max_output_tokens},
              {"seed", b.seed ? json(*b.seed) : json(nullptr)}};
    if (b.type == "mock") {
        j["program"] = b.program;
    } else {
        j["chat_url"] = b.chat_url;
        j["embedding_url"] = b.embedding_url;
        j["headers"] = b.headers;
        j["api_key_env"] = b.api_key_env;
        j["timeout_seconds"] = b.timeout_seconds;
    }
    return j;
}

std::shared_ptr<gateway::Backend> make_backend(const BackendConfig& b, std::string_view role,
                                               std::map<std::string, std::shared_ptr<gateway::ScriptedMock>>& mocks) {
    if (b.type == "mock") {
        auto& slot = mocks[b.program];
        if (!slot) {
            slot = b.program.empty() ? std::make_shared<gateway::ScriptedMock>()
                                     : std::make_shared<gateway::ScriptedMock>(gateway::ScriptedMock::from_file(b.program));
        }
        return slot;
    }
    gateway::HttpBackendConfig h;
    h.id = fmt::format("http:{}", role);
    h.chat_url = b.chat_url;
    h.embedding_url = b.embedding_url;
    h.headers = b.headers;
    h.api_key_env = b.api_key_env;
    h.timeout_seconds = b.timeout_seconds;
    return std::make_shared<gateway::HttpBackend>(h);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    BackendConfig ideation;
    ideation.model = "gemini-2.5-pro";
    BackendConfig coding;
    coding.model = "claude-4.5-haiku";
    cfg.backends["default"] = ideation;
    for (const auto* role : kChatRoles) {
        cfg.backends[role] = ideation;
    }
    cfg.backends["engineer"] = coding;
    cfg.embedding.model = "mxbai-embed-large";
    return cfg;
}

void RunConfig::validate() const {
    auto positive = [](std::size_t v, std::string_view name) {
        if (v < 1) {
            throw ValidationError(fmt::format("config: {} must be at least 1", name));
        }
    };
    positive(k_i, "k_i");
    positive(k_e, "k_e");
    positive(n_i, "n_i");
    positive(idea_workers, "idea_workers");
    positive(experiment_workers, "experiment_workers");
    positive(tournament_workers, "tournament_workers");
    positive(top_k, "top_k");
    positive(round_width, "round_width");
    positive(tree.roots, "tree.roots");
    positive(literature.limit, "literature.limit");
    for (int i = 0; i < 4; ++i) {
        if (stage_budgets[static_cast<std::size_t>(i)] < 1) {
            throw ValidationError(fmt::format("config: stage_budgets[{}] must be at least 1", i));
        }
    }
    if (tree.max_depth < 0) {
        throw ValidationError("config: tree.max_depth must be non-negative");
    }
    if (sandbox.limits.wall_time_s <= 0 || sandbox.limits.max_log_bytes == 0) {
        throw ValidationError("config: sandbox limits must be positive");
    }
    if (retry.max_attempts < 1) {
        throw ValidationError("config: retry.max_attempts must be at least 1");
    }
    if (objective.metric.empty()) {
        throw ValidationError("config: objective.metric is empty");
    }
    if (literature.provider != "fixture" && literature.provider != "semantic-scholar") {
        throw ValidationError(fmt::format("config: unknown literature provider '{}'", literature.provider));
    }
}

RunConfig RunConfig::effective() const {
    RunConfig out = *this;
    if (deterministic) {
        out.idea_workers = 1;
        out.experiment_workers = 1;
        out.tournament_workers = 1;
    }
    return out;
}

RunConfig from_json(const json& j, const fs::path& base_dir) {
    reject_unknown(j, "config",
                   {"k_i", "k_e", "n_i", "stage_budgets", "idea_workers", "experiment_workers", "tournament_workers",
                    "objective", "tree", "top_k", "round_width", "max_goal_chars", "literature", "sandbox", "retry",
                    "backends", "embedding", "embedding_dimension", "deterministic"});
    RunConfig cfg = RunConfig::defaults();
    cfg.base_dir = base_dir;
    read(j, "k_i", cfg.k_i, "config");
    read(j, "k_e", cfg.k_e, "config");
    read(j, "n_i", cfg.n_i, "config");
    read(j, "stage_budgets", cfg.stage_budgets, "config");
    read(j, "idea_workers", cfg.idea_workers, "config");
    read(j, "experiment_workers", cfg.experiment_workers, "config");
    read(j, "tournament_workers", cfg.tournament_workers, "config");
    read(j, "top_k", cfg.top_k, "config");
    read(j, "round_width", cfg.round_width, "config");
    read(j, "max_goal_chars", cfg.max_goal_chars, "config");
    read(j, "embedding_dimension", cfg.embedding_dimension, "config");
    read(j, "deterministic", cfg.deterministic, "config");

    if (j.contains("objective")) {
        const auto& o = j["objective"];
        reject_unknown(o, "config.objective", {"metric", "direction"});
        read(o, "metric", cfg.objective.metric, "config.objective");
        if (o.contains("direction")) {
            cfg.objective.direction = experiment::direction_from_string(o["direction"].get<std::string>());
        }
    }
    if (j.contains("tree")) {
        const auto& t = j["tree"];
        reject_unknown(t, "config.tree", {"roots", "branching", "max_depth"});
        read(t, "roots", cfg.tree.roots, "config.tree");
        read(t, "branching", cfg.tree.branching, "config.tree");
        read(t, "max_depth", cfg.tree.max_depth, "config.tree");
    }
    if (j.contains("literature")) {
        const auto& l = j["literature"];
        reject_unknown(l, "config.literature",
                       {"provider", "fixture_path", "search_url", "api_key_env", "timeout_seconds", "limit"});
        read(l, "provider", cfg.literature.provider, "config.literature");
        read(l, "fixture_path", cfg.literature.fixture_path, "config.literature");
        read(l, "search_url", cfg.literature.search_url, "config.literature");
        read(l, "api_key_env", cfg.literature.api_key_env, "config.literature");
        read(l, "timeout_seconds", cfg.literature.timeout_seconds, "config.literature");
        read(l, "limit", cfg.literature.limit, "config.literature");
        cfg.literature.fixture_path = resolve(cfg.literature.fixture_path, base_dir);
    }
    if (j.contains("sandbox")) {
        const auto& s = j["sandbox"];
        reject_unknown(s, "config.sandbox", {"wall_time_s", "max_log_bytes", "entry_file", "interpreters"});
        read(s, "wall_time_s", cfg.sandbox.limits.wall_time_s, "config.sandbox");
        read(s, "max_log_bytes", cfg.sandbox.limits.max_log_bytes, "config.sandbox");
        read(s, "entry_file", cfg.sandbox.entry_file, "config.sandbox");
        read(s, "interpreters", cfg.sandbox.interpreters, "config.sandbox");
    }
    if (j.contains("retry")) {
        const auto& r = j["retry"];
        reject_unknown(r, "config.retry", {"max_attempts", "initial_backoff_ms", "multiplier"});
        read(r, "max_attempts", cfg.retry.max_attempts, "config.retry");
        if (r.contains("initial_backoff_ms")) {
            cfg.retry.initial_backoff = std::chrono::milliseconds(r["initial_backoff_ms"].get<long long>());
        }
        read(r, "multiplier", cfg.retry.multiplier, "config.retry");
    }
    if (j.contains("backends")) {
        if (!j["backends"].is_object()) {
            throw ConfigError("config.backends: expected an object keyed by role");
        }
        cfg.backends.clear();
        for (const auto& [role, b] : j["backends"].items()) {
            cfg.backends[role] = backend_from_json(b, "config.backends." + role, base_dir);
        }
    }
    if (j.contains("embedding")) {
        cfg.embedding = backend_from_json(j["embedding"], "config.embedding", base_dir);
    }
    cfg.validate();
    return cfg;
}

json to_json(const RunConfig& cfg) {
    json backends = json::object();
    for (const auto& [role, b] : cfg.backends) {
        backends[role] = backend_to_json(b);
    }
    return {{"k_i", cfg.k_i},
            {"k_e", cfg.k_e},
            {"n_i", cfg.n_i},
            {"stage_budgets", cfg.stage_budgets},
            {"idea_workers", cfg.idea_workers},
            {"experiment_workers", cfg.experiment_workers},
            {"tournament_workers", cfg.tournament_workers},
            {"objective", {{"metric", cfg.objective.metric}, {"direction", experiment::to_string(cfg.objective.direction)}}},
            {"tree", {{"roots", cfg.tree.roots}, {"branching", cfg.tree.branching}, {"max_depth", cfg.tree.max_depth}}},
            {"top_k", cfg.top_k},
            {"round_width", cfg.round_width},
            {"max_goal_chars", cfg.max_goal_chars},
            {"literature",
             {{"provider", cfg.literature.provider},
              {"fixture_path", cfg.literature.fixture_path},
              {"search_url", cfg.literature.search_url},
              {"api_key_env", cfg.literature.api_key_env},
              {"timeout_seconds", cfg.literature.timeout_seconds},
              {"limit", cfg.literature.limit}}},
            {"sandbox",
             {{"wall_time_s", cfg.sandbox.limits.wall_time_s},
              {"max_log_bytes", cfg.sandbox.limits.max_log_bytes},
              {"entry_file", cfg.sandbox.entry_file},
              {"interpreters", cfg.sandbox.interpreters}}},
            {"retry",
             {{"max_attempts", cfg.retry.max_attempts},
              {"initial_backoff_ms", cfg.retry.initial_backoff.count()},
              {"multiplier", cfg.retry.multiplier}}},
            {"backends", backends},
            {"embedding", backend_to_json(cfg.embedding)},
            {"embedding_dimension", cfg.embedding_dimension},
            {"deterministic", cfg.deterministic}};
}

RunConfig load(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError(fmt::format("config file {} does not exist", path.string()));
    }
    return from_json(fsio::read_json(path), fs::absolute(path).parent_path());
}

gateway::ModelGateway build_gateway(const RunConfig& cfg) {
    gateway::ModelGateway gw(cfg.retry);
    std::map<std::string, std::shared_ptr<gateway::ScriptedMock>> mocks;
    for (const auto& [role, b] : cfg.backends) {
        gateway::GenerationParams params;
        params.temperature = b.temperature;
        params.max_output_tokens = b.max_output_tokens;
        params.seed = b.seed;
        gw.bind(role, gateway::RoleBinding{make_backend(b, role, mocks), b.model, params});
    }
    auto embedder = make_backend(cfg.embedding, "embedding", mocks);
    std::size_t dim = cfg.embedding_dimension;
    if (dim == 0 && cfg.embedding.type == "mock") {
        dim = mocks[cfg.embedding.program]->embedding_dimension();
    }
    gw.bind_embedding(embedder, cfg.embedding.model, dim);
    return gw;
}

std::unique_ptr<ideas::LiteratureProvider> build_literature(const RunConfig& cfg) {
    if (cfg.literature.provider == "fixture") {
        if (cfg.literature.fixture_path.empty()) {
            throw ConfigError("literature.fixture_path is required for the fixture provider");
        }
        return std::make_unique<ideas::FixtureLiteratureProvider>(
            ideas::FixtureLiteratureProvider::from_file(cfg.literature.fixture_path));
    }
    ideas::SemanticScholarConfig s2;
    s2.search_url = cfg.literature.search_url;
    s2.api_key_env = cfg.literature.api_key_env;
    s2.timeout_seconds = cfg.literature.timeout_seconds;
    s2.retry = cfg.retry;
    return std::make_unique<ideas::SemanticScholarProvider>(s2);
}

}  // namespace evolab::config
