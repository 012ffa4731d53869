#include "evolab/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/text.hpp"
#include "http_util.hpp"

namespace evolab::gateway {

using nlohmann::json;

const char* to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw ValidationError(fmt::format("unknown message role '{}'", s));
}

ChatRequest ChatRequest::from_prompt(std::string system, std::string user, GenerationParams params) {
    ChatRequest req;
    if (!system.empty()) {
        req.messages.push_back({Role::system, std::move(system)});
    }
    req.messages.push_back({Role::user, std::move(user)});
    req.params = params;
    return req;
}

void ChatRequest::validate() const {
    if (messages.empty()) {
        throw ValidationError("chat request has no messages");
    }
    if (messages.front().role == Role::assistant) {
        throw ValidationError("first message must be a system or user message");
    }
    if (!(params.temperature >= 0.0) || !std::isfinite(params.temperature)) {
        throw ValidationError("temperature must be a finite value >= 0");
    }
    if (params.max_output_tokens <= 0) {
        throw ValidationError("max-output-tokens must be positive");
    }
}

std::string ChatRequest::concatenated_text() const {
    std::string out;
    for (const auto& m : messages) {
        if (!out.empty()) {
            out += "\n\n";
        }
        out += m.text;
    }
    return out;
}

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw ValidationError("embedding has zero dimension");
    }
    for (double v : values_) {
        if (!std::isfinite(v)) {
            throw ValidationError("embedding contains a non-finite value");
        }
    }
}

json to_json(const ChatRequest& req) {
    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"text", m.text}});
    }
    json params = {{"temperature", req.params.temperature}, {"max_output_tokens", req.params.max_output_tokens}};
    params["seed"] = req.params.seed ? json(*req.params.seed) : json(nullptr);
    return {{"messages", std::move(messages)}, {"params", std::move(params)}};
}

ChatRequest chat_request_from_json(const json& j) {
    ChatRequest req;
    for (const auto& m : j.at("messages")) {
        req.messages.push_back({role_from_string(m.at("role").get<std::string>()), m.at("text").get<std::string>()});
    }
    if (j.contains("params")) {
        const auto& p = j["params"];
        req.params.temperature = p.value("temperature", req.params.temperature);
        req.params.max_output_tokens = p.value("max_output_tokens", req.params.max_output_tokens);
        if (p.contains("seed") && !p["seed"].is_null()) {
            req.params.seed = p["seed"].get<std::int64_t>();
        }
    }
    return req;
}

json to_json(const ChatResponse& resp) {
    return {{"text", resp.text},
            {"usage", {{"input_tokens", resp.usage.input_tokens}, {"output_tokens", resp.usage.output_tokens}}},
            {"backend_id", resp.backend_id}};
}

// ---------------------------------------------------------------------------------------------
// ScriptedMock

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

ScriptedMock::MatchKind match_kind_from(std::string_view s) {
    if (s == "substring") return ScriptedMock::MatchKind::substring;
    if (s == "regex") return ScriptedMock::MatchKind::regex;
    if (s == "exact") return ScriptedMock::MatchKind::exact;
    throw ConfigError(fmt::format("unknown mock match kind '{}'", s));
}

bool rule_matches(const ScriptedMock::Rule& rule, const std::string& text) {
    switch (rule.kind) {
        case ScriptedMock::MatchKind::substring: return text.find(rule.pattern) != std::string::npos;
        case ScriptedMock::MatchKind::exact: return text == rule.pattern;
        case ScriptedMock::MatchKind::regex: return std::regex_search(text, std::regex(rule.pattern));
    }
    return false;
}

std::int64_t rough_token_count(std::string_view s) {
    return static_cast<std::int64_t>(text::word_tokens(s).size());
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

}  // namespace

ScriptedMock::ScriptedMock(std::vector<Rule> rules, std::string default_response, std::size_t embedding_dimension,
                           std::uint64_t seed)
    : rules_(std::move(rules)),
      default_response_(std::move(default_response)),
      embedding_dimension_(embedding_dimension),
      seed_(seed),
      rule_uses_(rules_.size(), 0) {
    if (embedding_dimension_ == 0) {
        throw ConfigError("mock embedding dimension must be positive");
    }
    for (const auto& r : rules_) {
        if (r.responses.empty()) {
            throw ConfigError(fmt::format("mock rule '{}' has no responses", r.pattern));
        }
        if (r.kind == MatchKind::regex) {
            try {
                std::regex check(r.pattern);
            } catch (const std::regex_error& e) {
                throw ConfigError(fmt::format("mock rule regex '{}' is invalid: {}", r.pattern, e.what()));
            }
        }
    }
}

ScriptedMock::ScriptedMock(const ScriptedMock& other)
    : rules_(other.rules_),
      default_response_(other.default_response_),
      embedding_dimension_(other.embedding_dimension_),
      seed_(other.seed_),
      rule_uses_(other.rules_.size(), 0) {}

ScriptedMock ScriptedMock::from_json(const json& program) {
    std::vector<Rule> rules;
    try {
        for (const auto& r : program.value("rules", json::array())) {
            Rule rule;
            rule.kind = match_kind_from(r.value("kind", std::string("substring")));
            rule.pattern = r.at("match").get<std::string>();
            if (r.contains("responses")) {
                rule.responses = r["responses"].get<std::vector<std::string>>();
            } else {
                rule.responses.push_back(r.at("response").get<std::string>());
            }
            const auto scope = r.value("scope", std::string("rule"));
            if (scope != "rule" && scope != "request") {
                throw ConfigError(fmt::format("unknown mock rule scope '{}'", scope));
            }
            rule.scope = scope == "request" ? Scope::request : Scope::rule;
            rules.push_back(std::move(rule));
        }
        return ScriptedMock(std::move(rules), program.value("default", std::string("OK")),
                            program.value("embedding_dimension", std::size_t{256}),
                            program.value("seed", std::uint64_t{0}));
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("invalid mock program: {}", e.what()));
    }
}

ScriptedMock ScriptedMock::from_file(const std::filesystem::path& path) {
    return from_json(fsio::read_json(path));
}

ScriptedMock ScriptedMock::from_transcript(const std::filesystem::path& transcript_path) {
    std::vector<Rule> rules;
    std::map<std::string, std::size_t> index;
    for (const auto& entry : Transcript::load(transcript_path)) {
        if (entry.kind != CallKind::chat) {
            continue;
        }
        const auto text = chat_request_from_json(entry.request).concatenated_text();
        const auto reply = entry.response.at("text").get<std::string>();
        auto [it, inserted] = index.emplace(text, rules.size());
        if (inserted) {
            rules.push_back(Rule{MatchKind::exact, text, {reply}, Scope::rule});
        } else {
            rules[it->second].responses.push_back(reply);
        }
    }
    return ScriptedMock(std::move(rules));
}

void ScriptedMock::add_rule(Rule rule) {
    if (rule.responses.empty()) {
        throw ConfigError("mock rule has no responses");
    }
    std::lock_guard lock(mu_);
    rules_.push_back(std::move(rule));
    rule_uses_.push_back(0);
}

std::string ScriptedMock::render(const std::string& response, const std::string& request_text,
                                 std::size_t use) const {
    std::string out = response;
    replace_all(out, "{{hash}}", text::short_hash(request_text, 8));
    replace_all(out, "{{n}}", std::to_string(use));
    return out;
}

ChatResponse ScriptedMock::complete(const ChatRequest& req, std::string_view) {
    const auto request_text = req.concatenated_text();
    std::string chosen;
    std::size_t use = 1;
    {
        std::lock_guard lock(mu_);
        call_log_.push_back(req);
        bool matched = false;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            if (!rule_matches(rule, request_text)) {
                continue;
            }
            std::size_t& counter =
                rule.scope == Scope::rule ? rule_uses_[i] : request_uses_[{i, text::short_hash(request_text, 16)}];
            const std::size_t n = counter++;
            chosen = rule.responses[std::min(n, rule.responses.size() - 1)];
            use = n + 1;
            matched = true;
            break;
        }
        if (!matched) {
            chosen = default_response_;
        }
    }
    if (chosen == kTransportErrorDirective) {
        throw TransportError("scripted transport failure");
    }
    if (chosen == kProtocolErrorDirective) {
        throw ProtocolError("scripted protocol failure");
    }
    ChatResponse resp;
    resp.text = render(chosen, request_text, use);
    resp.usage = {rough_token_count(request_text), rough_token_count(resp.text)};
    resp.backend_id = id();
    return resp;
}

Embedding ScriptedMock::embed(std::string_view input, std::string_view) {
    auto tokens = text::word_tokens(input);
    if (tokens.empty()) {
        tokens.emplace_back(input);
    }
    std::vector<double> sum(embedding_dimension_, 0.0);
    for (const auto& token : tokens) {
        std::uint64_t state = text::fnv1a64(token) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
        for (auto& v : sum) {
            // Uniform in [-1, 1).
            v += static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-52 - 1.0;
        }
    }
    double norm = 0.0;
    for (double v : sum) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        sum[0] = 1.0;
        norm = 1.0;
    }
    for (auto& v : sum) {
        v /= norm;
    }
    return Embedding(std::move(sum));
}

std::vector<ChatRequest> ScriptedMock::call_log() const {
    std::lock_guard lock(mu_);
    return call_log_;
}

std::size_t ScriptedMock::call_count() const {
    std::lock_guard lock(mu_);
    return call_log_.size();
}

// ---------------------------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

json HttpBackend::post(const std::string& url, const json& body) const {
    if (url.empty()) {
        throw ConfigError(fmt::format("backend '{}' has no endpoint configured for this call", config_.id));
    }
    const auto target = detail::split_url(url);
    httplib::Client client(target.origin);
    client.set_connection_timeout(std::chrono::seconds(config_.timeout_seconds));
    client.set_read_timeout(std::chrono::seconds(config_.timeout_seconds));
    client.set_write_timeout(std::chrono::seconds(config_.timeout_seconds));

    httplib::Headers headers;
    for (const auto& [k, v] : config_.headers) {
        headers.emplace(k, v);
    }
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            headers.emplace("Authorization", fmt::format("Bearer {}", key));
        }
    }

    auto res = client.Post(target.path, headers, body.dump(), "application/json");
    if (!res) {
        throw TransportError(fmt::format("{}: {}", url, httplib::to_string(res.error())));
    }
    if (res->status == 408 || res->status == 429 || res->status >= 500) {
        throw TransportError(fmt::format("{}: HTTP {}", url, res->status));
    }
    if (res->status < 200 || res->status >= 300) {
        throw ProtocolError(fmt::format("{}: HTTP {}: {}", url, res->status, text::first_words(res->body, 40)));
    }
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw ProtocolError(fmt::format("{}: response is not JSON: {}", url, e.what()));
    }
}

ChatResponse HttpBackend::complete(const ChatRequest& req, std::string_view model) {
    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.text}});
    }
    json body = {{"model", model},
                 {"messages", std::move(messages)},
                 {"temperature", req.params.temperature},
                 {"max_tokens", req.params.max_output_tokens}};
    if (req.params.seed) {
        body["seed"] = *req.params.seed;
    }
    const auto payload = post(config_.chat_url, body);
    try {
        ChatResponse resp;
        const auto& content = payload.at("choices").at(0).at("message").at("content");
        resp.text = content.is_null() ? std::string() : content.get<std::string>();
        if (payload.contains("usage") && payload["usage"].is_object()) {
            resp.usage.input_tokens = payload["usage"].value("prompt_tokens", std::int64_t{0});
            resp.usage.output_tokens = payload["usage"].value("completion_tokens", std::int64_t{0});
        }
        resp.backend_id = id();
        return resp;
    } catch (const json::exception& e) {
        throw ProtocolError(fmt::format("malformed chat completion payload: {}", e.what()));
    }
}

Embedding HttpBackend::embed(std::string_view input, std::string_view model) {
    const auto payload = post(config_.embedding_url, {{"model", model}, {"input", input}, {"prompt", input}});
    try {
        std::vector<double> values;
        if (payload.contains("data")) {
            values = payload["data"].at(0).at("embedding").get<std::vector<double>>();
        } else if (payload.contains("embeddings")) {
            values = payload["embeddings"].at(0).get<std::vector<double>>();
        } else {
            values = payload.at("embedding").get<std::vector<double>>();
        }
        return Embedding(std::move(values));
    } catch (const json::exception& e) {
        throw ProtocolError(fmt::format("malformed embedding payload: {}", e.what()));
    } catch (const ValidationError& e) {
        throw ProtocolError(fmt::format("malformed embedding payload: {}", e.what()));
    }
}

// ---------------------------------------------------------------------------------------------
// Transcript

json to_json(const TranscriptEntry& e) {
    return {{"timestamp", e.timestamp},
            {"role", e.caller_role},
            {"kind", e.kind == CallKind::chat ? "chat" : "embed"},
            {"request", e.request},
            {"response", e.response}};
}

TranscriptEntry transcript_entry_from_json(const json& j) {
    TranscriptEntry e;
    e.timestamp = j.at("timestamp").get<std::string>();
    e.caller_role = j.at("role").get<std::string>();
    e.kind = j.at("kind").get<std::string>() == "embed" ? CallKind::embed : CallKind::chat;
    e.request = j.at("request");
    e.response = j.at("response");
    return e;
}

Transcript::Transcript(Transcript&& other) noexcept {
    std::lock_guard lock(other.mu_);
    entries_ = std::move(other.entries_);
    sink_ = std::move(other.sink_);
}

Transcript& Transcript::operator=(Transcript&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        entries_ = std::move(other.entries_);
        sink_ = std::move(other.sink_);
    }
    return *this;
}

void Transcript::set_sink(std::filesystem::path path) {
    std::lock_guard lock(mu_);
    sink_ = std::move(path);
}

void Transcript::append(TranscriptEntry entry) {
    std::lock_guard lock(mu_);
    if (sink_) {
        fsio::append_line(*sink_, to_json(entry).dump());
    }
    entries_.push_back(std::move(entry));
}

std::vector<TranscriptEntry> Transcript::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::size_t Transcript::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::vector<TranscriptEntry> Transcript::load(const std::filesystem::path& path) {
    std::vector<TranscriptEntry> out;
    std::size_t line_no = 0;
    for (const auto& line : text::split_lines(fsio::read_file(path))) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(transcript_entry_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// ModelGateway

ModelGateway::ModelGateway(RetryPolicy policy) : policy_(policy) {
    if (policy_.max_attempts < 1) {
        throw ConfigError("retry policy needs at least one attempt");
    }
}

void ModelGateway::bind(std::string role, RoleBinding binding) {
    if (!binding.backend) {
        throw ConfigError(fmt::format("role '{}' bound to no backend", role));
    }
    roles_.insert_or_assign(std::move(role), std::move(binding));
}

void ModelGateway::bind_embedding(std::shared_ptr<Backend> backend, std::string model,
                                  std::size_t expected_dimension) {
    if (!backend) {
        throw ConfigError("embedding bound to no backend");
    }
    embedding_backend_ = std::move(backend);
    embedding_model_ = std::move(model);
    expected_dimension_ = expected_dimension;
}

const RoleBinding& ModelGateway::binding_for(std::string_view role) const {
    if (auto it = roles_.find(role); it != roles_.end()) {
        return it->second;
    }
    if (auto it = roles_.find(std::string_view("default")); it != roles_.end()) {
        return it->second;
    }
    throw ConfigError(fmt::format("no backend configured for role '{}'", role));
}

template <typename Fn>
auto ModelGateway::with_retries(std::string_view what, Fn&& fn) -> decltype(fn()) {
    auto backoff = policy_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const TransportError& e) {
            if (attempt >= policy_.max_attempts) {
                throw RetryableError(fmt::format("{} failed after {} attempts: {}", what, attempt, e.what()), attempt);
            }
            spdlog::debug("{} attempt {} failed: {}", what, attempt, e.what());
            if (backoff.count() > 0) {
                std::this_thread::sleep_for(backoff);
                backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * policy_.multiplier));
            }
        }
    }
}

ChatResponse ModelGateway::generate(std::string_view role, const ChatRequest& req) {
    req.validate();
    const auto& binding = binding_for(role);
    auto resp = with_retries(fmt::format("chat call for role '{}'", role), [&] {
        if (hook_) {
            hook_(role, CallKind::chat);
        }
        return binding.backend->complete(req, binding.model);
    });
    if (text::trim(resp.text).empty()) {
        throw ProtocolError(fmt::format("backend '{}' returned an empty completion", binding.backend->id()));
    }
    auto request_json = to_json(req);
    request_json["model"] = binding.model;
    transcript_.append({text::utc_timestamp(), std::string(role), CallKind::chat, std::move(request_json), to_json(resp)});
    return resp;
}

ChatResponse ModelGateway::generate(std::string_view role, std::string system, std::string user) {
    const auto& binding = binding_for(role);
    return generate(role, ChatRequest::from_prompt(std::move(system), std::move(user), binding.params));
}

Embedding ModelGateway::embed(std::string_view input) {
    if (text::trim(input).empty()) {
        throw ValidationError("cannot embed empty text");
    }
    if (!embedding_backend_) {
        throw ConfigError("no embedding backend configured");
    }
    auto vec = with_retries("embedding call", [&] {
        if (hook_) {
            hook_("embedding", CallKind::embed);
        }
        return embedding_backend_->embed(input, embedding_model_);
    });
    if (expected_dimension_ != 0 && vec.dimension() != expected_dimension_) {
        throw ConfigError(fmt::format("embedding dimension {} does not match configured dimension {}",
                                      vec.dimension(), expected_dimension_));
    }
    json values = std::vector<double>(vec.values().begin(), vec.values().end());
    transcript_.append({text::utc_timestamp(), "embedding", CallKind::embed,
                        {{"text", input}, {"model", embedding_model_}},
                        {{"dimension", vec.dimension()}, {"values", std::move(values)}}});
    return vec;
}

}  // namespace evolab::gateway
