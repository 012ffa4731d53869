#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace evolab::gateway {

enum class Role { system, user, assistant };

const char* to_string(Role role);
Role role_from_string(std::string_view s);

struct Message {
    Role role = Role::user;
    std::string text;
};

struct GenerationParams {
    double temperature = 0.7;
    int max_output_tokens = 4096;
    std::optional<std::int64_t> seed;
};

struct ChatRequest {
    std::vector<Message> messages;
    GenerationParams params;

    static ChatRequest from_prompt(std::string system, std::string user, GenerationParams params = {});

    /// Throws ValidationError: empty message list, leading assistant message, bad params.
    void validate() const;

    /// Message texts joined by blank lines; this is what mock matchers see.
    std::string concatenated_text() const;
};

struct Usage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

struct ChatResponse {
    std::string text;
    Usage usage;
    std::string backend_id;
};

class Embedding {
public:
    Embedding() = default;
    /// Throws ValidationError on an empty or non-finite vector.
    explicit Embedding(std::vector<double> values);

    std::size_t dimension() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    std::vector<double> release() && { return std::move(values_); }

private:
    std::vector<double> values_;
};

nlohmann::json to_json(const ChatRequest& req);
ChatRequest chat_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ChatResponse& resp);

/// A backend failed in a way worth retrying (connection refused, timeout, 5xx).
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Backend {
public:
    virtual ~Backend() = default;

    virtual ChatResponse complete(const ChatRequest& req, std::string_view model) = 0;
    virtual Embedding embed(std::string_view text, std::string_view model) = 0;
    virtual std::string id() const = 0;
};

/// Deterministic stand-in for a model backend.
///
/// Rules are tried in order against the request's concatenated text; the first match answers.
/// A rule holds a response sequence: its n-th use returns responses[min(n, size-1)]. With
/// `scope = request` the use counter is kept per distinct request text instead of per rule, which
/// keeps answers independent of call interleaving across workers.
///
/// Responses may contain `{{hash}}` (short hash of the request text) and `{{n}}` (1-based use
/// count). The literal responses `<<transport-error>>` and `<<protocol-error>>` raise the
/// corresponding failure instead of answering.
///
/// Embeddings are a seeded hash of the word tokens in the text: every token expands to a fixed
/// pseudo-random vector, the token vectors are summed and the sum is scaled to unit length.
/// Texts that share words therefore score higher under cosine similarity.
class ScriptedMock : public Backend {
public:
    enum class MatchKind { substring, regex, exact };
    enum class Scope { rule, request };

    struct Rule {
        MatchKind kind = MatchKind::substring;
        std::string pattern;
        std::vector<std::string> responses;
        Scope scope = Scope::rule;
    };

    static constexpr std::string_view kTransportErrorDirective = "<<transport-error>>";
    static constexpr std::string_view kProtocolErrorDirective = "<<protocol-error>>";

    explicit ScriptedMock(std::vector<Rule> rules = {}, std::string default_response = "OK",
                          std::size_t embedding_dimension = 256, std::uint64_t seed = 0);

    static ScriptedMock from_json(const nlohmann::json& program);
    static ScriptedMock from_file(const std::filesystem::path& path);
    /// Exact-match rules that replay every recorded chat exchange in order.
    static ScriptedMock from_transcript(const std::filesystem::path& transcript_path);

    ScriptedMock(const ScriptedMock& other);

    void add_rule(Rule rule);

    ChatResponse complete(const ChatRequest& req, std::string_view model) override;
    Embedding embed(std::string_view text, std::string_view model) override;
    std::string id() const override { return "mock"; }

    std::vector<ChatRequest> call_log() const;
    std::size_t call_count() const;
    std::size_t embedding_dimension() const noexcept { return embedding_dimension_; }

private:
    std::string render(const std::string& response, const std::string& request_text, std::size_t use) const;

    std::vector<Rule> rules_;
    std::string default_response_;
    std::size_t embedding_dimension_;
    std::uint64_t seed_;

    mutable std::mutex mu_;
    std::vector<ChatRequest> call_log_;
    std::vector<std::size_t> rule_uses_;
    std::map<std::pair<std::size_t, std::string>, std::size_t> request_uses_;
};

struct HttpBackendConfig {
    std::string id = "http";
    /// OpenAI-compatible chat completions endpoint.
    std::string chat_url;
    /// OpenAI `/v1/embeddings` or Ollama `/api/embed` / `/api/embeddings`.
    std::string embedding_url;
    std::map<std::string, std::string> headers;
    /// Name of the environment variable holding a bearer token; empty for none.
    std::string api_key_env;
    int timeout_seconds = 120;
};

class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    ChatResponse complete(const ChatRequest& req, std::string_view model) override;
    Embedding embed(std::string_view text, std::string_view model) override;
    std::string id() const override { return config_.id; }

private:
    nlohmann::json post(const std::string& url, const nlohmann::json& body) const;

    HttpBackendConfig config_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    double multiplier = 2.0;
};

enum class CallKind { chat, embed };

struct TranscriptEntry {
    std::string timestamp;
    std::string caller_role;
    CallKind kind = CallKind::chat;
    nlohmann::json request;
    nlohmann::json response;
};

nlohmann::json to_json(const TranscriptEntry& e);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& j);

/// Append-only record of successful calls, optionally mirrored to a JSON Lines file.
class Transcript {
public:
    Transcript() = default;
    Transcript(Transcript&& other) noexcept;
    Transcript& operator=(Transcript&& other) noexcept;

    void set_sink(std::filesystem::path path);
    void append(TranscriptEntry entry);

    std::vector<TranscriptEntry> entries() const;
    std::size_t size() const;

    static std::vector<TranscriptEntry> load(const std::filesystem::path& path);

private:
    mutable std::mutex mu_;
    std::vector<TranscriptEntry> entries_;
    std::optional<std::filesystem::path> sink_;
};

struct RoleBinding {
    std::shared_ptr<Backend> backend;
    std::string model;
    GenerationParams params;
};

/// Every chat and embedding request in the system goes through here. Roles name the calling agent
/// function ("researcher", "judge", "engineer", ...); unbound roles fall back to "default".
class ModelGateway {
public:
    using CallHook = std::function<void(std::string_view role, CallKind kind)>;

    explicit ModelGateway(RetryPolicy policy = {});

    void bind(std::string role, RoleBinding binding);
    void bind_embedding(std::shared_ptr<Backend> backend, std::string model, std::size_t expected_dimension = 0);

    ChatResponse generate(std::string_view role, const ChatRequest& req);
    /// Builds the request from the role's bound generation params.
    ChatResponse generate(std::string_view role, std::string system, std::string user);
    Embedding embed(std::string_view text);

    std::size_t expected_dimension() const noexcept { return expected_dimension_; }
    const RetryPolicy& retry_policy() const noexcept { return policy_; }

    Transcript& transcript() noexcept { return transcript_; }
    const Transcript& transcript() const noexcept { return transcript_; }

    /// Invoked before every backend attempt. Lets tests simulate a crash at an exact call.
    void set_call_hook(CallHook hook) { hook_ = std::move(hook); }

private:
    const RoleBinding& binding_for(std::string_view role) const;

    template <typename Fn>
    auto with_retries(std::string_view what, Fn&& fn) -> decltype(fn());

    RetryPolicy policy_;
    std::map<std::string, RoleBinding, std::less<>> roles_;
    std::shared_ptr<Backend> embedding_backend_;
    std::string embedding_model_;
    std::size_t expected_dimension_ = 0;
    Transcript transcript_;
    CallHook hook_;
};

}  // namespace evolab::gateway
