#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace evolab::experiment {

namespace fs = std::filesystem;

struct CodeAttempt {
    std::string id;
    int stage_index = 1;
    int attempt_index = 1;
    std::map<std::string, std::string> source_files;
    std::optional<std::string> parent_attempt_id;
    std::optional<std::string> diagnosis_applied;
};

enum class Status { success, runtime_failure, timeout, setup_failure };

const char* to_string(Status s);
Status status_from_string(std::string_view s);

struct ExecutionRecord {
    std::string attempt_id;
    Status status = Status::setup_failure;
    int exit_code = -1;
    std::string stdout_log;
    std::string stderr_log;
    std::map<std::string, double> metrics;
    double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const CodeAttempt& v);
void from_json(const nlohmann::json& j, CodeAttempt& v);
void to_json(nlohmann::json& j, const ExecutionRecord& v);
void from_json(const nlohmann::json& j, ExecutionRecord& v);

/// `METRIC <name>=<real>` lines. Malformed METRIC lines and non-finite values are ignored; a
/// repeated name keeps the last value.
std::map<std::string, double> parse_metrics(std::string_view stdout_text);

struct ExecutionLimits {
    double wall_time_s = 600.0;
    std::size_t max_log_bytes = 1 << 20;
};

struct SandboxConfig {
    ExecutionLimits limits;
    std::string entry_file = "main.py";
    /// Command prefix per file extension; files with other extensions are executed directly.
    std::map<std::string, std::vector<std::string>> interpreters{{".py", {"python3", "-u"}}, {".sh", {"sh"}}};
};

/// Runs one attempt inside `workdir`, which the executor creates fresh.
class AttemptExecutor {
public:
    virtual ~AttemptExecutor() = default;
    virtual ExecutionRecord execute(const CodeAttempt& attempt, const fs::path& workdir) = 0;
};

/// Fresh directory plus a subprocess in its own process group, killed as a group on timeout.
/// Output beyond max_log_bytes keeps the most recent bytes behind a truncation marker.
class SubprocessSandbox : public AttemptExecutor {
public:
    explicit SubprocessSandbox(SandboxConfig config = {});

    ExecutionRecord execute(const CodeAttempt& attempt, const fs::path& workdir) override;

    const SandboxConfig& config() const noexcept { return config_; }

private:
    SandboxConfig config_;
};

/// Relative, no `..`, not one of the log/record names the engine writes.
bool is_safe_source_path(std::string_view path);

}  // namespace evolab::experiment
