#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evolab/gateway.hpp"
#include "evolab/memory.hpp"
#include "evolab/sandbox.hpp"
#include "evolab/tournament.hpp"

namespace evolab::experiment {

enum class StageName { initial_implementation, hyperparameter_tuning, proposed_method, ablation };

const char* to_string(StageName s);

struct Stage {
    int index = 1;
    StageName name = StageName::initial_implementation;
    int budget = 20;
};

inline constexpr std::array<int, 4> kDefaultStageBudgets{20, 12, 12, 18};

std::vector<Stage> make_stages(const std::array<int, 4>& budgets = kDefaultStageBudgets);

/// Successes after which a stage stops: 1 for stages 1 and 2, 3 for stages 3 and 4.
int success_target(const Stage& stage);

struct StageHistory {
    Stage stage;
    std::vector<std::pair<CodeAttempt, ExecutionRecord>> records;
    std::optional<std::string> best_attempt_id;

    const std::pair<CodeAttempt, ExecutionRecord>* find(std::string_view attempt_id) const;
};

enum class Direction { maximize, minimize };

const char* to_string(Direction d);
Direction direction_from_string(std::string_view s);

struct Objective {
    std::string metric = "accuracy";
    Direction direction = Direction::maximize;
};

void to_json(nlohmann::json& j, const Stage& v);
void from_json(const nlohmann::json& j, Stage& v);
void to_json(nlohmann::json& j, const StageHistory& v);
void from_json(const nlohmann::json& j, StageHistory& v);

/// Best successful record on the objective; ties go to the lower attempt index. Successful
/// records without the metric are skipped with a warning.
std::optional<std::string> select_best(const StageHistory& history, const std::string& metric, Direction direction);

/// Exit status plus the last 40 stderr lines.
std::string diagnose(const ExecutionRecord& record);

/// One line per attempt: index, status, exit code, metrics, last stderr line.
std::string trajectory_digest(const StageHistory& history);

/// `FILE: <path>` followed by a fenced block, repeated. Without FILE markers the first fenced block
/// becomes `entry_file`. Throws ValidationError on an unsafe path; empty map when no code found.
std::map<std::string, std::string> parse_code_response(std::string_view response, const std::string& entry_file);

/// Stable id for a proposal, derived from its goal, source idea and content.
std::string proposal_id(const tournament::Proposal& proposal);

struct ExperimentOptions {
    std::vector<Stage> stages = make_stages();
    Objective objective;
    /// Attempts generated and executed together per round; 1 is a pure repair chain.
    std::size_t round_width = 1;
    std::size_t workers = 4;
    std::string entry_file = "main.py";
};

/// Four-stage experiment search over the "engineer" role. Every attempt is written to
/// `<run_dir>/stage<k>/attempt<j>/` and its record.json is durable before the next generation, so
/// re-running over the same directory reuses finished attempts without model calls.
class ExperimentEngine {
public:
    ExperimentEngine(gateway::ModelGateway& gateway, AttemptExecutor& executor, ExperimentOptions options,
                     std::filesystem::path run_dir);

    std::vector<StageHistory> run(const tournament::Proposal& proposal, const memory::RetrievedContext& context);

    StageHistory run_stage(const Stage& stage, const tournament::Proposal& proposal,
                           const memory::RetrievedContext& context, const CodeAttempt* base);

    std::string generation_prompt(const Stage& stage, const tournament::Proposal& proposal,
                                  const memory::RetrievedContext& context, const CodeAttempt* base,
                                  const std::pair<CodeAttempt, ExecutionRecord>* parent) const;

private:
    std::pair<CodeAttempt, ExecutionRecord> attempt(const Stage& stage, int index, const tournament::Proposal& proposal,
                                                    const memory::RetrievedContext& context, const CodeAttempt* base,
                                                    const std::pair<CodeAttempt, ExecutionRecord>* parent);

    gateway::ModelGateway& gateway_;
    AttemptExecutor& executor_;
    ExperimentOptions options_;
    std::filesystem::path run_dir_;
};

struct StageSummary {
    int stage = 1;
    std::string name;
    int attempts_used = 0;
    int successes = 0;
    std::optional<std::map<std::string, double>> best_metrics;
};

struct Comparison {
    std::string metric;
    Direction direction = Direction::maximize;
    std::string baseline_attempt_id;
    std::string proposed_attempt_id;
    std::map<std::string, double> baseline_metrics;
    std::map<std::string, double> proposed_metrics;

    /// Markdown table of every metric present on either side.
    std::string render() const;
};

struct ExecutionReport {
    std::string proposal_id;
    std::vector<StageSummary> stages;
    std::string narrative;
    bool any_executable_found = false;
    std::optional<Comparison> proposed_vs_baseline;

    /// Plain-text numeric summary, also the input of the narrative call.
    std::string numeric_summary() const;
};

void to_json(nlohmann::json& j, const StageSummary& v);
void from_json(const nlohmann::json& j, StageSummary& v);
void to_json(nlohmann::json& j, const Comparison& v);
void from_json(const nlohmann::json& j, Comparison& v);
void to_json(nlohmann::json& j, const ExecutionReport& v);
void from_json(const nlohmann::json& j, ExecutionReport& v);

/// Numeric part only: counts, best metrics, baseline (best of stage 2, else 1) against the
/// proposed method (best of stage 3).
ExecutionReport build_report(const tournament::Proposal& proposal, const std::vector<StageHistory>& histories,
                             const Objective& objective);

/// build_report plus one narrative call; a failed call leaves the narrative empty.
ExecutionReport summarize_execution(gateway::ModelGateway& gateway, const tournament::Proposal& proposal,
                                    const std::vector<StageHistory>& histories, const Objective& objective);

}  // namespace evolab::experiment
