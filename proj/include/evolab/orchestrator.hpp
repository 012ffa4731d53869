#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "evolab/config.hpp"
#include "evolab/evolution.hpp"
#include "evolab/experiment.hpp"
#include "evolab/ideas.hpp"
#include "evolab/memory.hpp"
#include "evolab/sandbox.hpp"
#include "evolab/tournament.hpp"

namespace evolab::orchestrator {

namespace fs = std::filesystem;

enum class Phase {
    created,
    literature_fetched,
    ideas_generated,
    ranked,
    proposal_ready,
    experiments_running,
    report_ready,
    evolved,
    failed,
};

/// Declared order; `failed` sits outside it.
inline constexpr std::array<Phase, 8> kPhaseOrder{Phase::created,         Phase::literature_fetched,
                                                   Phase::ideas_generated, Phase::ranked,
                                                   Phase::proposal_ready,  Phase::experiments_running,
                                                   Phase::report_ready,    Phase::evolved};

const char* to_string(Phase p);
Phase phase_from_string(std::string_view s);
/// Position in kPhaseOrder; throws ValidationError for `failed`.
std::size_t phase_index(Phase p);

/// File written when the phase completes, relative to the run directory.
const char* artifact_name(Phase p);

struct RunState {
    std::string run_id;
    ideas::UserGoal goal;
    /// Current phase: the last completed one, or `failed`.
    Phase phase = Phase::created;
    /// Never moves backwards, also while failed.
    Phase last_completed = Phase::created;
    std::optional<Phase> failed_at;
    std::string error;
    std::string error_category;
    std::map<std::string, std::string> artifact_paths;
    std::map<std::string, std::string> timestamps;
};

void to_json(nlohmann::json& j, const RunState& v);
void from_json(const nlohmann::json& j, RunState& v);

/// `<root>/state` for memory stores and `<root>/runs/<run-id>` per run.
struct Workspace {
    fs::path root = ".";

    fs::path state_dir() const { return root / "state"; }
    fs::path runs_dir() const { return root / "runs"; }
    fs::path run_dir(const std::string& run_id) const { return runs_dir() / run_id; }

    /// Throws NotFoundError("run not found: <id>").
    RunState load_state(const std::string& run_id) const;
    bool has_run(const std::string& run_id) const;
};

/// Sortable UTC timestamp plus six random hex digits, e.g. 20261018T093000Z-3fa9c1.
std::string new_run_id();

/// Externally owned collaborators, so tests can inject mocks and fake executors.
struct Services {
    gateway::ModelGateway& gateway;
    ideas::LiteratureProvider& literature;
    experiment::AttemptExecutor& executor;
};

class Pipeline {
public:
    Pipeline(Workspace workspace, config::RunConfig config, Services services);

    /// Creates runs/<id>/ and drives it to `evolved`. Module errors end in `failed` and are not
    /// rethrown; anything else propagates with the state left at the last completed phase.
    RunState start(const ideas::UserGoal& goal, std::optional<std::string> run_id = std::nullopt);

    /// Continues after the last completed phase, reloading earlier artifacts from disk. An evolved
    /// run is returned unchanged. Throws ConsistencyError when a completed phase lost its artifact.
    RunState resume(const std::string& run_id);

    const config::RunConfig& config() const noexcept { return config_; }

private:
    struct Context;

    RunState drive(RunState state);
    void run_phase(Phase phase, Context& ctx);
    void load_artifact(Phase phase, Context& ctx);
    void persist(const RunState& state) const;
    void log_event(const std::string& run_id, nlohmann::json event) const;

    Workspace workspace_;
    config::RunConfig config_;
    Services services_;
};

}  // namespace evolab::orchestrator
