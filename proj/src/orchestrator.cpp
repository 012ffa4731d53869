#include "evolab/orchestrator.hpp"

#include <chrono>
#include <ctime>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/text.hpp"

namespace evolab::orchestrator {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 9> kPhaseNames{"created",        "literature-fetched", "ideas-generated",
                                                 "ranked",         "proposal-ready",     "experiments-running",
                                                 "report-ready",   "evolved",            "failed"};

const char* module_for(Phase p) {
    switch (p) {
        case Phase::literature_fetched:
        case Phase::ideas_generated:
            return "idea-search";
        case Phase::ranked:
        case Phase::proposal_ready:
            return "tournament";
        case Phase::experiments_running:
        case Phase::report_ready:
            return "experiment-engine";
        case Phase::evolved:
            return "evolution-manager";
        default:
            return "orchestrator-cli";
    }
}

fs::path require(const fs::path& run_dir, Phase phase) {
    const auto path = run_dir / artifact_name(phase);
    if (!fs::exists(path)) {
        throw ConsistencyError(fmt::format("phase {} is marked complete but its artifact {} is missing",
                                           to_string(phase), path.string()),
                               to_string(phase));
    }
    return path;
}

}  // namespace

const char* to_string(Phase p) { return kPhaseNames[static_cast<std::size_t>(p)]; }

Phase phase_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kPhaseNames.size(); ++i) {
        if (s == kPhaseNames[i]) {
            return static_cast<Phase>(i);
        }
    }
    throw ParseError(fmt::format("unknown phase '{}'", s));
}

std::size_t phase_index(Phase p) {
    if (p == Phase::failed) {
        throw ValidationError("failed has no position in the phase order");
    }
    return static_cast<std::size_t>(p);
}

const char* artifact_name(Phase p) {
    switch (p) {
        case Phase::created:
            return "config.json";
        case Phase::literature_fetched:
            return "literature.json";
        case Phase::ideas_generated:
            return "ideas.json";
        case Phase::ranked:
            return "tournament.json";
        case Phase::proposal_ready:
            return "proposal.json";
        case Phase::experiments_running:
            return "experiment_context.json";
        case Phase::report_ready:
            return "report.json";
        case Phase::evolved:
            return "evolution.json";
        case Phase::failed:
            break;
    }
    throw ValidationError("failed has no artifact");
}

void to_json(json& j, const RunState& v) {
    j = {{"run_id", v.run_id},
         {"goal", v.goal},
         {"phase", to_string(v.phase)},
         {"last_completed", to_string(v.last_completed)},
         {"failed_at", v.failed_at ? json(to_string(*v.failed_at)) : json(nullptr)},
         {"error", v.error},
         {"error_category", v.error_category},
         {"artifact_paths", v.artifact_paths},
         {"timestamps", v.timestamps}};
}

void from_json(const json& j, RunState& v) {
    try {
        v.run_id = j.at("run_id").get<std::string>();
        v.goal = j.at("goal").get<ideas::UserGoal>();
        v.phase = phase_from_string(j.at("phase").get<std::string>());
        v.last_completed = phase_from_string(j.at("last_completed").get<std::string>());
        v.failed_at.reset();
        if (j.contains("failed_at") && !j["failed_at"].is_null()) {
            v.failed_at = phase_from_string(j["failed_at"].get<std::string>());
        }
        v.error = j.value("error", std::string{});
        v.error_category = j.value("error_category", std::string{});
        v.artifact_paths = j.value("artifact_paths", std::map<std::string, std::string>{});
        v.timestamps = j.value("timestamps", std::map<std::string, std::string>{});
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("invalid run state: {}", e.what()));
    }
}

bool Workspace::has_run(const std::string& run_id) const {
    return !run_id.empty() && fs::exists(run_dir(run_id) / "state.json");
}

RunState Workspace::load_state(const std::string& run_id) const {
    if (!has_run(run_id)) {
        throw NotFoundError(fmt::format("run not found: {}", run_id));
    }
    return fsio::read_json(run_dir(run_id) / "state.json").get<RunState>();
}

std::string new_run_id() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::random_device rd;
    return fmt::format("{:04}{:02}{:02}T{:02}{:02}{:02}Z-{:06x}", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                       tm.tm_hour, tm.tm_min, tm.tm_sec, rd() & 0xffffffu);
}

struct Pipeline::Context {
    Context(RunState& s, fs::path dir, memory::MemoryBank b) : state(s), run_dir(std::move(dir)), bank(std::move(b)) {}

    RunState& state;
    fs::path run_dir;
    memory::MemoryBank bank;

    std::vector<ideas::LiteratureDoc> docs;
    memory::RetrievedContext ideation_context;
    ideas::IdeaTree tree;
    std::vector<std::string> top;
    tournament::Proposal proposal;
    memory::RetrievedContext experiment_context;
    std::vector<experiment::StageHistory> histories;
    experiment::ExecutionReport report;
};

Pipeline::Pipeline(Workspace workspace, config::RunConfig config, Services services)
    : workspace_(std::move(workspace)), config_(config.effective()), services_(services) {
    config_.validate();
}

RunState Pipeline::start(const ideas::UserGoal& goal, std::optional<std::string> run_id) {
    RunState state;
    state.run_id = run_id ? *run_id : new_run_id();
    if (state.run_id.empty() || state.run_id.find('/') != std::string::npos || state.run_id.starts_with('.')) {
        throw ValidationError(fmt::format("invalid run id '{}'", state.run_id));
    }
    if (workspace_.has_run(state.run_id)) {
        throw ValidationError(fmt::format("run {} already exists", state.run_id));
    }
    state.goal = goal;
    const auto dir = workspace_.run_dir(state.run_id);
    fs::create_directories(dir);
    fs::create_directories(workspace_.state_dir());

    log_event(state.run_id, {{"event", "phase-start"}, {"phase", "created"}, {"module", module_for(Phase::created)}});
    fsio::write_json(dir / artifact_name(Phase::created), config::to_json(config_));
    state.phase = Phase::created;
    state.last_completed = Phase::created;
    state.artifact_paths["created"] = artifact_name(Phase::created);
    state.timestamps["created"] = text::utc_timestamp();
    persist(state);
    log_event(state.run_id,
              {{"event", "phase-complete"}, {"phase", "created"}, {"module", module_for(Phase::created)}, {"duration_ms", 0}});
    return drive(std::move(state));
}

RunState Pipeline::resume(const std::string& run_id) {
    auto state = workspace_.load_state(run_id);
    if (state.phase == Phase::evolved) {
        for (const auto phase : kPhaseOrder) {
            require(workspace_.run_dir(run_id), phase);
        }
        return state;
    }
    return drive(std::move(state));
}

RunState Pipeline::drive(RunState state) {
    const auto dir = workspace_.run_dir(state.run_id);
    fs::create_directories(workspace_.state_dir());
    services_.gateway.transcript().set_sink(dir / "transcript.jsonl");

    Context ctx(state, dir, memory::MemoryBank(workspace_.state_dir(), services_.gateway));
    const auto done = phase_index(state.last_completed);
    for (std::size_t i = 0; i <= done; ++i) {
        load_artifact(kPhaseOrder[i], ctx);
    }

    log_event(state.run_id, {{"event", "config"},
                             {"k_i", config_.k_i},
                             {"k_e", config_.k_e},
                             {"n_i", config_.n_i},
                             {"stage_budgets", config_.stage_budgets},
                             {"idea_workers", config_.idea_workers},
                             {"experiment_workers", config_.experiment_workers},
                             {"tournament_workers", config_.tournament_workers},
                             {"round_width", config_.round_width},
                             {"top_k", config_.top_k},
                             {"objective", {{"metric", config_.objective.metric},
                                            {"direction", experiment::to_string(config_.objective.direction)}}},
                             {"deterministic", config_.deterministic},
                             {"resumed_after", to_string(state.last_completed)}});

    for (std::size_t i = done + 1; i < kPhaseOrder.size(); ++i) {
        const Phase phase = kPhaseOrder[i];
        log_event(state.run_id, {{"event", "phase-start"}, {"phase", to_string(phase)}, {"module", module_for(phase)}});
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run_phase(phase, ctx);
        } catch (const Error& e) {
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
            state.phase = Phase::failed;
            state.failed_at = phase;
            state.error = e.what();
            state.error_category = evolab::to_string(e.category());
            persist(state);
            log_event(state.run_id, {{"event", "phase-failed"},
                                     {"phase", to_string(phase)},
                                     {"module", module_for(phase)},
                                     {"duration_ms", ms.count()},
                                     {"category", state.error_category},
                                     {"error", state.error}});
            spdlog::error("run {} failed at {}: {}", state.run_id, to_string(phase), state.error);
            return state;
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
        state.phase = phase;
        state.last_completed = phase;
        state.failed_at.reset();
        state.error.clear();
        state.error_category.clear();
        state.artifact_paths[to_string(phase)] = artifact_name(phase);
        state.timestamps[to_string(phase)] = text::utc_timestamp();
        persist(state);
        log_event(state.run_id, {{"event", "phase-complete"},
                                 {"phase", to_string(phase)},
                                 {"module", module_for(phase)},
                                 {"duration_ms", ms.count()}});
    }
    return state;
}

void Pipeline::run_phase(Phase phase, Context& ctx) {
    auto& gw = services_.gateway;
    const auto& goal = ctx.state.goal;
    const auto path = ctx.run_dir / artifact_name(phase);

    switch (phase) {
        case Phase::literature_fetched: {
            ctx.ideation_context = ctx.bank.retrieve(memory::StoreName::ideation, goal.text, config_.k_i);
            ctx.docs = ideas::fetch_literature(services_.literature, goal, config_.literature.limit);
            fsio::write_json(path, {{"docs", ctx.docs}, {"ideation_context", memory::to_json(ctx.ideation_context)}});
            break;
        }
        case Phase::ideas_generated: {
            ideas::IdeaSearchOptions opts;
            opts.budget = config_.n_i;
            opts.shape = config_.tree;
            opts.workers = config_.idea_workers;
            opts.digest_limit = config_.literature.limit;
            opts.max_goal_chars = config_.max_goal_chars;
            try {
                ctx.tree = ideas::IdeaTreeSearch(gw, opts).run(goal, ctx.docs, ctx.ideation_context);
            } catch (const ideas::SearchError& e) {
                fsio::write_json(ctx.run_dir / "ideas.partial.json", e.partial_tree());
                throw;
            }
            fsio::write_json(path, ctx.tree);
            break;
        }
        case Phase::ranked: {
            const auto pairs = ctx.tree.reviewed_pairs();
            tournament::TournamentResult result;
            if (pairs.size() == 1) {
                result.ratings.push_back({pairs.front().first.id, 1500.0, 0});
            } else {
                tournament::TournamentOptions opts;
                opts.workers = config_.tournament_workers;
                result = tournament::run_tournament(gw, goal, pairs, opts);
            }
            ctx.top = tournament::select_top(result.ratings, std::min(config_.top_k, result.ratings.size()));
            json j = result;
            j["top"] = ctx.top;
            fsio::write_json(path, j);
            break;
        }
        case Phase::proposal_ready: {
            const auto* node = ctx.tree.find(ctx.top.front());
            if (node == nullptr) {
                throw ConsistencyError(fmt::format("top idea {} is not in the idea tree", ctx.top.front()), "ranked");
            }
            ctx.proposal = tournament::extend_to_proposal(gw, goal, node->idea, ctx.docs);
            fsio::write_json(path, {{"proposal", ctx.proposal}, {"proposal_id", experiment::proposal_id(ctx.proposal)}});
            break;
        }
        case Phase::experiments_running: {
            const auto query = ctx.proposal.method + "\n" + ctx.proposal.experimental_plan;
            ctx.experiment_context = ctx.bank.retrieve(memory::StoreName::experimentation, query, config_.k_e);
            fsio::write_json(path, memory::to_json(ctx.experiment_context));
            break;
        }
        case Phase::report_ready: {
            experiment::ExperimentOptions opts;
            opts.stages = experiment::make_stages(config_.stage_budgets);
            opts.objective = config_.objective;
            opts.round_width = config_.round_width;
            opts.workers = config_.experiment_workers;
            opts.entry_file = config_.sandbox.entry_file;
            experiment::ExperimentEngine engine(gw, services_.executor, opts, ctx.run_dir);
            ctx.histories = engine.run(ctx.proposal, ctx.experiment_context);
            ctx.report = experiment::summarize_execution(gw, ctx.proposal, ctx.histories, config_.objective);
            fsio::write_json(path, {{"report", ctx.report}, {"histories", ctx.histories}});
            break;
        }
        case Phase::evolved: {
            std::vector<ideas::Idea> top;
            for (const auto& id : ctx.top) {
                if (top.size() == 3) {
                    break;
                }
                if (const auto* node = ctx.tree.find(id)) {
                    top.push_back(node->idea);
                }
            }
            const auto& run_id = ctx.state.run_id;
            const auto findings_path = ctx.run_dir / "evolution_findings.json";
            json findings;
            if (fs::exists(findings_path)) {
                findings = fsio::read_json(findings_path);
            } else {
                auto ide = evolution::idea_direction_evolution(gw, goal, top, run_id);
                auto [verdict, ive] = evolution::idea_validation_evolution(gw, goal, ctx.proposal, ctx.report, run_id);
                auto ese = evolution::experiment_strategy_evolution(gw, ctx.proposal, ctx.histories, run_id);
                findings["findings"] = json::array();
                findings["findings"].push_back(ide);
                findings["findings"].push_back(ive);
                findings["findings"].push_back(ese);
                findings["verdict"] = verdict;
                fsio::write_json(findings_path, findings);
            }

            // Routed payloads per store; duplicates are dropped by the store itself.
            evolution::AppliedCounts applied;
            for (const auto& f : findings.at("findings").get<std::vector<evolution::EvolutionFinding>>()) {
                evolution::apply(ctx.bank, f);
                for (const auto& p : f.payloads) {
                    ++(memory::store_for(p.kind) == memory::StoreName::ideation ? applied.ideation : applied.experimentation);
                }
            }
            findings["applied"] = applied;
            fsio::write_json(path, findings);
            break;
        }
        case Phase::created:
        case Phase::failed:
            break;
    }
}

void Pipeline::load_artifact(Phase phase, Context& ctx) {
    if (phase == Phase::evolved) {
        return;
    }
    const auto path = require(ctx.run_dir, phase);
    try {
        const auto j = fsio::read_json(path);
        switch (phase) {
            case Phase::literature_fetched:
                ctx.docs = j.at("docs").get<std::vector<ideas::LiteratureDoc>>();
                ctx.ideation_context = memory::retrieved_context_from_json(j.at("ideation_context"));
                break;
            case Phase::ideas_generated:
                ctx.tree = j.get<ideas::IdeaTree>();
                break;
            case Phase::ranked:
                ctx.top = j.at("top").get<std::vector<std::string>>();
                if (ctx.top.empty()) {
                    throw ConsistencyError("tournament artifact has no top ideas", to_string(phase));
                }
                break;
            case Phase::proposal_ready:
                ctx.proposal = j.at("proposal").get<tournament::Proposal>();
                break;
            case Phase::experiments_running:
                ctx.experiment_context = memory::retrieved_context_from_json(j);
                break;
            case Phase::report_ready:
                ctx.report = j.at("report").get<experiment::ExecutionReport>();
                ctx.histories = j.at("histories").get<std::vector<experiment::StageHistory>>();
                break;
            default:
                break;
        }
    } catch (const json::exception& e) {
        throw ConsistencyError(
            fmt::format("artifact {} of phase {} is unreadable: {}", path.string(), to_string(phase), e.what()),
            to_string(phase));
    } catch (const ParseError& e) {
        throw ConsistencyError(
            fmt::format("artifact {} of phase {} is unreadable: {}", path.string(), to_string(phase), e.what()),
            to_string(phase));
    }
}

void Pipeline::persist(const RunState& state) const {
    fsio::write_json(workspace_.run_dir(state.run_id) / "state.json", state);
}

void Pipeline::log_event(const std::string& run_id, json event) const {
    event["timestamp"] = text::utc_timestamp();
    event["run_id"] = run_id;
    fsio::append_line(workspace_.run_dir(run_id) / "events.jsonl", event.dump());
}

}  // namespace evolab::orchestrator
