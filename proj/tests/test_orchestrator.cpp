#include <doctest.h>

#include <algorithm>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/orchestrator.hpp"
#include "evolab/prompts.hpp"
#include "evolab/text.hpp"
#include "pipeline_harness.hpp"
#include "test_support.hpp"

using namespace evolab;
using namespace evolab::orchestrator;
using evolab::testing::fixture;
using evolab::testing::Harness;
using evolab::testing::mock_config;
using evolab::testing::TempDir;
using nlohmann::json;

namespace {

struct SimulatedCrash {};

const ideas::UserGoal kGoalA = ideas::UserGoal::from_text(
    "Improve robustness of contrastive text classifiers when a fraction of training labels is noisy");
const ideas::UserGoal kGoalA2 = ideas::UserGoal::from_text(
    "Make contrastive text classification robust when some of the training labels are noisy");

std::vector<std::string> chat_prompts(const gateway::ModelGateway& gw, std::string_view tag) {
    std::vector<std::string> out;
    for (const auto& e : gw.transcript().entries()) {
        if (e.kind == gateway::CallKind::chat) {
            const auto text = e.request.dump();
            if (text.find(tag) != std::string::npos) {
                out.push_back(text);
            }
        }
    }
    return out;
}

Phase persisted_phase(const fs::path& run_dir) {
    return fsio::read_json(run_dir / "state.json").get<RunState>().last_completed;
}

}  // namespace

TEST_CASE("full mock run reaches evolved with every artifact") {
    TempDir ws;
    Harness h(mock_config());
    auto state = h.pipeline(ws.path()).start(kGoalA, "run-a");

    CHECK(state.phase == Phase::evolved);
    CHECK_FALSE(state.failed_at.has_value());
    const auto dir = ws.path() / "runs" / "run-a";
    for (const char* f : {"state.json", "events.jsonl", "literature.json", "ideas.json", "tournament.json",
                          "proposal.json", "report.json", "evolution.json"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    for (const auto phase : kPhaseOrder) {
        CHECK(state.artifact_paths.at(to_string(phase)) == artifact_name(phase));
        CHECK(state.timestamps.contains(to_string(phase)));
    }
    CHECK(fs::exists(dir / "stage1" / "attempt1" / "record.json"));
    CHECK(fsio::read_json(dir / "ideas.json").at("nodes").size() == 21);
    CHECK(fsio::read_json(dir / "tournament.json").at("matches").size() == 210);
    CHECK(fsio::read_json(dir / "tournament.json").at("top").size() == 3);

    const auto report = fsio::read_json(dir / "report.json").at("report").get<experiment::ExecutionReport>();
    CHECK(report.any_executable_found);
    REQUIRE(report.stages.size() == 4);
    CHECK(report.stages[0].attempts_used == 1);
    CHECK(report.stages[2].successes == 3);

    auto ide = memory::MemoryStore::load(memory::StoreName::ideation, ws.path() / "state" / "ideation_memory.jsonl");
    auto ee = memory::MemoryStore::load(memory::StoreName::experimentation,
                                        ws.path() / "state" / "experimentation_memory.jsonl");
    CHECK(ide.size() >= 1);
    CHECK(ee.size() == 2);
    CHECK(fs::exists(dir / "transcript.jsonl"));
}

TEST_CASE("events log phases with modules and the effective config") {
    TempDir ws;
    auto cfg = mock_config();
    cfg.stage_budgets = {3, 2, 4, 5};
    cfg.idea_workers = 2;
    Harness h(cfg);
    h.pipeline(ws.path()).start(kGoalA, "run-e");

    std::vector<json> events;
    for (const auto& line : text::split_lines(fsio::read_file(ws.path() / "runs" / "run-e" / "events.jsonl"))) {
        if (!line.empty()) {
            events.push_back(json::parse(line));
        }
    }
    const auto cfg_event = std::find_if(events.begin(), events.end(), [](const json& e) { return e["event"] == "config"; });
    REQUIRE(cfg_event != events.end());
    CHECK((*cfg_event)["stage_budgets"] == json({3, 2, 4, 5}));
    CHECK((*cfg_event)["idea_workers"] == 2);
    CHECK((*cfg_event)["experiment_workers"] == 4);
    CHECK((*cfg_event)["n_i"] == 21);

    std::vector<std::string> completed;
    for (const auto& e : events) {
        if (e["event"] == "phase-complete") {
            completed.push_back(e["phase"]);
            CHECK(e.contains("module"));
            CHECK(e.contains("duration_ms"));
        }
    }
    std::vector<std::string> expected;
    for (const auto p : kPhaseOrder) {
        expected.emplace_back(to_string(p));
    }
    CHECK(completed == expected);
}

TEST_CASE("permanent proposal failure stops at proposal-ready with earlier artifacts intact") {
    TempDir ws;
    const auto program = testing::write_program_with(
        ws.path(), json::array({{{"match", std::string(prompts::kProposalExtend)}, {"response", "no sections here"}}}));
    Harness h(mock_config(program));
    auto state = h.pipeline(ws.path() / "w").start(kGoalA, "run-f");

    CHECK(state.phase == Phase::failed);
    REQUIRE(state.failed_at.has_value());
    CHECK(*state.failed_at == Phase::proposal_ready);
    CHECK(state.last_completed == Phase::ranked);
    CHECK(state.error_category == "format");
    const auto dir = ws.path() / "w" / "runs" / "run-f";
    for (const char* f : {"literature.json", "ideas.json", "tournament.json"}) {
        CHECK(fs::exists(dir / f));
    }
    CHECK_FALSE(fs::exists(dir / "proposal.json"));
    const auto persisted = fsio::read_json(dir / "state.json").get<RunState>();
    CHECK(persisted.phase == Phase::failed);
    CHECK(*persisted.failed_at == Phase::proposal_ready);
}

TEST_CASE("idea search with only refusals fails at ideas-generated and keeps the partial tree") {
    TempDir ws;
    const auto program = testing::write_program_with(
        ws.path(), json::array({{{"match", std::string(prompts::kIdeaPropose)}, {"response", "I cannot help"}}}));
    Harness h(mock_config(program));
    auto state = h.pipeline(ws.path() / "w").start(kGoalA, "run-s");
    CHECK(state.phase == Phase::failed);
    CHECK(*state.failed_at == Phase::ideas_generated);
    CHECK(state.error_category == "search");
    CHECK(fs::exists(ws.path() / "w" / "runs" / "run-s" / "ideas.partial.json"));
}

TEST_CASE("second run on a similar goal sees first-run memory in its idea prompts") {
    TempDir ws;
    Harness first(mock_config());
    first.pipeline(ws.path()).start(kGoalA, "run-a");
    const auto mi = memory::MemoryStore::load(memory::StoreName::ideation, ws.path() / "state" / "ideation_memory.jsonl");
    REQUIRE(mi.size() >= 1);

    Harness second(mock_config());
    auto state = second.pipeline(ws.path()).start(kGoalA2, "run-b");
    CHECK(state.phase == Phase::evolved);

    const auto lit = fsio::read_json(ws.path() / "runs" / "run-b" / "literature.json");
    const auto ctx = memory::retrieved_context_from_json(lit.at("ideation_context"));
    REQUIRE_FALSE(ctx.empty());
    for (const auto& item : ctx.items) {
        CHECK(item.item.provenance.run_id == "run-a");
    }

    const auto propose = chat_prompts(second.gw, prompts::kIdeaPropose);
    REQUIRE_FALSE(propose.empty());
    for (const auto& p : propose) {
        const bool found = std::any_of(ctx.items.begin(), ctx.items.end(), [&](const memory::ScoredItem& s) {
            return p.find(json(s.item.text).dump().substr(1, 40)) != std::string::npos;
        });
        CHECK(found);
    }

    const auto mi2 = memory::MemoryStore::load(memory::StoreName::ideation, ws.path() / "state" / "ideation_memory.jsonl");
    const auto me2 =
        memory::MemoryStore::load(memory::StoreName::experimentation, ws.path() / "state" / "experimentation_memory.jsonl");
    CHECK(mi2.size() > mi.size());
    CHECK(me2.size() == 4);
}

TEST_CASE("kill after ranked then resume makes proposal extension the first new call") {
    TempDir ws;
    const auto dir = ws.path() / "runs" / "run-k";
    {
        Harness h(mock_config());
        h.gw.set_call_hook([&](std::string_view, gateway::CallKind) {
            if (fs::exists(dir / "state.json") && persisted_phase(dir) == Phase::ranked) {
                throw SimulatedCrash{};
            }
        });
        auto pipeline = h.pipeline(ws.path());
        CHECK_THROWS_AS(pipeline.start(kGoalA, "run-k"), SimulatedCrash);
    }
    CHECK(persisted_phase(dir) == Phase::ranked);
    CHECK(fsio::read_json(dir / "state.json").at("phase") == "ranked");

    Harness h(mock_config());
    auto state = h.pipeline(ws.path()).resume("run-k");
    CHECK(state.phase == Phase::evolved);
    const auto entries = h.gw.transcript().entries();
    REQUIRE_FALSE(entries.empty());
    CHECK(entries.front().kind == gateway::CallKind::chat);
    CHECK(entries.front().request.dump().find(prompts::kProposalExtend) != std::string::npos);
    CHECK(chat_prompts(h.gw, prompts::kIdeaPropose).empty());
    CHECK(chat_prompts(h.gw, prompts::kPairwiseJudge).empty());
}

TEST_CASE("crash inside the experiment search resumes without re-running finished attempts") {
    TempDir ws;
    const auto dir = ws.path() / "runs" / "run-x";
    int engineer_calls = 0;
    {
        Harness h(mock_config());
        h.gw.set_call_hook([&](std::string_view role, gateway::CallKind) {
            if (role == "engineer" && ++engineer_calls == 4) {
                throw SimulatedCrash{};
            }
        });
        auto pipeline = h.pipeline(ws.path());
        CHECK_THROWS_AS(pipeline.start(kGoalA, "run-x"), SimulatedCrash);
    }
    CHECK(persisted_phase(dir) == Phase::experiments_running);

    Harness h(mock_config());
    CHECK(h.pipeline(ws.path()).resume("run-x").phase == Phase::evolved);
    // 8 attempts in total; three finished before the crash.
    CHECK(chat_prompts(h.gw, prompts::kCodeGenerate).size() == 5);
}

TEST_CASE("resume of an evolved run is a no-op") {
    TempDir ws;
    Harness h(mock_config());
    auto pipeline = h.pipeline(ws.path());
    auto done = pipeline.start(kGoalA, "run-n");
    const auto before = h.gw.transcript().size();
    const auto state_before = fsio::read_file(ws.path() / "runs" / "run-n" / "state.json");
    auto again = pipeline.resume("run-n");
    CHECK(again.phase == Phase::evolved);
    CHECK(h.gw.transcript().size() == before);
    CHECK(fsio::read_file(ws.path() / "runs" / "run-n" / "state.json") == state_before);
    CHECK(json(again) == json(done));
}

TEST_CASE("resume with a deleted tournament artifact names the phase") {
    TempDir ws;
    const auto dir = ws.path() / "runs" / "run-d";
    {
        Harness h(mock_config());
        h.gw.set_call_hook([&](std::string_view, gateway::CallKind) {
            if (fs::exists(dir / "state.json") && phase_index(persisted_phase(dir)) >= phase_index(Phase::proposal_ready)) {
                throw SimulatedCrash{};
            }
        });
        auto pipeline = h.pipeline(ws.path());
        CHECK_THROWS_AS(pipeline.start(kGoalA, "run-d"), SimulatedCrash);
    }
    fs::remove(dir / "tournament.json");
    Harness h(mock_config());
    try {
        h.pipeline(ws.path()).resume("run-d");
        FAIL("expected ConsistencyError");
    } catch (const ConsistencyError& e) {
        CHECK(e.phase() == "ranked");
        CHECK(std::string(e.what()).find("ranked") != std::string::npos);
    }
    CHECK(h.gw.transcript().size() == 0);
}

TEST_CASE("resume of an evolved run with a missing artifact is a consistency error") {
    TempDir ws;
    Harness h(mock_config());
    auto pipeline = h.pipeline(ws.path());
    pipeline.start(kGoalA, "run-m");
    fs::remove(ws.path() / "runs" / "run-m" / "tournament.json");
    CHECK_THROWS_AS(pipeline.resume("run-m"), ConsistencyError);
}

TEST_CASE("unknown run id is not found") {
    TempDir ws;
    Harness h(mock_config());
    try {
        h.pipeline(ws.path()).resume("nope");
        FAIL("expected NotFoundError");
    } catch (const NotFoundError& e) {
        CHECK(std::string(e.what()).find("run not found") != std::string::npos);
    }
}

TEST_CASE("deterministic runs produce identical artifact trees") {
    TempDir a;
    TempDir b;
    auto cfg = mock_config();
    cfg.deterministic = true;
    {
        Harness h(cfg);
        CHECK(h.pipeline(a.path()).start(kGoalA, "run-det").phase == Phase::evolved);
    }
    {
        Harness h(cfg);
        CHECK(h.pipeline(b.path()).start(kGoalA, "run-det").phase == Phase::evolved);
    }
    const auto ta = testing::canonical_tree(a.path());
    const auto tb = testing::canonical_tree(b.path());
    CHECK(ta.size() > 20);
    CHECK(testing::first_difference(ta, tb) == "");
}

TEST_CASE("run state json round-trip and phase order") {
    RunState s;
    s.run_id = "r1";
    s.goal = kGoalA;
    s.phase = Phase::failed;
    s.last_completed = Phase::ranked;
    s.failed_at = Phase::proposal_ready;
    s.error = "boom";
    s.error_category = "format";
    s.artifact_paths = {{"ranked", "tournament.json"}};
    s.timestamps = {{"ranked", "2026-01-01T00:00:00Z"}};
    const json j = s;
    CHECK(json(j.get<RunState>()) == j);
    for (std::size_t i = 0; i < kPhaseOrder.size(); ++i) {
        CHECK(phase_index(kPhaseOrder[i]) == i);
        CHECK(phase_from_string(to_string(kPhaseOrder[i])) == kPhaseOrder[i]);
    }
    CHECK_THROWS_AS(phase_index(Phase::failed), ValidationError);
    CHECK_THROWS_AS(phase_from_string("sleeping"), ParseError);
}

TEST_CASE("run ids are sortable timestamps with a random suffix") {
    const auto a = new_run_id();
    const auto b = new_run_id();
    CHECK(a.size() == std::string("20261018T093000Z-3fa9c1").size());
    CHECK(a[8] == 'T');
    CHECK(a[15] == 'Z');
    CHECK(a.substr(0, 15) <= b.substr(0, 15));
}

TEST_CASE("config defaults, overrides and strictness") {
    const auto d = config::RunConfig::defaults();
    CHECK(d.k_i == 2);
    CHECK(d.k_e == 1);
    CHECK(d.n_i == 21);
    CHECK(d.stage_budgets == std::array<int, 4>{20, 12, 12, 18});
    CHECK(d.idea_workers == 3);
    CHECK(d.experiment_workers == 4);
    CHECK(d.backends.at("engineer").model != d.backends.at("researcher").model);

    TempDir dir;
    auto cfg = config::from_json(json{{"n_i", 5}, {"objective", {{"metric", "loss"}, {"direction", "minimize"}}},
                                      {"literature", {{"provider", "fixture"}, {"fixture_path", "docs.json"}}},
                                      {"deterministic", true}},
                                 dir.path());
    CHECK(cfg.n_i == 5);
    CHECK(cfg.objective.direction == experiment::Direction::minimize);
    CHECK(fs::path(cfg.literature.fixture_path) == fs::absolute(dir.path() / "docs.json").lexically_normal());
    const auto eff = cfg.effective();
    CHECK(eff.idea_workers == 1);
    CHECK(eff.experiment_workers == 1);
    CHECK(eff.tournament_workers == 1);

    CHECK_THROWS_AS(config::from_json(json{{"n_I", 5}}), ConfigError);
    CHECK_THROWS_AS(config::from_json(json{{"tree", {{"width", 2}}}}), ConfigError);
    CHECK_THROWS_AS(config::from_json(json{{"k_i", 0}}), ValidationError);
    CHECK_THROWS_AS(config::from_json(json{{"stage_budgets", {20, 0, 12, 18}}}), ValidationError);
    CHECK_THROWS_AS(config::from_json(json{{"backends", {{"default", {{"type", "carrier-pigeon"}}}}}}), ConfigError);
    CHECK_THROWS_AS(config::load(dir.path() / "missing.json"), ConfigError);

    const auto round = config::from_json(config::to_json(cfg), "/elsewhere");
    CHECK(config::to_json(round) == config::to_json(cfg));
}
