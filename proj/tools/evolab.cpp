#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "evolab/config.hpp"
#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/memory.hpp"
#include "evolab/orchestrator.hpp"
#include "evolab/text.hpp"
#include "evolab/tournament.hpp"

namespace fs = std::filesystem;
using namespace evolab;
using nlohmann::json;

namespace {

struct Options {
    std::string workspace = ".";
    std::string log_level = "info";

    std::string goal;
    std::string config_path;
    bool deterministic = false;
    std::string run_id;

    std::string store = "ideation";
    std::string item_id;

    std::string idea_a;
    std::string idea_b;
};

/// Text is taken literally unless it names an existing file.
std::string text_or_file(const std::string& arg) {
    std::error_code ec;
    if (!arg.empty() && arg.size() < 4096 && fs::is_regular_file(arg, ec)) {
        return fsio::read_file(arg);
    }
    return arg;
}

config::RunConfig load_config(const Options& opt) {
    auto cfg = opt.config_path.empty() ? config::RunConfig::defaults() : config::load(opt.config_path);
    if (opt.deterministic) {
        cfg.deterministic = true;
    }
    return cfg;
}

int exit_code_for_name(const std::string& category) {
    for (int c = 0; c <= static_cast<int>(ErrorCategory::search); ++c) {
        if (category == to_string(static_cast<ErrorCategory>(c))) {
            return exit_code_for(static_cast<ErrorCategory>(c));
        }
    }
    return 1;
}

void print_state(const orchestrator::RunState& s) {
    fmt::print("run:            {}\n", s.run_id);
    fmt::print("goal:           {}\n", text::first_words(s.goal.text, 30));
    fmt::print("phase:          {}\n", orchestrator::to_string(s.phase));
    fmt::print("last completed: {}\n", orchestrator::to_string(s.last_completed));
    if (s.failed_at) {
        fmt::print("failed at:      {}\n", orchestrator::to_string(*s.failed_at));
        fmt::print("error:          [{}] {}\n", s.error_category, s.error);
    }
    for (const auto p : orchestrator::kPhaseOrder) {
        const auto name = orchestrator::to_string(p);
        if (auto it = s.artifact_paths.find(name); it != s.artifact_paths.end()) {
            fmt::print("  {:<20} {:<24} {}\n", name, it->second, s.timestamps.count(name) ? s.timestamps.at(name) : "");
        }
    }
}

int finish(const orchestrator::RunState& s) {
    print_state(s);
    return s.phase == orchestrator::Phase::failed ? exit_code_for_name(s.error_category) : 0;
}

struct Services {
    explicit Services(const config::RunConfig& cfg)
        : gateway(config::build_gateway(cfg)), literature(config::build_literature(cfg)), sandbox(cfg.sandbox) {}

    gateway::ModelGateway gateway;
    std::unique_ptr<ideas::LiteratureProvider> literature;
    experiment::SubprocessSandbox sandbox;
};

int cmd_run(const Options& opt) {
    const auto cfg = load_config(opt);
    const auto goal = ideas::UserGoal::from_text(text::trim(text_or_file(opt.goal)));
    Services svc(cfg);
    orchestrator::Pipeline pipeline(orchestrator::Workspace{opt.workspace}, cfg,
                                    {svc.gateway, *svc.literature, svc.sandbox});
    return finish(pipeline.start(goal, opt.run_id.empty() ? std::nullopt : std::optional(opt.run_id)));
}

int cmd_resume(const Options& opt) {
    const orchestrator::Workspace ws{opt.workspace};
    const auto state = ws.load_state(opt.run_id);
    config::RunConfig cfg;
    if (!opt.config_path.empty()) {
        cfg = load_config(opt);
    } else {
        const auto dir = ws.run_dir(state.run_id);
        cfg = config::from_json(fsio::read_json(dir / orchestrator::artifact_name(orchestrator::Phase::created)), dir);
    }
    Services svc(cfg);
    orchestrator::Pipeline pipeline(ws, cfg, {svc.gateway, *svc.literature, svc.sandbox});
    return finish(pipeline.resume(state.run_id));
}

int cmd_status(const Options& opt) {
    print_state(orchestrator::Workspace{opt.workspace}.load_state(opt.run_id));
    return 0;
}

memory::MemoryStore load_store(const Options& opt, memory::StoreName name) {
    const orchestrator::Workspace ws{opt.workspace};
    return memory::MemoryStore::load(name, ws.state_dir() / memory::file_name(name));
}

int cmd_memory_list(const Options& opt) {
    const auto store = load_store(opt, memory::store_from_string(opt.store));
    const auto items = store.items();
    fmt::print("{:<20} {:<30} {:<5} {:<26} {}\n", "ID", "KIND", "SRC", "RUN", "TEXT");
    for (const auto& it : items) {
        fmt::print("{:<20} {:<30} {:<5} {:<26} {}\n", it.id, memory::to_string(it.kind),
                   memory::to_string(it.provenance.source), it.provenance.run_id, text::first_words(it.text, 12));
    }
    fmt::print("{} item(s) in {}\n", items.size(), memory::to_string(store.name()));
    return 0;
}

int cmd_memory_inspect(const Options& opt) {
    for (const auto name : {memory::StoreName::ideation, memory::StoreName::experimentation}) {
        if (auto item = load_store(opt, name).find(opt.item_id)) {
            auto j = memory::to_json(*item);
            j.erase("embedding");
            j["embedding_dimension"] = item->embedding.size();
            j["store"] = memory::to_string(name);
            fmt::print("{}\n", j.dump(2));
            return 0;
        }
    }
    throw NotFoundError(fmt::format("memory item not found: {}", opt.item_id));
}

int cmd_report_show(const Options& opt) {
    const orchestrator::Workspace ws{opt.workspace};
    const auto state = ws.load_state(opt.run_id);
    const auto path = ws.run_dir(state.run_id) / orchestrator::artifact_name(orchestrator::Phase::report_ready);
    if (!fs::exists(path)) {
        throw NotFoundError(fmt::format("run {} has no execution report yet (phase {})", state.run_id,
                                        orchestrator::to_string(state.phase)));
    }
    const auto report = fsio::read_json(path).at("report").get<experiment::ExecutionReport>();
    fmt::print("{}\n", report.numeric_summary());
    if (!report.narrative.empty()) {
        fmt::print("\n{}\n", report.narrative);
    }
    const auto evo = ws.run_dir(state.run_id) / orchestrator::artifact_name(orchestrator::Phase::evolved);
    if (fs::exists(evo)) {
        const auto j = fsio::read_json(evo);
        fmt::print("\nvalidation: {}\n", j.at("verdict").dump());
        fmt::print("memory items added: {}\n", j.at("applied").dump());
    }
    return 0;
}

ideas::Idea load_idea(const std::string& arg, const std::string& fallback_id) {
    const auto raw = text_or_file(arg);
    try {
        auto j = json::parse(raw);
        if (j.is_object()) {
            ideas::Idea idea = j.get<ideas::Idea>();
            if (idea.id.empty()) {
                idea.id = fallback_id;
            }
            return idea;
        }
    } catch (const json::exception&) {
    }
    if (auto parsed = ideas::parse_idea(raw)) {
        parsed->id = fallback_id;
        return *parsed;
    }
    if (text::trim(raw).empty()) {
        throw ValidationError(fmt::format("idea {} is empty", fallback_id));
    }
    return ideas::Idea{fallback_id, text::trim(raw), "", 0};
}

int cmd_eval_pairwise(const Options& opt) {
    const auto cfg = load_config(opt);
    auto gw = config::build_gateway(cfg);
    const auto a = load_idea(opt.idea_a, "a");
    const auto b = load_idea(opt.idea_b, "b");
    tournament::PairwiseJudge judge(gw, opt.goal.empty() ? std::string("(no goal given)") : text_or_file(opt.goal));
    const auto rec = judge.compare(a, b);
    const json out = rec;
    fmt::print("{}\n", out.dump(2));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-evolving research pipeline: ideas, ranking, experiments and cross-run memory."};
    app.require_subcommand(1);
    Options opt;
    app.add_option("-w,--workspace", opt.workspace, "Directory holding state/ and runs/")->capture_default_str();
    app.add_option("--log-level", opt.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    auto* run = app.add_subcommand("run", "Start a pipeline run for a goal");
    run->add_option("--goal", opt.goal, "Goal text, or a file containing it")->required();
    run->add_option("--config", opt.config_path, "JSON config file");
    run->add_flag("--deterministic", opt.deterministic, "Single workers everywhere");
    run->add_option("--run-id", opt.run_id, "Use this id instead of a generated one");

    auto* resume = app.add_subcommand("resume", "Continue a run after its last completed phase");
    resume->add_option("run-id", opt.run_id)->required();
    resume->add_option("--config", opt.config_path, "Override the config stored with the run");

    auto* status = app.add_subcommand("status", "Show the state of a run");
    status->add_option("run-id", opt.run_id)->required();

    auto* mem = app.add_subcommand("memory", "Inspect the memory stores");
    mem->require_subcommand(1);
    auto* mem_list = mem->add_subcommand("list", "List the items of one store");
    mem_list->add_option("--store", opt.store)->check(CLI::IsMember({"ideation", "experimentation"}))->capture_default_str();
    auto* mem_inspect = mem->add_subcommand("inspect", "Show one item");
    mem_inspect->add_option("id", opt.item_id)->required();

    auto* report = app.add_subcommand("report", "Execution reports");
    report->require_subcommand(1);
    auto* report_show = report->add_subcommand("show", "Print the execution report of a run");
    report_show->add_option("run-id", opt.run_id)->required();

    auto* eval = app.add_subcommand("eval", "Ad-hoc evaluations");
    eval->require_subcommand(1);
    auto* pairwise = eval->add_subcommand("pairwise", "Judge two ideas in both presentation orders");
    pairwise->add_option("--a", opt.idea_a, "Idea JSON file, text file, or text")->required();
    pairwise->add_option("--b", opt.idea_b, "Idea JSON file, text file, or text")->required();
    pairwise->add_option("--goal", opt.goal, "Goal text or file");
    pairwise->add_option("--config", opt.config_path, "JSON config file");

    CLI11_PARSE(app, argc, argv);

    auto logger = spdlog::stderr_color_mt("evolab");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(opt.log_level));

    try {
        if (run->parsed()) return cmd_run(opt);
        if (resume->parsed()) return cmd_resume(opt);
        if (status->parsed()) return cmd_status(opt);
        if (mem_list->parsed()) return cmd_memory_list(opt);
        if (mem_inspect->parsed()) return cmd_memory_inspect(opt);
        if (report_show->parsed()) return cmd_report_show(opt);
        if (pairwise->parsed()) return cmd_eval_pairwise(opt);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
