#include "evolab/experiment.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/parallel.hpp"
#include "evolab/prompts.hpp"
#include "evolab/text.hpp"

namespace evolab::experiment {

using nlohmann::json;

const char* to_string(StageName s) {
    switch (s) {
        case StageName::initial_implementation: return "initial-implementation";
        case StageName::hyperparameter_tuning: return "hyperparameter-tuning";
        case StageName::proposed_method: return "proposed-method";
        case StageName::ablation: return "ablation";
    }
    return "initial-implementation";
}

namespace {

StageName stage_name_from_string(std::string_view s) {
    for (auto n : {StageName::initial_implementation, StageName::hyperparameter_tuning, StageName::proposed_method,
                   StageName::ablation}) {
        if (s == to_string(n)) {
            return n;
        }
    }
    throw ParseError(fmt::format("unknown stage name '{}'", s));
}

std::string metrics_string(const std::map<std::string, double>& metrics) {
    std::string out;
    for (const auto& [k, v] : metrics) {
        if (!out.empty()) {
            out += ", ";
        }
        out += fmt::format("{}={}", k, v);
    }
    return out.empty() ? "none" : out;
}

std::string render_files(const std::map<std::string, std::string>& files) {
    std::string out;
    for (const auto& [path, content] : files) {
        out += fmt::format("FILE: {}\n```\n{}{}```\n", path, content,
                           content.empty() || content.back() == '\n' ? "" : "\n");
    }
    return out;
}

std::string_view stage_instruction(StageName s) {
    switch (s) {
        case StageName::initial_implementation:
            return "Write a first complete, runnable implementation of the experiment: data preparation, the "
                   "baseline model, training and evaluation.";
        case StageName::hyperparameter_tuning:
            return "Tune the hyperparameters of the baseline from the previous stage to improve the objective. "
                   "Keep the method itself unchanged.";
        case StageName::proposed_method:
            return "Implement the proposed method on top of the tuned baseline and evaluate it under the same "
                   "protocol so the two are directly comparable.";
        case StageName::ablation:
            return "Ablate the proposed method: remove or replace one component at a time and report the "
                   "objective for every variant.";
    }
    return "";
}

}  // namespace

std::vector<Stage> make_stages(const std::array<int, 4>& budgets) {
    std::vector<Stage> out;
    const std::array<StageName, 4> names{StageName::initial_implementation, StageName::hyperparameter_tuning,
                                         StageName::proposed_method, StageName::ablation};
    for (int i = 0; i < 4; ++i) {
        if (budgets[static_cast<std::size_t>(i)] < 1) {
            throw ValidationError(fmt::format("stage {} budget must be at least 1", i + 1));
        }
        out.push_back(Stage{i + 1, names[static_cast<std::size_t>(i)], budgets[static_cast<std::size_t>(i)]});
    }
    return out;
}

int success_target(const Stage& stage) { return stage.index <= 2 ? 1 : 3; }

const std::pair<CodeAttempt, ExecutionRecord>* StageHistory::find(std::string_view attempt_id) const {
    for (const auto& r : records) {
        if (r.first.id == attempt_id) {
            return &r;
        }
    }
    return nullptr;
}

const char* to_string(Direction d) { return d == Direction::maximize ? "maximize" : "minimize"; }

Direction direction_from_string(std::string_view s) {
    if (s == "maximize" || s == "max") return Direction::maximize;
    if (s == "minimize" || s == "min") return Direction::minimize;
    throw ValidationError(fmt::format("objective direction must be maximize or minimize, got '{}'", s));
}

void to_json(json& j, const Stage& v) { j = {{"index", v.index}, {"name", to_string(v.name)}, {"budget", v.budget}}; }

void from_json(const json& j, Stage& v) {
    v.index = j.at("index").get<int>();
    v.name = stage_name_from_string(j.at("name").get<std::string>());
    v.budget = j.at("budget").get<int>();
}

void to_json(json& j, const StageHistory& v) {
    json records = json::array();
    for (const auto& [a, r] : v.records) {
        records.push_back({{"attempt", a}, {"record", r}});
    }
    j = {{"stage", v.stage},
         {"records", records},
         {"best_attempt_id", v.best_attempt_id ? json(*v.best_attempt_id) : json(nullptr)}};
}

void from_json(const json& j, StageHistory& v) {
    v.stage = j.at("stage").get<Stage>();
    v.records.clear();
    for (const auto& r : j.at("records")) {
        v.records.emplace_back(r.at("attempt").get<CodeAttempt>(), r.at("record").get<ExecutionRecord>());
    }
    v.best_attempt_id.reset();
    if (j.contains("best_attempt_id") && !j["best_attempt_id"].is_null()) {
        v.best_attempt_id = j["best_attempt_id"].get<std::string>();
    }
}

std::optional<std::string> select_best(const StageHistory& history, const std::string& metric, Direction direction) {
    const std::pair<CodeAttempt, ExecutionRecord>* best = nullptr;
    double best_value = 0.0;
    for (const auto& rec : history.records) {
        if (rec.second.status != Status::success) {
            continue;
        }
        const auto it = rec.second.metrics.find(metric);
        if (it == rec.second.metrics.end()) {
            spdlog::warn("attempt {} succeeded without metric '{}'; excluded from selection", rec.first.id, metric);
            continue;
        }
        const double v = it->second;
        const bool better = best == nullptr || (direction == Direction::maximize ? v > best_value : v < best_value) ||
                            (v == best_value && rec.first.attempt_index < best->first.attempt_index);
        if (better) {
            best = &rec;
            best_value = v;
        }
    }
    if (best == nullptr) {
        return std::nullopt;
    }
    return best->first.id;
}

std::string diagnose(const ExecutionRecord& record) {
    const auto tail = text::last_lines(record.stderr_log, 40);
    return fmt::format("Attempt {} ended with status {} and exit code {}.\nLast stderr lines:\n{}", record.attempt_id,
                       to_string(record.status), record.exit_code, tail.empty() ? "(stderr was empty)" : tail);
}

std::string trajectory_digest(const StageHistory& history) {
    std::string out;
    for (const auto& [a, r] : history.records) {
        const auto lines = text::split_lines(text::trim(r.stderr_log));
        out += fmt::format("- attempt {} ({}): {}, exit {}, metrics: {}, last stderr: {}\n", a.attempt_index, a.id,
                           to_string(r.status), r.exit_code, metrics_string(r.metrics),
                           lines.empty() ? "(none)" : lines.back());
    }
    return out;
}

std::map<std::string, std::string> parse_code_response(std::string_view response, const std::string& entry_file) {
    std::map<std::string, std::string> files;
    std::optional<std::string> pending;
    std::optional<std::string> unnamed;
    bool saw_marker = false;
    bool in_fence = false;
    std::string buf;

    auto close_fence = [&] {
        if (pending) {
            if (!is_safe_source_path(*pending)) {
                throw ValidationError(fmt::format("unsafe source path '{}' in generated code", *pending));
            }
            files[*pending] = buf;
            pending.reset();
        } else if (!unnamed) {
            unnamed = buf;
        }
        in_fence = false;
    };

    for (const auto& raw : text::split_lines(response)) {
        const auto line = text::trim(raw);
        if (in_fence) {
            if (line.starts_with("```") && line.find_first_not_of('`') == std::string::npos) {
                close_fence();
            } else {
                buf += raw;
                buf += '\n';
            }
            continue;
        }
        if (line.starts_with("```")) {
            in_fence = true;
            buf.clear();
            continue;
        }
        std::size_t p = 0;
        while (p < line.size() && (line[p] == '#' || line[p] == '*' || line[p] == '-' || line[p] == ' ')) {
            ++p;
        }
        if (line.size() - p >= 5 && text::normalize(line.substr(p, 5)) == "file:") {
            auto path = line.substr(p + 5);
            const auto first = path.find_first_not_of(" *`");
            const auto last = path.find_last_not_of(" *`");
            path = first == std::string::npos ? "" : path.substr(first, last - first + 1);
            if (!path.empty()) {
                pending = path;
                saw_marker = true;
            }
        }
    }
    if (in_fence) {
        close_fence();
    }
    if (files.empty() && !saw_marker && unnamed && !text::trim(*unnamed).empty()) {
        files[entry_file] = *unnamed;
    }
    return files;
}

std::string proposal_id(const tournament::Proposal& proposal) {
    return "prop-" + text::short_hash(proposal.goal_id + "\n" + proposal.source_idea_id + "\n" + proposal.render(), 12);
}

// ---------------------------------------------------------------------------------------------
// Engine

ExperimentEngine::ExperimentEngine(gateway::ModelGateway& gateway, AttemptExecutor& executor,
                                   ExperimentOptions options, std::filesystem::path run_dir)
    : gateway_(gateway), executor_(executor), options_(std::move(options)), run_dir_(std::move(run_dir)) {
    if (options_.round_width == 0) {
        throw ValidationError("experiment round width must be at least 1");
    }
    if (options_.objective.metric.empty()) {
        throw ValidationError("objective metric name is empty");
    }
    for (const auto& s : options_.stages) {
        if (s.budget < 1) {
            throw ValidationError(fmt::format("stage {} budget must be at least 1", s.index));
        }
    }
}

std::string ExperimentEngine::generation_prompt(const Stage& stage, const tournament::Proposal& proposal,
                                                const memory::RetrievedContext& context, const CodeAttempt* base,
                                                const std::pair<CodeAttempt, ExecutionRecord>* parent) const {
    std::string prompt = fmt::format("{}\n", prompts::kCodeGenerate);
    if (parent != nullptr) {
        if (parent->second.status == Status::success) {
            prompt += fmt::format(
                "Previous attempt {} succeeded with metrics: {}. Write a different variant that could do better.\n\n",
                parent->first.id, metrics_string(parent->second.metrics));
        } else {
            prompt += fmt::format("Diagnosis of the previous attempt:\n{}\nFix the cause of this failure.\n\n",
                                  diagnose(parent->second));
        }
    }
    prompt += fmt::format("Experiment stage {} of 4: {}.\n{}\n\nResearch proposal:\n{}\n\nObjective metric: {} ({}).\n\n",
                          stage.index, to_string(stage.name), stage_instruction(stage.name), proposal.render(),
                          options_.objective.metric, to_string(options_.objective.direction));
    prompt += fmt::format("Strategies from earlier experiments:\n{}\n",
                          context.empty() ? "(none retrieved)\n" : context.render());
    if (base != nullptr) {
        prompt += fmt::format("Best code from the previous stage ({}):\n{}\n", base->id, render_files(base->source_files));
    }
    if (parent != nullptr) {
        prompt += fmt::format("Code of the previous attempt ({}):\n{}\n", parent->first.id,
                              render_files(parent->first.source_files));
    }
    prompt += fmt::format(
        "Requirements:\n- The entry point is `{}`. It runs with no arguments from its own directory, without "
        "network access.\n- Print each result on standard output as a line `METRIC <name>=<value>`, including "
        "`METRIC {}=<value>`.\n- Exit with status 0 only when the experiment completed.\n\n"
        "Return every file as:\nFILE: <relative path>\n```\n<file content>\n```\n",
        options_.entry_file, options_.objective.metric);
    return prompt;
}

std::pair<CodeAttempt, ExecutionRecord> ExperimentEngine::attempt(
    const Stage& stage, int index, const tournament::Proposal& proposal, const memory::RetrievedContext& context,
    const CodeAttempt* base, const std::pair<CodeAttempt, ExecutionRecord>* parent) {
    CodeAttempt att;
    att.id = fmt::format("s{}-a{:02}", stage.index, index);
    att.stage_index = stage.index;
    att.attempt_index = index;
    const auto dir = run_dir_ / fmt::format("stage{}", stage.index) / fmt::format("attempt{}", index);
    const auto record_path = dir / "record.json";

    if (std::filesystem::exists(record_path)) {
        try {
            const auto j = fsio::read_json(record_path);
            return {j.at("attempt").get<CodeAttempt>(), j.at("record").get<ExecutionRecord>()};
        } catch (const std::exception& e) {
            spdlog::warn("ignoring unreadable {}: {}", record_path.string(), e.what());
        }
    }

    if (parent != nullptr) {
        att.parent_attempt_id = parent->first.id;
        if (parent->second.status != Status::success) {
            att.diagnosis_applied = diagnose(parent->second);
        }
    } else if (base != nullptr) {
        att.parent_attempt_id = base->id;
    }

    ExecutionRecord rec;
    rec.attempt_id = att.id;
    rec.status = Status::setup_failure;
    bool have_code = false;
    try {
        const auto resp = gateway_.generate("engineer", std::string(prompts::kEngineerSystem),
                                            generation_prompt(stage, proposal, context, base, parent));
        att.source_files = parse_code_response(resp.text, options_.entry_file);
        if (att.source_files.empty()) {
            rec.stderr_log = "no code found in the model response\n";
        } else {
            have_code = true;
        }
    } catch (const RetryableError& e) {
        rec.stderr_log = fmt::format("code generation failed: {}\n", e.what());
    } catch (const ProtocolError& e) {
        rec.stderr_log = fmt::format("code generation failed: {}\n", e.what());
    } catch (const ValidationError& e) {
        rec.stderr_log = fmt::format("{}\n", e.what());
    }

    if (have_code) {
        rec = executor_.execute(att, dir);
        rec.attempt_id = att.id;
    } else {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    fsio::write_file_atomic(dir / "stdout.log", rec.stdout_log);
    fsio::write_file_atomic(dir / "stderr.log", rec.stderr_log);
    fsio::write_json(record_path, json{{"attempt", att}, {"record", rec}});
    spdlog::info("{}: {} (exit {}) metrics: {}", att.id, to_string(rec.status), rec.exit_code,
                 metrics_string(rec.metrics));
    return {std::move(att), std::move(rec)};
}

StageHistory ExperimentEngine::run_stage(const Stage& stage, const tournament::Proposal& proposal,
                                         const memory::RetrievedContext& context, const CodeAttempt* base) {
    StageHistory history;
    history.stage = stage;
    const int target = success_target(stage);
    int successes = 0;
    int next = 1;
    while (next <= stage.budget && successes < target) {
        const auto width = std::min<std::size_t>(options_.round_width, static_cast<std::size_t>(stage.budget - next + 1));
        const auto* parent = history.records.empty() ? nullptr : &history.records.back();
        auto round = parallel_map(width, options_.workers, [&](std::size_t i) {
            return attempt(stage, next + static_cast<int>(i), proposal, context, base, parent);
        });
        for (auto& r : round) {
            if (r.second.status == Status::success) {
                ++successes;
            }
            history.records.push_back(std::move(r));
        }
        next += static_cast<int>(width);
    }
    history.best_attempt_id = select_best(history, options_.objective.metric, options_.objective.direction);
    fsio::write_json(run_dir_ / fmt::format("stage{}", stage.index) / "history.json", history);
    return history;
}

std::vector<StageHistory> ExperimentEngine::run(const tournament::Proposal& proposal,
                                                const memory::RetrievedContext& context) {
    std::vector<StageHistory> histories;
    std::optional<CodeAttempt> base;
    bool any_success = false;
    for (const auto& stage : options_.stages) {
        if (stage.index > 1 && !any_success) {
            spdlog::warn("skipping stage {} ({}): no earlier stage produced executable code", stage.index,
                         to_string(stage.name));
            break;
        }
        spdlog::info("experiment stage {} ({}), budget {}", stage.index, to_string(stage.name), stage.budget);
        auto history = run_stage(stage, proposal, context, base ? &*base : nullptr);
        if (history.best_attempt_id) {
            base = history.find(*history.best_attempt_id)->first;
        }
        any_success = any_success || std::any_of(history.records.begin(), history.records.end(), [](const auto& r) {
                          return r.second.status == Status::success;
                      });
        histories.push_back(std::move(history));
    }
    return histories;
}

// ---------------------------------------------------------------------------------------------
// Report

std::string Comparison::render() const {
    std::set<std::string> names;
    for (const auto& [k, _] : baseline_metrics) names.insert(k);
    for (const auto& [k, _] : proposed_metrics) names.insert(k);
    auto cell = [](const std::map<std::string, double>& m, const std::string& k) {
        const auto it = m.find(k);
        return it == m.end() ? std::string("-") : fmt::format("{}", it->second);
    };
    std::string out = fmt::format("Objective: {} ({})\n| metric | baseline ({}) | proposed ({}) |\n|---|---|---|\n",
                                  metric, to_string(direction), baseline_attempt_id, proposed_attempt_id);
    for (const auto& k : names) {
        out += fmt::format("| {} | {} | {} |\n", k, cell(baseline_metrics, k), cell(proposed_metrics, k));
    }
    return out;
}

std::string ExecutionReport::numeric_summary() const {
    std::string out;
    for (const auto& s : stages) {
        out += fmt::format("Stage {} ({}): attempts used {}, successes {}, best metrics: {}\n", s.stage, s.name,
                           s.attempts_used, s.successes, s.best_metrics ? metrics_string(*s.best_metrics) : "none");
    }
    out += fmt::format("Executable code found: {}\n", any_executable_found ? "yes" : "no");
    if (proposed_vs_baseline) {
        out += proposed_vs_baseline->render();
    } else {
        out += "No comparison between the proposed method and the baseline is available.\n";
    }
    return out;
}

void to_json(json& j, const StageSummary& v) {
    j = {{"stage", v.stage},
         {"name", v.name},
         {"attempts_used", v.attempts_used},
         {"successes", v.successes},
         {"best_metrics", v.best_metrics ? json(*v.best_metrics) : json(nullptr)}};
}

void from_json(const json& j, StageSummary& v) {
    v.stage = j.at("stage").get<int>();
    v.name = j.at("name").get<std::string>();
    v.attempts_used = j.at("attempts_used").get<int>();
    v.successes = j.at("successes").get<int>();
    v.best_metrics.reset();
    if (j.contains("best_metrics") && !j["best_metrics"].is_null()) {
        v.best_metrics = j["best_metrics"].get<std::map<std::string, double>>();
    }
}

void to_json(json& j, const Comparison& v) {
    j = {{"metric", v.metric},
         {"direction", to_string(v.direction)},
         {"baseline_attempt_id", v.baseline_attempt_id},
         {"proposed_attempt_id", v.proposed_attempt_id},
         {"baseline_metrics", v.baseline_metrics},
         {"proposed_metrics", v.proposed_metrics}};
}

void from_json(const json& j, Comparison& v) {
    v.metric = j.at("metric").get<std::string>();
    v.direction = direction_from_string(j.at("direction").get<std::string>());
    v.baseline_attempt_id = j.at("baseline_attempt_id").get<std::string>();
    v.proposed_attempt_id = j.at("proposed_attempt_id").get<std::string>();
    v.baseline_metrics = j.at("baseline_metrics").get<std::map<std::string, double>>();
    v.proposed_metrics = j.at("proposed_metrics").get<std::map<std::string, double>>();
}

void to_json(json& j, const ExecutionReport& v) {
    j = {{"proposal_id", v.proposal_id},
         {"stages", v.stages},
         {"narrative", v.narrative},
         {"any_executable_found", v.any_executable_found},
         {"proposed_vs_baseline", v.proposed_vs_baseline ? json(*v.proposed_vs_baseline) : json(nullptr)}};
}

void from_json(const json& j, ExecutionReport& v) {
    v.proposal_id = j.at("proposal_id").get<std::string>();
    v.stages = j.at("stages").get<std::vector<StageSummary>>();
    v.narrative = j.at("narrative").get<std::string>();
    v.any_executable_found = j.at("any_executable_found").get<bool>();
    v.proposed_vs_baseline.reset();
    if (j.contains("proposed_vs_baseline") && !j["proposed_vs_baseline"].is_null()) {
        v.proposed_vs_baseline = j["proposed_vs_baseline"].get<Comparison>();
    }
}

ExecutionReport build_report(const tournament::Proposal& proposal, const std::vector<StageHistory>& histories,
                             const Objective& objective) {
    ExecutionReport report;
    report.proposal_id = proposal_id(proposal);
    const std::pair<CodeAttempt, ExecutionRecord>* stage_best[5] = {};
    for (const auto& h : histories) {
        StageSummary s;
        s.stage = h.stage.index;
        s.name = to_string(h.stage.name);
        s.attempts_used = static_cast<int>(h.records.size());
        s.successes = static_cast<int>(std::count_if(h.records.begin(), h.records.end(), [](const auto& r) {
            return r.second.status == Status::success;
        }));
        const auto best = select_best(h, objective.metric, objective.direction);
        if (best) {
            const auto* rec = h.find(*best);
            s.best_metrics = rec->second.metrics;
            if (h.stage.index >= 1 && h.stage.index <= 4) {
                stage_best[h.stage.index] = rec;
            }
        }
        report.any_executable_found = report.any_executable_found || s.successes > 0;
        report.stages.push_back(std::move(s));
    }
    const auto* baseline = stage_best[2] != nullptr ? stage_best[2] : stage_best[1];
    const auto* proposed = stage_best[3];
    if (baseline != nullptr && proposed != nullptr) {
        Comparison c;
        c.metric = objective.metric;
        c.direction = objective.direction;
        c.baseline_attempt_id = baseline->first.id;
        c.proposed_attempt_id = proposed->first.id;
        c.baseline_metrics = baseline->second.metrics;
        c.proposed_metrics = proposed->second.metrics;
        report.proposed_vs_baseline = std::move(c);
    }
    return report;
}

ExecutionReport summarize_execution(gateway::ModelGateway& gateway, const tournament::Proposal& proposal,
                                    const std::vector<StageHistory>& histories, const Objective& objective) {
    auto report = build_report(proposal, histories, objective);
    std::string digests;
    for (const auto& h : histories) {
        digests += fmt::format("Stage {} ({}):\n{}", h.stage.index, to_string(h.stage.name), trajectory_digest(h));
    }
    const auto prompt = fmt::format(
        "{}\nResearch proposal:\n{}\n\nNumeric summary of the experiments:\n{}\nAttempt trajectories:\n{}\n"
        "Write a short narrative of what was tried, what worked, what failed and why, and how the proposed "
        "method compares with the baseline. Do not invent numbers that are not in the summary.\n",
        prompts::kExecutionSummary, proposal.render(), report.numeric_summary(), digests.empty() ? "(none)\n" : digests);
    try {
        report.narrative = text::trim(gateway.generate("engineer", std::string(prompts::kEngineerSystem), prompt).text);
    } catch (const RetryableError& e) {
        spdlog::warn("execution narrative failed: {}", e.what());
    } catch (const ProtocolError& e) {
        spdlog::warn("execution narrative failed: {}", e.what());
    }
    return report;
}

}  // namespace evolab::experiment
