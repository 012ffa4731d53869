#include "evolab/evolution.hpp"

#include <array>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "evolab/errors.hpp"
#include "evolab/prompts.hpp"
#include "evolab/text.hpp"

namespace evolab::evolution {

using nlohmann::json;
using memory::Kind;
using memory::Source;

const char* to_string(Reason r) {
    switch (r) {
        case Reason::budget_exhausted: return "budget-exhausted";
        case Reason::worse_than_baseline: return "worse-than-baseline";
        case Reason::passed: return "passed";
    }
    return "passed";
}

Reason reason_from_string(std::string_view s) {
    if (s == "budget-exhausted") return Reason::budget_exhausted;
    if (s == "worse-than-baseline") return Reason::worse_than_baseline;
    if (s == "passed") return Reason::passed;
    throw ParseError(fmt::format("unknown verdict reason '{}'", s));
}

void to_json(json& j, const Payload& v) { j = {{"kind", memory::to_string(v.kind)}, {"text", v.text}}; }

void from_json(const json& j, Payload& v) {
    v.kind = memory::kind_from_string(j.at("kind").get<std::string>());
    v.text = j.at("text").get<std::string>();
}

void to_json(json& j, const EvolutionFinding& v) {
    j = {{"source", memory::to_string(v.source)},
         {"payloads", v.payloads},
         {"run_id", v.run_id},
         {"skipped_reason", v.skipped_reason}};
}

void from_json(const json& j, EvolutionFinding& v) {
    v.source = memory::source_from_string(j.at("source").get<std::string>());
    v.payloads = j.at("payloads").get<std::vector<Payload>>();
    v.run_id = j.at("run_id").get<std::string>();
    v.skipped_reason = j.value("skipped_reason", std::string());
}

void to_json(json& j, const ValidationVerdict& v) {
    j = {{"proposal_id", v.proposal_id},
         {"failed", v.failed},
         {"reason", to_string(v.reason)},
         {"rationale", v.rationale}};
}

void from_json(const json& j, ValidationVerdict& v) {
    v.proposal_id = j.at("proposal_id").get<std::string>();
    v.failed = j.at("failed").get<bool>();
    v.reason = reason_from_string(j.at("reason").get<std::string>());
    v.rationale = j.at("rationale").get<std::string>();
}

void to_json(json& j, const AppliedCounts& v) {
    j = {{"ideation", v.ideation}, {"experimentation", v.experimentation}};
}

void from_json(const json& j, AppliedCounts& v) {
    v.ideation = j.at("ideation").get<std::size_t>();
    v.experimentation = j.at("experimentation").get<std::size_t>();
}

namespace {

std::optional<std::string> ask(gateway::ModelGateway& gateway, const std::string& prompt, std::string_view what) {
    try {
        return gateway.generate("evolution", std::string(prompts::kEvolutionSystem), prompt).text;
    } catch (const RetryableError& e) {
        spdlog::warn("{} call failed: {}", what, e.what());
    } catch (const ProtocolError& e) {
        spdlog::warn("{} call failed: {}", what, e.what());
    }
    return std::nullopt;
}

}  // namespace

EvolutionFinding idea_direction_evolution(gateway::ModelGateway& gateway, const ideas::UserGoal& goal,
                                          const std::vector<ideas::Idea>& top, const std::string& run_id) {
    if (top.empty() || top.size() > 3) {
        throw ValidationError(fmt::format("direction evolution takes 1 to 3 ideas, got {}", top.size()));
    }
    EvolutionFinding finding;
    finding.source = Source::ide;
    finding.run_id = run_id;

    std::string listed;
    for (std::size_t i = 0; i < top.size(); ++i) {
        listed += fmt::format("Top idea {} ({}):\n{}\n\n", i + 1, top[i].id, top[i].render());
    }
    const auto prompt = fmt::format(
        "{}\nResearch goal:\n{}\n\n{}"
        "These ideas ranked highest in a pairwise tournament. Summarize the promising research directions they "
        "share, phrased so they can guide idea generation for related goals. Write one direction per section:\n"
        "DIRECTION: <a reusable research direction>\n",
        prompts::kDirectionEvolution, goal.text, listed);
    const auto response = ask(gateway, prompt, "direction evolution");
    if (!response || text::trim(*response).empty()) {
        finding.skipped_reason = "empty or failed model response";
        spdlog::warn("direction evolution skipped: {}", finding.skipped_reason);
        return finding;
    }
    static constexpr std::array<std::string_view, 1> markers{"DIRECTION"};
    for (const auto& s : text::parse_sections(*response, markers)) {
        if (!s.body.empty()) {
            finding.payloads.push_back({Kind::ideation_direction, s.body});
        }
    }
    if (finding.payloads.empty()) {
        finding.payloads.push_back({Kind::ideation_direction, text::trim(*response)});
    }
    return finding;
}

std::string failure_payload_text(const tournament::Proposal& proposal, const ideas::UserGoal& goal,
                                 std::string_view reason) {
    return fmt::format("Direction {} failed for goals like {}: {}", text::first_words(proposal.method, 40),
                       text::first_words(goal.text, 40), reason);
}

std::pair<ValidationVerdict, EvolutionFinding> idea_validation_evolution(gateway::ModelGateway& gateway,
                                                                         const ideas::UserGoal& goal,
                                                                         const tournament::Proposal& proposal,
                                                                         const experiment::ExecutionReport& report,
                                                                         const std::string& run_id) {
    ValidationVerdict verdict;
    verdict.proposal_id = report.proposal_id;
    EvolutionFinding finding;
    finding.source = Source::ive;
    finding.run_id = run_id;

    if (!report.any_executable_found) {
        verdict.failed = true;
        verdict.reason = Reason::budget_exhausted;
        verdict.rationale = "no executable code was found within the experiment budget";
        finding.payloads.push_back({Kind::ideation_failure, failure_payload_text(proposal, goal, verdict.rationale)});
        return {verdict, finding};
    }

    const auto table = report.proposed_vs_baseline
                           ? report.proposed_vs_baseline->render()
                           : std::string("(the proposed method produced no successful run to compare)\n");
    const auto prompt = fmt::format(
        "{}\nResearch goal:\n{}\n\nProposal method:\n{}\n\nExpected results:\n{}\n\nExperiment summary:\n{}\n"
        "Proposed method against the baseline:\n{}\n"
        "Decide whether the proposal failed, for example because the proposed method performs worse than the "
        "baseline on the objective metric. Equal performance counts as a pass.\n\nAnswer with exactly these "
        "sections:\nVERDICT: <PASS or FAIL>\nRATIONALE: <one or two sentences>\n",
        prompts::kValidationEvolution, goal.text, proposal.method, proposal.expected_results, report.numeric_summary(),
        table);
    const auto response = ask(gateway, prompt, "validation evolution");

    static constexpr std::array<std::string_view, 2> markers{"VERDICT", "RATIONALE"};
    const auto sections = response ? text::parse_sections(*response, markers) : std::vector<text::Section>{};
    const auto word = text::normalize(text::first_words(text::first_section(sections, "VERDICT"), 1));
    verdict.rationale = text::first_section(sections, "RATIONALE");
    if (word.starts_with("fail")) {
        verdict.failed = true;
        verdict.reason = Reason::worse_than_baseline;
        if (verdict.rationale.empty()) {
            verdict.rationale = "the proposed method did not beat the baseline";
        }
        finding.payloads.push_back({Kind::ideation_failure, failure_payload_text(proposal, goal, verdict.rationale)});
    } else if (word.starts_with("pass")) {
        verdict.reason = Reason::passed;
    } else {
        spdlog::warn("validation verdict unparsable; treating the proposal as passed");
        verdict.reason = Reason::passed;
        if (verdict.rationale.empty()) {
            verdict.rationale = "verdict could not be parsed; defaulted to passed";
        }
        finding.skipped_reason = "unparsable verdict";
    }
    return {verdict, finding};
}

EvolutionFinding experiment_strategy_evolution(gateway::ModelGateway& gateway, const tournament::Proposal& proposal,
                                               const std::vector<experiment::StageHistory>& histories,
                                               const std::string& run_id) {
    if (histories.empty()) {
        throw ValidationError("strategy evolution needs at least one stage history");
    }
    EvolutionFinding finding;
    finding.source = Source::ese;
    finding.run_id = run_id;

    std::string body;
    for (const auto& h : histories) {
        body += fmt::format("Stage {} ({}), {} attempts:\n{}", h.stage.index, experiment::to_string(h.stage.name),
                            h.records.size(), experiment::trajectory_digest(h));
        if (h.best_attempt_id) {
            const auto* best = h.find(*h.best_attempt_id);
            body += fmt::format("Best code of this stage ({}):\n", best->first.id);
            for (const auto& [path, content] : best->first.source_files) {
                body += fmt::format("FILE: {}\n```\n{}\n```\n", path, content);
            }
        } else if (!h.records.empty()) {
            body += fmt::format("No attempt succeeded. Last failure:\n{}\n", experiment::diagnose(h.records.back().second));
        }
        body += "\n";
    }
    const auto prompt = fmt::format(
        "{}\nProposal {} method:\n{}\n\nExperiment trajectories:\n{}"
        "Distil reusable lessons from these trajectories, including lessons from failures. Summarize (i) a data "
        "processing strategy and (ii) a model training strategy that would help future experiments on similar "
        "tasks.\n\nAnswer with exactly these sections:\nDATA-STRATEGY: <data processing strategy>\n"
        "TRAINING-STRATEGY: <model training strategy>\n",
        prompts::kStrategyEvolution, experiment::proposal_id(proposal), proposal.method, body);

    static constexpr std::array<std::string_view, 2> markers{"DATA-STRATEGY", "TRAINING-STRATEGY"};
    std::string current = prompt;
    for (int round = 0; round < 2; ++round) {
        const auto response = ask(gateway, current, "strategy evolution");
        if (!response) {
            finding.skipped_reason = "model call failed";
            return finding;
        }
        const auto sections = text::parse_sections(*response, markers);
        const auto data = text::first_section(sections, "DATA-STRATEGY");
        const auto training = text::first_section(sections, "TRAINING-STRATEGY");
        if (!data.empty() && !training.empty()) {
            finding.payloads.push_back({Kind::experiment_data_strategy, data});
            finding.payloads.push_back({Kind::experiment_training_strategy, training});
            return finding;
        }
        std::vector<std::string> missing;
        if (data.empty()) missing.emplace_back("DATA-STRATEGY");
        if (training.empty()) missing.emplace_back("TRAINING-STRATEGY");
        const auto list = fmt::format("{}", fmt::join(missing, ", "));
        current = prompt + prompts::repair_suffix(list, *response);
        finding.skipped_reason = "missing sections: " + list;
    }
    spdlog::warn("strategy evolution skipped: {}", finding.skipped_reason);
    return finding;
}

void validate(const EvolutionFinding& finding) {
    auto fail = [&](std::string_view why) {
        throw ValidationError(fmt::format("{} finding is invalid: {}", memory::to_string(finding.source), why));
    };
    switch (finding.source) {
        case Source::ide:
            for (const auto& p : finding.payloads)
                if (p.kind != Kind::ideation_direction) fail("payload is not an ideation direction");
            break;
        case Source::ive:
            for (const auto& p : finding.payloads)
                if (p.kind != Kind::ideation_failure) fail("payload is not an ideation failure");
            break;
        case Source::ese: {
            if (finding.payloads.empty()) break;
            int data = 0;
            int training = 0;
            for (const auto& p : finding.payloads) {
                data += p.kind == Kind::experiment_data_strategy;
                training += p.kind == Kind::experiment_training_strategy;
            }
            if (finding.payloads.size() != 2 || data != 1 || training != 1) {
                fail("needs exactly one data strategy and one training strategy");
            }
            break;
        }
    }
    for (const auto& p : finding.payloads) {
        if (text::trim(p.text).empty()) fail("empty payload text");
    }
}

AppliedCounts apply(memory::MemoryBank& bank, const EvolutionFinding& finding) {
    validate(finding);
    AppliedCounts counts;
    std::vector<memory::MemoryItem> ideation;
    std::vector<memory::MemoryItem> experimentation;
    for (const auto& p : finding.payloads) {
        auto item = bank.make_item(p.kind, p.text, memory::Provenance{finding.run_id, finding.source});
        (memory::store_for(p.kind) == memory::StoreName::ideation ? ideation : experimentation).push_back(std::move(item));
    }
    if (!ideation.empty()) {
        counts.ideation = bank.update(memory::StoreName::ideation, std::move(ideation));
    }
    if (!experimentation.empty()) {
        counts.experimentation = bank.update(memory::StoreName::experimentation, std::move(experimentation));
    }
    return counts;
}

}  // namespace evolab::evolution
