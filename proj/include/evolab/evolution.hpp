#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evolab/experiment.hpp"
#include "evolab/ideas.hpp"
#include "evolab/memory.hpp"
#include "evolab/tournament.hpp"

namespace evolab::evolution {

struct Payload {
    memory::Kind kind = memory::Kind::ideation_direction;
    std::string text;
};

struct EvolutionFinding {
    memory::Source source = memory::Source::ide;
    std::vector<Payload> payloads;
    std::string run_id;
    /// Set when the evolution produced nothing usable; explains why.
    std::string skipped_reason;
};

enum class Reason { budget_exhausted, worse_than_baseline, passed };

const char* to_string(Reason r);
Reason reason_from_string(std::string_view s);

struct ValidationVerdict {
    std::string proposal_id;
    bool failed = false;
    Reason reason = Reason::passed;
    std::string rationale;
};

void to_json(nlohmann::json& j, const Payload& v);
void from_json(const nlohmann::json& j, Payload& v);
void to_json(nlohmann::json& j, const EvolutionFinding& v);
void from_json(const nlohmann::json& j, EvolutionFinding& v);
void to_json(nlohmann::json& j, const ValidationVerdict& v);
void from_json(const nlohmann::json& j, ValidationVerdict& v);

/// One call over the goal and the top ideas; every `DIRECTION:` section becomes a payload. Text
/// without markers is one direction; an empty or failed answer skips the evolution.
EvolutionFinding idea_direction_evolution(gateway::ModelGateway& gateway, const ideas::UserGoal& goal,
                                          const std::vector<ideas::Idea>& top, const std::string& run_id);

/// No executable code → failed/budget-exhausted without any model call. Otherwise one call over the
/// comparison table; `VERDICT: FAIL` records the dead direction. Unparsable answers count as passed.
std::pair<ValidationVerdict, EvolutionFinding> idea_validation_evolution(gateway::ModelGateway& gateway,
                                                                         const ideas::UserGoal& goal,
                                                                         const tournament::Proposal& proposal,
                                                                         const experiment::ExecutionReport& report,
                                                                         const std::string& run_id);

/// "Direction <method summary> failed for goals like <goal>: <reason>"
std::string failure_payload_text(const tournament::Proposal& proposal, const ideas::UserGoal& goal,
                                 std::string_view reason);

/// One call over best codes and trajectory digests, plus at most one repair. Produces exactly one
/// data-strategy and one training-strategy payload, or none when skipped.
EvolutionFinding experiment_strategy_evolution(gateway::ModelGateway& gateway, const tournament::Proposal& proposal,
                                               const std::vector<experiment::StageHistory>& histories,
                                               const std::string& run_id);

struct AppliedCounts {
    std::size_t ideation = 0;
    std::size_t experimentation = 0;
};

void to_json(nlohmann::json& j, const AppliedCounts& v);
void from_json(const nlohmann::json& j, AppliedCounts& v);

/// Routes payloads by kind. Throws ValidationError when the payload kinds break the source's invariant.
AppliedCounts apply(memory::MemoryBank& bank, const EvolutionFinding& finding);

/// Throws ValidationError unless IDE payloads are directions, IVE payloads are failures, and an ESE
/// finding has either no payloads or exactly one of each experiment kind.
void validate(const EvolutionFinding& finding);

}  // namespace evolab::evolution
