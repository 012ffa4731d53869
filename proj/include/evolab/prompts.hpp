#pragma once

#include <string>
#include <string_view>

// Prompt templates for every agent call. Each prompt opens with a `TASK:` tag so that scripted
// backends (and humans reading transcripts) can tell the calls apart, and asks for line markers
// (`METHOD:`, `VERDICT:`, ...) that the callers parse.
namespace evolab::prompts {

inline constexpr std::string_view kIdeaPropose = "TASK: IDEA-PROPOSE";
inline constexpr std::string_view kIdeaRefine = "TASK: IDEA-REFINE";
inline constexpr std::string_view kIdeaReview = "TASK: IDEA-REVIEW";
inline constexpr std::string_view kPairwiseJudge = "TASK: PAIRWISE-JUDGE";
inline constexpr std::string_view kProposalExtend = "TASK: PROPOSAL-EXTEND";
inline constexpr std::string_view kCodeGenerate = "TASK: CODE-GENERATE";
inline constexpr std::string_view kExecutionSummary = "TASK: EXECUTION-SUMMARY";
inline constexpr std::string_view kDirectionEvolution = "TASK: IDEA-DIRECTION-EVOLUTION";
inline constexpr std::string_view kValidationEvolution = "TASK: IDEA-VALIDATION-EVOLUTION";
inline constexpr std::string_view kStrategyEvolution = "TASK: EXPERIMENT-STRATEGY-EVOLUTION";

inline constexpr std::string_view kResearcherSystem =
    "You are a careful research scientist. You propose concrete, testable research ideas grounded in the "
    "literature and in lessons from earlier research runs. Follow the requested answer format exactly.";
inline constexpr std::string_view kReviewerSystem =
    "You are a demanding but constructive peer reviewer. Judge ideas on novelty, feasibility, relevance to "
    "the goal, and clarity. Follow the requested answer format exactly.";
inline constexpr std::string_view kJudgeSystem =
    "You compare two research ideas for the same goal. Weigh novelty, feasibility, relevance and clarity "
    "together and pick the better one. Position in the prompt carries no information.";
inline constexpr std::string_view kEngineerSystem =
    "You are a research engineer. You write complete, self-contained experiment code that runs without "
    "network access and reports its results as `METRIC <name>=<value>` lines on standard output.";
inline constexpr std::string_view kEvolutionSystem =
    "You distil reusable lessons from finished research runs so that future runs start from better "
    "knowledge. Be concrete and general enough to transfer to similar goals.";

/// Appended to a prompt whose answer could not be parsed, asking for the complete format again.
std::string repair_suffix(std::string_view missing, std::string_view previous_answer);

}  // namespace evolab::prompts
