#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evolab/gateway.hpp"
#include "evolab/ideas.hpp"

namespace evolab::tournament {

struct EloConfig {
    double initial_rating = 1500.0;
    double k_factor = 32.0;
};

/// Expected score of a player rated `ra` against one rated `rb`.
double expected_score(double ra, double rb);

enum class Outcome { a_wins, b_wins, tie };

const char* to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

struct EloRating {
    std::string idea_id;
    double rating = 1500.0;
    int games_played = 0;
};

struct MatchRecord {
    std::string idea_a;
    std::string idea_b;
    Outcome outcome = Outcome::tie;
    /// Raw judge answers: first with idea_a shown as "A", then with idea_b shown as "A".
    std::pair<std::string, std::string> swapped_verdicts;
};

struct TournamentResult {
    /// Same order as the input ideas.
    std::vector<EloRating> ratings;
    /// Judged matches in schedule order.
    std::vector<MatchRecord> matches;
    /// Pairs whose judge call failed.
    std::vector<std::pair<std::string, std::string>> skipped;
};

void to_json(nlohmann::json& j, const EloRating& v);
void from_json(const nlohmann::json& j, EloRating& v);
void to_json(nlohmann::json& j, const MatchRecord& v);
void from_json(const nlohmann::json& j, MatchRecord& v);
void to_json(nlohmann::json& j, const TournamentResult& v);
void from_json(const nlohmann::json& j, TournamentResult& v);

/// Applies one game to both ratings. `score_a` is 1, 0.5 or 0.
void apply_elo(EloRating& a, EloRating& b, double score_a, const EloConfig& cfg);

/// Every unordered pair (i, j), i < j, in lexicographic index order.
std::vector<std::pair<std::size_t, std::size_t>> round_robin(std::size_t n);

enum class Pick { first, second, tie };

/// Reads `WINNER: A|B|TIE`; anything else is a tie.
Pick parse_verdict(std::string_view response);

/// Two agreeing swapped verdicts give that outcome; disagreement gives a tie.
Outcome combine_verdicts(Pick with_a_first, Pick with_b_first);

/// Position-swapped pairwise judge over the "judge" role.
class PairwiseJudge {
public:
    PairwiseJudge(gateway::ModelGateway& gateway, std::string goal_text);

    /// Judges both presentation orders. Throws RetryableError / ProtocolError from the gateway.
    MatchRecord compare(const ideas::Idea& a, const ideas::Idea& b);

    std::string prompt(const ideas::Idea& first, const ideas::Idea& second) const;

private:
    gateway::ModelGateway& gateway_;
    std::string goal_text_;
};

struct TournamentOptions {
    EloConfig elo;
    std::size_t workers = 3;
};

/// Round-robin Elo tournament. Matches are judged concurrently; ratings are updated in schedule
/// order. Throws ValidationError with fewer than 2 ideas or duplicate ids.
TournamentResult run_tournament(gateway::ModelGateway& gateway, const ideas::UserGoal& goal,
                                const std::vector<std::pair<ideas::Idea, ideas::ReviewFeedback>>& ideas,
                                const TournamentOptions& options = {});

/// Ids by descending rating, then fewer games, then id. Throws ValidationError when k > size.
std::vector<std::string> select_top(const std::vector<EloRating>& ratings, std::size_t k);

struct Proposal {
    std::string goal_id;
    std::string background;
    std::string related_work;
    std::string method;
    std::string experimental_plan;
    std::string expected_results;
    std::string source_idea_id;

    /// Markdown-ish rendering with the five section headings.
    std::string render() const;
};

void to_json(nlohmann::json& j, const Proposal& v);
void from_json(const nlohmann::json& j, Proposal& v);

/// Parses the five sections. Missing sections are listed in `missing` and left empty.
Proposal parse_proposal(std::string_view response, std::vector<std::string>& missing);

/// One generation call plus at most one repair call; FormatError when sections are still missing.
Proposal extend_to_proposal(gateway::ModelGateway& gateway, const ideas::UserGoal& goal, const ideas::Idea& top_idea,
                            const std::vector<ideas::LiteratureDoc>& literature);

}  // namespace evolab::tournament
