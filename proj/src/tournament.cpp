#include "evolab/tournament.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "evolab/parallel.hpp"
#include "evolab/prompts.hpp"
#include "evolab/text.hpp"

namespace evolab::tournament {

using nlohmann::json;

double expected_score(double ra, double rb) { return 1.0 / (1.0 + std::pow(10.0, (rb - ra) / 400.0)); }

const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::a_wins: return "a-wins";
        case Outcome::b_wins: return "b-wins";
        case Outcome::tie: return "tie";
    }
    return "tie";
}

Outcome outcome_from_string(std::string_view s) {
    if (s == "a-wins") return Outcome::a_wins;
    if (s == "b-wins") return Outcome::b_wins;
    if (s == "tie") return Outcome::tie;
    throw ParseError(fmt::format("unknown match outcome '{}'", s));
}

void to_json(json& j, const EloRating& v) {
    j = {{"idea_id", v.idea_id}, {"rating", v.rating}, {"games_played", v.games_played}};
}

void from_json(const json& j, EloRating& v) {
    v.idea_id = j.at("idea_id").get<std::string>();
    v.rating = j.at("rating").get<double>();
    v.games_played = j.at("games_played").get<int>();
}

void to_json(json& j, const MatchRecord& v) {
    j = {{"idea_a", v.idea_a},
         {"idea_b", v.idea_b},
         {"outcome", to_string(v.outcome)},
         {"swapped_verdicts", {v.swapped_verdicts.first, v.swapped_verdicts.second}}};
}

void from_json(const json& j, MatchRecord& v) {
    v.idea_a = j.at("idea_a").get<std::string>();
    v.idea_b = j.at("idea_b").get<std::string>();
    v.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    const auto& sv = j.at("swapped_verdicts");
    v.swapped_verdicts = {sv.at(0).get<std::string>(), sv.at(1).get<std::string>()};
}

void to_json(json& j, const TournamentResult& v) {
    json skipped = json::array();
    for (const auto& [a, b] : v.skipped) {
        skipped.push_back({a, b});
    }
    j = {{"ratings", v.ratings}, {"matches", v.matches}, {"skipped", skipped}};
}

void from_json(const json& j, TournamentResult& v) {
    v.ratings = j.at("ratings").get<std::vector<EloRating>>();
    v.matches = j.at("matches").get<std::vector<MatchRecord>>();
    v.skipped.clear();
    for (const auto& p : j.value("skipped", json::array())) {
        v.skipped.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
}

void apply_elo(EloRating& a, EloRating& b, double score_a, const EloConfig& cfg) {
    const double ea = expected_score(a.rating, b.rating);
    const double delta = cfg.k_factor * (score_a - ea);
    a.rating += delta;
    b.rating -= delta;
    ++a.games_played;
    ++b.games_played;
}

std::vector<std::pair<std::size_t, std::size_t>> round_robin(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            out.emplace_back(i, j);
        }
    }
    return out;
}

Pick parse_verdict(std::string_view response) {
    static constexpr std::array<std::string_view, 1> markers{"WINNER"};
    const auto value = text::first_section(text::parse_sections(response, markers), "WINNER");
    std::string token;
    for (const char c : value) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        } else if (!token.empty() && token != "IDEA") {
            break;
        } else if (token == "IDEA") {
            token.clear();
        }
    }
    if (token == "A") return Pick::first;
    if (token == "B") return Pick::second;
    return Pick::tie;
}

Outcome combine_verdicts(Pick with_a_first, Pick with_b_first) {
    auto as_outcome = [](Pick p, bool a_shown_first) {
        if (p == Pick::tie) {
            return Outcome::tie;
        }
        const bool first = p == Pick::first;
        return first == a_shown_first ? Outcome::a_wins : Outcome::b_wins;
    };
    const auto o1 = as_outcome(with_a_first, true);
    const auto o2 = as_outcome(with_b_first, false);
    return o1 == o2 ? o1 : Outcome::tie;
}

PairwiseJudge::PairwiseJudge(gateway::ModelGateway& gateway, std::string goal_text)
    : gateway_(gateway), goal_text_(std::move(goal_text)) {}

std::string PairwiseJudge::prompt(const ideas::Idea& first, const ideas::Idea& second) const {
    return fmt::format(
        "{}\nResearch goal:\n{}\n\nIdea A:\n{}\n\nIdea B:\n{}\n\n"
        "Compare the two ideas on novelty, feasibility, relevance to the goal and clarity, and decide which one "
        "is better overall.\n\nAnswer with exactly these sections:\nREASONING: <short comparison>\n"
        "WINNER: <A, B or TIE>\n",
        prompts::kPairwiseJudge, goal_text_.empty() ? "(not given)" : goal_text_, first.render(), second.render());
}

MatchRecord PairwiseJudge::compare(const ideas::Idea& a, const ideas::Idea& b) {
    const auto system = std::string(prompts::kJudgeSystem);
    const auto r1 = gateway_.generate("judge", system, prompt(a, b)).text;
    const auto r2 = gateway_.generate("judge", system, prompt(b, a)).text;
    MatchRecord rec;
    rec.idea_a = a.id;
    rec.idea_b = b.id;
    rec.outcome = combine_verdicts(parse_verdict(r1), parse_verdict(r2));
    rec.swapped_verdicts = {r1, r2};
    return rec;
}

TournamentResult run_tournament(gateway::ModelGateway& gateway, const ideas::UserGoal& goal,
                                const std::vector<std::pair<ideas::Idea, ideas::ReviewFeedback>>& ideas,
                                const TournamentOptions& options) {
    if (ideas.size() < 2) {
        throw ValidationError(fmt::format("a tournament needs at least 2 ideas, got {}", ideas.size()));
    }
    std::set<std::string> ids;
    for (const auto& [idea, _] : ideas) {
        if (!ids.insert(idea.id).second) {
            throw ValidationError(fmt::format("duplicate idea id '{}' in tournament", idea.id));
        }
    }

    PairwiseJudge judge(gateway, goal.text);
    const auto schedule = round_robin(ideas.size());
    spdlog::info("tournament: {} ideas, {} matches", ideas.size(), schedule.size());

    auto verdicts = parallel_map(schedule.size(), options.workers, [&](std::size_t m) -> std::optional<MatchRecord> {
        const auto& [i, j] = schedule[m];
        try {
            return judge.compare(ideas[i].first, ideas[j].first);
        } catch (const RetryableError& e) {
            spdlog::warn("match {} vs {} skipped: {}", ideas[i].first.id, ideas[j].first.id, e.what());
        } catch (const ProtocolError& e) {
            spdlog::warn("match {} vs {} skipped: {}", ideas[i].first.id, ideas[j].first.id, e.what());
        }
        return std::nullopt;
    });

    TournamentResult result;
    for (const auto& [idea, _] : ideas) {
        result.ratings.push_back(EloRating{idea.id, options.elo.initial_rating, 0});
    }
    for (std::size_t m = 0; m < schedule.size(); ++m) {
        const auto& [i, j] = schedule[m];
        if (!verdicts[m]) {
            result.skipped.emplace_back(ideas[i].first.id, ideas[j].first.id);
            continue;
        }
        const double score = verdicts[m]->outcome == Outcome::a_wins   ? 1.0
                             : verdicts[m]->outcome == Outcome::b_wins ? 0.0
                                                                       : 0.5;
        apply_elo(result.ratings[i], result.ratings[j], score, options.elo);
        result.matches.push_back(std::move(*verdicts[m]));
    }
    return result;
}

std::vector<std::string> select_top(const std::vector<EloRating>& ratings, std::size_t k) {
    if (k > ratings.size()) {
        throw ValidationError(fmt::format("cannot select top {} of {} ratings", k, ratings.size()));
    }
    auto sorted = ratings;
    std::sort(sorted.begin(), sorted.end(), [](const EloRating& a, const EloRating& b) {
        if (a.rating != b.rating) return a.rating > b.rating;
        if (a.games_played != b.games_played) return a.games_played < b.games_played;
        return a.idea_id < b.idea_id;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(sorted[i].idea_id);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Proposal

namespace {

constexpr std::array<std::string_view, 5> kProposalMarkers{"BACKGROUND", "RELATED WORK", "METHOD", "EXPERIMENTAL PLAN",
                                                           "EXPECTED RESULTS"};

}  // namespace

std::string Proposal::render() const {
    return fmt::format("BACKGROUND: {}\nRELATED WORK: {}\nMETHOD: {}\nEXPERIMENTAL PLAN: {}\nEXPECTED RESULTS: {}",
                       background, related_work, method, experimental_plan, expected_results);
}

void to_json(json& j, const Proposal& v) {
    j = {{"goal_id", v.goal_id},
         {"background", v.background},
         {"related_work", v.related_work},
         {"method", v.method},
         {"experimental_plan", v.experimental_plan},
         {"expected_results", v.expected_results},
         {"source_idea_id", v.source_idea_id}};
}

void from_json(const json& j, Proposal& v) {
    v.goal_id = j.at("goal_id").get<std::string>();
    v.background = j.at("background").get<std::string>();
    v.related_work = j.at("related_work").get<std::string>();
    v.method = j.at("method").get<std::string>();
    v.experimental_plan = j.at("experimental_plan").get<std::string>();
    v.expected_results = j.at("expected_results").get<std::string>();
    v.source_idea_id = j.at("source_idea_id").get<std::string>();
}

Proposal parse_proposal(std::string_view response, std::vector<std::string>& missing) {
    const auto sections = text::parse_sections(response, kProposalMarkers);
    Proposal p;
    std::array<std::string*, 5> fields{&p.background, &p.related_work, &p.method, &p.experimental_plan,
                                       &p.expected_results};
    missing.clear();
    for (std::size_t i = 0; i < kProposalMarkers.size(); ++i) {
        *fields[i] = text::first_section(sections, kProposalMarkers[i]);
        if (fields[i]->empty()) {
            missing.emplace_back(kProposalMarkers[i]);
        }
    }
    return p;
}

Proposal extend_to_proposal(gateway::ModelGateway& gateway, const ideas::UserGoal& goal, const ideas::Idea& top_idea,
                            const std::vector<ideas::LiteratureDoc>& literature) {
    const auto digest = ideas::literature_digest(literature);
    const auto prompt = fmt::format(
        "{}\nResearch goal:\n{}\n\nSelected idea ({}):\n{}\n\nRelevant literature:\n{}\n"
        "Extend the selected idea into a complete research proposal.\n\nAnswer with exactly these sections:\n"
        "BACKGROUND: <problem context and motivation>\nRELATED WORK: <how it relates to the literature>\n"
        "METHOD: <detailed method>\nEXPERIMENTAL PLAN: <datasets, baselines, metrics, ablations>\n"
        "EXPECTED RESULTS: <what outcome would confirm the idea>\n",
        prompts::kProposalExtend, goal.text, top_idea.id, top_idea.render(), digest.empty() ? "(none retrieved)\n" : digest);
    const auto system = std::string(prompts::kResearcherSystem);

    std::vector<std::string> missing;
    auto response = gateway.generate("researcher", system, prompt).text;
    auto proposal = parse_proposal(response, missing);
    if (!missing.empty()) {
        spdlog::warn("proposal is missing sections ({}); asking once for a repair", fmt::join(missing, ", "));
        response = gateway.generate("researcher", system,
                                    prompt + prompts::repair_suffix(fmt::format("{}", fmt::join(missing, ", ")), response))
                       .text;
        proposal = parse_proposal(response, missing);
        if (!missing.empty()) {
            throw FormatError(fmt::format("proposal still missing sections after repair: {}", fmt::join(missing, ", ")));
        }
    }
    proposal.goal_id = goal.id;
    proposal.source_idea_id = top_idea.id;
    return proposal;
}

}  // namespace evolab::tournament
