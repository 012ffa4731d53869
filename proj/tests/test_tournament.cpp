#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evolab/prompts.hpp"
#include "evolab/tournament.hpp"
#include "test_support.hpp"

using namespace evolab;
using namespace evolab::tournament;
using evolab::testing::make_gateway;
using evolab::testing::rule;
using gateway::ScriptedMock;
using ideas::Idea;
using ideas::ReviewFeedback;

namespace {

using IdeaList = std::vector<std::pair<Idea, ReviewFeedback>>;

IdeaList make_ideas(int n) {
    IdeaList out;
    for (int i = 0; i < n; ++i) {
        const auto id = "idea-" + std::to_string(i + 1);
        out.push_back({Idea{id, "approach q" + std::to_string(i) + "x", "plan", 0}, ReviewFeedback{id, "fine", {}}});
    }
    return out;
}

ScriptedMock::Rule regex_rule(std::string pattern, std::string response) {
    return ScriptedMock::Rule{ScriptedMock::MatchKind::regex, std::move(pattern), {std::move(response)}};
}

// Judge that prefers the idea with the higher quality number, in either position.
std::shared_ptr<ScriptedMock> ordered_judge(const std::vector<int>& quality, bool invert_labels = false) {
    std::vector<ScriptedMock::Rule> rules;
    for (std::size_t i = 0; i < quality.size(); ++i) {
        for (std::size_t j = 0; j < quality.size(); ++j) {
            if (i == j) {
                continue;
            }
            const bool first_better = quality[i] > quality[j];
            const bool say_a = first_better != invert_labels;
            rules.push_back(regex_rule("Idea A:\\nMETHOD: approach q" + std::to_string(i) +
                                           "x[\\s\\S]*Idea B:\\nMETHOD: approach q" + std::to_string(j) + "x",
                                       say_a ? "REASONING: clear\nWINNER: A" : "REASONING: clear\nWINNER: B"));
        }
    }
    return std::make_shared<ScriptedMock>(std::move(rules), "WINNER: TIE");
}

// Independent Elo replay: round robin over index pairs, scores from a callback.
std::vector<double> elo_oracle(std::size_t n, const std::function<double(std::size_t, std::size_t)>& score) {
    std::vector<double> r(n, 1500.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double e = 1.0 / (1.0 + std::pow(10.0, (r[j] - r[i]) / 400.0));
            const double s = score(i, j);
            r[i] += 32.0 * (s - e);
            r[j] += 32.0 * ((1.0 - s) - (1.0 - e));
        }
    }
    return r;
}

}  // namespace

TEST_CASE("a consistent winner moves ratings to 1516 and 1484") {
    auto gw = make_gateway(ordered_judge({2, 1}));
    const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(2));
    REQUIRE(result.matches.size() == 1);
    CHECK(result.matches[0].outcome == Outcome::a_wins);
    CHECK(result.ratings[0].rating == doctest::Approx(1516.0).epsilon(1e-12));
    CHECK(result.ratings[1].rating == doctest::Approx(1484.0).epsilon(1e-12));
    CHECK(result.ratings[0].games_played == 1);
    CHECK(gw.transcript().size() == 2);
}

TEST_CASE("disagreeing swapped verdicts are a tie") {
    // Always picks whichever idea is shown first.
    auto mock = std::make_shared<ScriptedMock>(std::vector<ScriptedMock::Rule>{}, "WINNER: A");
    auto gw = make_gateway(mock);
    const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(2));
    CHECK(result.matches[0].outcome == Outcome::tie);
    CHECK(result.ratings[0].rating == 1500.0);
    CHECK(result.ratings[1].rating == 1500.0);
    CHECK(result.matches[0].swapped_verdicts.first == "WINNER: A");
    CHECK(result.matches[0].swapped_verdicts.second == "WINNER: A");
}

TEST_CASE("strict total order judge yields the same ranking as a hand-rolled Elo replay") {
    const std::vector<int> quality{3, 6, 1, 5, 2, 4};
    auto gw = make_gateway(ordered_judge(quality));
    const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(6));
    CHECK(result.matches.size() == 15);
    CHECK(result.skipped.empty());

    const auto oracle = elo_oracle(6, [&](std::size_t i, std::size_t j) { return quality[i] > quality[j] ? 1.0 : 0.0; });
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(result.ratings[i].rating == doctest::Approx(oracle[i]).epsilon(1e-12));
        CHECK(result.ratings[i].games_played == 5);
    }
    std::vector<std::size_t> by_quality(6);
    std::iota(by_quality.begin(), by_quality.end(), 0);
    std::sort(by_quality.begin(), by_quality.end(), [&](auto a, auto b) { return quality[a] > quality[b]; });
    const auto top = select_top(result.ratings, 6);
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(top[r] == "idea-" + std::to_string(by_quality[r] + 1));
    }
}

TEST_CASE("ratings are conserved for any verdict sequence") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::string> seq;
        for (int i = 0; i < 200; ++i) {
            static const char* picks[] = {"WINNER: A", "WINNER: B", "WINNER: TIE", "no idea"};
            seq.push_back(picks[rng() % 4]);
        }
        auto mock = std::make_shared<ScriptedMock>(
            std::vector<ScriptedMock::Rule>{rule(std::string(prompts::kPairwiseJudge), seq)});
        auto gw = make_gateway(mock);
        const int n = 2 + static_cast<int>(rng() % 8);
        TournamentOptions opts;
        opts.workers = 1;
        const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(n), opts);
        double sum = 0;
        int games = 0;
        for (const auto& r : result.ratings) {
            sum += r.rating;
            games += r.games_played;
            CHECK(r.games_played == n - 1);
        }
        CHECK(sum == doctest::Approx(1500.0 * n).epsilon(1e-12));
        CHECK(games == n * (n - 1));
        // Replaying the recorded outcomes through the oracle reproduces every rating.
        std::size_t m = 0;
        const auto oracle = elo_oracle(n, [&](std::size_t, std::size_t) {
            const auto o = result.matches[m++].outcome;
            return o == Outcome::a_wins ? 1.0 : o == Outcome::b_wins ? 0.0 : 0.5;
        });
        for (int i = 0; i < n; ++i) {
            CHECK(result.ratings[i].rating == doctest::Approx(oracle[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("swapping presentation order mirrors the outcome") {
    const std::vector<int> quality{1, 2};
    auto ideas = make_ideas(2);
    for (const bool invert : {false, true}) {
        auto gw = make_gateway(ordered_judge(quality, invert));
        PairwiseJudge judge(gw, "goal");
        const auto ab = judge.compare(ideas[0].first, ideas[1].first);
        const auto ba = judge.compare(ideas[1].first, ideas[0].first);
        CHECK(ab.outcome == (invert ? Outcome::a_wins : Outcome::b_wins));
        CHECK(ba.outcome == (invert ? Outcome::b_wins : Outcome::a_wins));
    }
    CHECK(combine_verdicts(Pick::first, Pick::second) == Outcome::a_wins);
    CHECK(combine_verdicts(Pick::second, Pick::first) == Outcome::b_wins);
    CHECK(combine_verdicts(Pick::first, Pick::first) == Outcome::tie);
    CHECK(combine_verdicts(Pick::tie, Pick::second) == Outcome::tie);
}

TEST_CASE("relabelling ideas leaves the ranking unchanged") {
    const std::vector<int> quality{3, 6, 1, 5, 2, 4};
    auto forward = make_ideas(6);
    auto reversed = forward;
    std::reverse(reversed.begin(), reversed.end());
    auto gw1 = make_gateway(ordered_judge(quality));
    auto gw2 = make_gateway(ordered_judge(quality));
    const auto a = run_tournament(gw1, ideas::UserGoal::from_text("goal"), forward);
    const auto b = run_tournament(gw2, ideas::UserGoal::from_text("goal"), reversed);
    CHECK(select_top(a.ratings, 6) == select_top(b.ratings, 6));
}

TEST_CASE("verdict parsing") {
    CHECK(parse_verdict("REASONING: x\nWINNER: A") == Pick::first);
    CHECK(parse_verdict("**Winner:** Idea B.") == Pick::second);
    CHECK(parse_verdict("WINNER: tie") == Pick::tie);
    CHECK(parse_verdict("WINNER: AB") == Pick::tie);
    CHECK(parse_verdict("A is better") == Pick::tie);
}

TEST_CASE("judge failures skip the match and the tournament continues") {
    auto mock = std::make_shared<ScriptedMock>(std::vector<ScriptedMock::Rule>{
        ScriptedMock::Rule{ScriptedMock::MatchKind::regex, "Idea A:\\nMETHOD: approach q2x",
                           {std::string(ScriptedMock::kTransportErrorDirective)}},
    }, "WINNER: A");
    auto gw = make_gateway(mock, 2);
    const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(3));
    CHECK(result.skipped.size() == 2);
    CHECK(result.matches.size() == 1);
    CHECK(result.ratings[2].games_played == 0);
}

TEST_CASE("tournament preconditions") {
    auto gw = make_gateway(std::make_shared<ScriptedMock>());
    CHECK_THROWS_AS(run_tournament(gw, ideas::UserGoal::from_text("g"), make_ideas(1)), ValidationError);
    auto dup = make_ideas(2);
    dup[1].first.id = dup[0].first.id;
    CHECK_THROWS_AS(run_tournament(gw, ideas::UserGoal::from_text("g"), dup), ValidationError);
    CHECK(round_robin(21).size() == 210);
}

TEST_CASE("select_top ordering and tie-breaks") {
    const std::vector<EloRating> r{{"b", 1500, 2}, {"c", 1484, 2}, {"a", 1516, 2}};
    CHECK(select_top(r, 3) == std::vector<std::string>{"a", "b", "c"});
    CHECK(select_top({{"x", 1500, 0}}, 1) == std::vector<std::string>{"x"});
    CHECK(select_top({{"z", 1500, 1}, {"y", 1500, 1}}, 2) == std::vector<std::string>{"y", "z"});
    CHECK(select_top({{"z", 1500, 1}, {"y", 1500, 3}}, 1) == std::vector<std::string>{"z"});
    CHECK_THROWS_AS(select_top(r, 4), ValidationError);

    std::mt19937 rng(3);
    for (int t = 0; t < 50; ++t) {
        std::vector<EloRating> ratings;
        for (int i = 0; i < 8; ++i) {
            ratings.push_back({"i" + std::to_string(i), 1400.0 + static_cast<double>(rng() % 200), static_cast<int>(rng() % 3)});
        }
        auto scaled = ratings;
        const double a = 0.5 + (rng() % 100) / 10.0;
        const double b = static_cast<double>(rng() % 1000) - 500.0;
        for (auto& s : scaled) {
            s.rating = a * s.rating + b;
        }
        CHECK(select_top(ratings, 3) == select_top(scaled, 3));
    }
}

TEST_CASE("tournament artifact round-trips") {
    auto gw = make_gateway(ordered_judge({1, 3, 2}));
    const auto result = run_tournament(gw, ideas::UserGoal::from_text("goal"), make_ideas(3));
    const nlohmann::json j = result;
    CHECK(nlohmann::json(j.get<TournamentResult>()) == j);
    CHECK(j["matches"][0]["swapped_verdicts"].size() == 2);
}

namespace {

constexpr const char* kFullProposal =
    "BACKGROUND: bg\nRELATED WORK: rw\nMETHOD: m\nEXPERIMENTAL PLAN: ep\nEXPECTED RESULTS: er";
constexpr const char* kNoResults = "BACKGROUND: bg\nRELATED WORK: rw\nMETHOD: m\nEXPERIMENTAL PLAN: ep";

}  // namespace

TEST_CASE("proposal extension parses a well-formed answer") {
    auto mock = std::make_shared<ScriptedMock>(
        std::vector<ScriptedMock::Rule>{rule(std::string(prompts::kProposalExtend), {kFullProposal})});
    auto gw = make_gateway(mock);
    const auto goal = ideas::UserGoal::from_text("goal");
    const auto p = extend_to_proposal(gw, goal, make_ideas(1)[0].first, {});
    CHECK(p.background == "bg");
    CHECK(p.related_work == "rw");
    CHECK(p.method == "m");
    CHECK(p.experimental_plan == "ep");
    CHECK(p.expected_results == "er");
    CHECK(p.source_idea_id == "idea-1");
    CHECK(p.goal_id == goal.id);
    CHECK(gw.transcript().size() == 1);
}

TEST_CASE("proposal missing a section is repaired with exactly one extra call") {
    auto mock = std::make_shared<ScriptedMock>(
        std::vector<ScriptedMock::Rule>{rule(std::string(prompts::kProposalExtend), {kNoResults, kFullProposal})});
    auto gw = make_gateway(mock);
    const auto p = extend_to_proposal(gw, ideas::UserGoal::from_text("goal"), make_ideas(1)[0].first, {});
    CHECK(p.expected_results == "er");
    const auto entries = gw.transcript().entries();
    REQUIRE(entries.size() == 2);
    const auto second = gateway::chat_request_from_json(entries[1].request).concatenated_text();
    CHECK(second.find("EXPECTED RESULTS") != std::string::npos);
}

TEST_CASE("proposal missing a section twice is a format error") {
    auto mock = std::make_shared<ScriptedMock>(
        std::vector<ScriptedMock::Rule>{rule(std::string(prompts::kProposalExtend), {kNoResults})});
    auto gw = make_gateway(mock);
    CHECK_THROWS_AS(extend_to_proposal(gw, ideas::UserGoal::from_text("goal"), make_ideas(1)[0].first, {}), FormatError);
    CHECK(gw.transcript().size() == 2);
}
