#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evolab/errors.hpp"
#include "evolab/gateway.hpp"
#include "evolab/memory.hpp"

namespace evolab::ideas {

struct UserGoal {
    std::string id;
    std::string text;

    /// id derived from the text hash; throws ValidationError on empty text.
    static UserGoal from_text(std::string text);
};

struct LiteratureDoc {
    std::string title;
    std::string abstract;
    int year = 0;
    std::string source_id;
};

struct Idea {
    std::string id;
    std::string method_description;
    std::string experimental_plan;
    int depth = 0;

    /// "METHOD: ...\nPLAN: ..." block used inside prompts.
    std::string render() const;
};

inline constexpr std::array<std::string_view, 4> kReviewDimensions{"novelty", "feasibility", "relevance", "clarity"};

struct ReviewFeedback {
    std::string idea_id;
    std::string critique;
    std::map<std::string, std::string> dimension_notes;

    std::string render() const;
};

struct IdeaNode {
    Idea idea;
    std::optional<ReviewFeedback> review;
    std::optional<std::string> parent_id;
    std::vector<std::string> child_ids;
};

void to_json(nlohmann::json& j, const UserGoal& v);
void from_json(const nlohmann::json& j, UserGoal& v);
void to_json(nlohmann::json& j, const LiteratureDoc& v);
void from_json(const nlohmann::json& j, LiteratureDoc& v);
void to_json(nlohmann::json& j, const Idea& v);
void from_json(const nlohmann::json& j, Idea& v);
void to_json(nlohmann::json& j, const ReviewFeedback& v);
void from_json(const nlohmann::json& j, ReviewFeedback& v);
void to_json(nlohmann::json& j, const IdeaNode& v);
void from_json(const nlohmann::json& j, IdeaNode& v);

// ---------------------------------------------------------------------------------------------
// Literature

class LiteratureProvider {
public:
    virtual ~LiteratureProvider() = default;
    virtual std::vector<LiteratureDoc> search(const UserGoal& goal, std::size_t limit) = 0;
};

/// Canned documents, returned in file order regardless of the goal.
class FixtureLiteratureProvider : public LiteratureProvider {
public:
    explicit FixtureLiteratureProvider(std::vector<LiteratureDoc> docs);
    /// JSON array of LiteratureDoc objects.
    static FixtureLiteratureProvider from_file(const std::filesystem::path& path);

    std::vector<LiteratureDoc> search(const UserGoal& goal, std::size_t limit) override;

private:
    std::vector<LiteratureDoc> docs_;
};

struct SemanticScholarConfig {
    std::string search_url = "https://api.semanticscholar.org/graph/v1/paper/search";
    std::string api_key_env = "S2_API_KEY";
    int timeout_seconds = 30;
    gateway::RetryPolicy retry;
};

class SemanticScholarProvider : public LiteratureProvider {
public:
    explicit SemanticScholarProvider(SemanticScholarConfig config);
    std::vector<LiteratureDoc> search(const UserGoal& goal, std::size_t limit) override;

private:
    SemanticScholarConfig config_;
};

/// Throws ValidationError on limit 0; zero results is an empty list.
std::vector<LiteratureDoc> fetch_literature(LiteratureProvider& provider, const UserGoal& goal, std::size_t limit);

/// One line per doc: "title: first 50 words of the abstract".
std::string literature_digest(const std::vector<LiteratureDoc>& docs, std::size_t limit = 10);

// ---------------------------------------------------------------------------------------------
// Tree search

struct TreeShape {
    std::size_t roots = 3;
    std::size_t branching = 3;
    int max_depth = 2;
};

struct IdeaSearchOptions {
    /// Maximum number of generated ideas; one whose review fails still counts.
    std::size_t budget = 21;
    TreeShape shape;
    std::size_t workers = 3;
    std::size_t digest_limit = 10;
    /// Longer goals are truncated with a warning.
    std::size_t max_goal_chars = 4000;
};

struct IdeaTree {
    /// Every node created, in creation (breadth-first) order.
    std::vector<IdeaNode> nodes;

    std::vector<std::pair<Idea, ReviewFeedback>> reviewed_pairs() const;
    const IdeaNode* find(std::string_view id) const;
};

void to_json(nlohmann::json& j, const IdeaTree& v);
void from_json(const nlohmann::json& j, IdeaTree& v);

/// No idea survived generation and review. Carries whatever was built.
class SearchError : public Error {
public:
    SearchError(const std::string& message, IdeaTree partial)
        : Error(ErrorCategory::search, message), partial_(std::move(partial)) {}

    const IdeaTree& partial_tree() const noexcept { return partial_; }

private:
    IdeaTree partial_;
};

/// Propose-review-refine search. Roots are proposed independently; each reviewed node at depth
/// < max_depth spawns `branching` refinement slots whose prompts carry the node's critique.
/// Slots are consumed breadth-first in batches no larger than the remaining budget, so the
/// result never exceeds the budget and does not depend on the worker count.
class IdeaTreeSearch {
public:
    IdeaTreeSearch(gateway::ModelGateway& gateway, IdeaSearchOptions options);

    IdeaTree run(const UserGoal& goal, const std::vector<LiteratureDoc>& literature,
                 const memory::RetrievedContext& context);

private:
    struct Slot {
        std::optional<std::size_t> parent;  // index into nodes
        std::size_t sibling_index = 0;
        int depth = 0;
    };

    std::optional<Idea> generate(const Slot& slot, const IdeaTree& tree, const std::string& shared_context);
    std::optional<ReviewFeedback> review(const Idea& idea);

    gateway::ModelGateway& gateway_;
    IdeaSearchOptions options_;
    std::string goal_text_;
};

/// Parses `METHOD:` / `PLAN:`; nullopt when either is missing or empty.
std::optional<Idea> parse_idea(std::string_view response);
/// Parses `CRITIQUE:` and the four dimension markers. Without a CRITIQUE marker the whole text is
/// the critique. nullopt on an empty response.
std::optional<ReviewFeedback> parse_review(std::string_view response);

}  // namespace evolab::ideas
