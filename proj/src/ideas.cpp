#include "evolab/ideas.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>

#include <httplib.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "evolab/fsio.hpp"
#include "evolab/parallel.hpp"
#include "evolab/prompts.hpp"
#include "evolab/text.hpp"
#include "http_util.hpp"

namespace evolab::ideas {

using nlohmann::json;

UserGoal UserGoal::from_text(std::string goal_text) {
    if (text::trim(goal_text).empty()) {
        throw ValidationError("goal text is empty");
    }
    UserGoal goal;
    goal.id = "goal-" + text::short_hash(text::normalize(goal_text), 12);
    goal.text = std::move(goal_text);
    return goal;
}

std::string Idea::render() const {
    return fmt::format("METHOD: {}\nPLAN: {}", method_description, experimental_plan);
}

std::string ReviewFeedback::render() const {
    std::string out = fmt::format("CRITIQUE: {}", critique);
    for (const auto& [dim, note] : dimension_notes) {
        out += fmt::format("\n{}: {}", dim, note);
    }
    return out;
}

void to_json(json& j, const UserGoal& v) { j = {{"id", v.id}, {"text", v.text}}; }

void from_json(const json& j, UserGoal& v) {
    v.id = j.at("id").get<std::string>();
    v.text = j.at("text").get<std::string>();
}

void to_json(json& j, const LiteratureDoc& v) {
    j = {{"title", v.title}, {"abstract", v.abstract}, {"year", v.year}, {"source_id", v.source_id}};
}

void from_json(const json& j, LiteratureDoc& v) {
    v.title = j.at("title").get<std::string>();
    v.abstract = j.value("abstract", std::string());
    v.year = j.value("year", 0);
    v.source_id = j.value("source_id", std::string());
}

void to_json(json& j, const Idea& v) {
    j = {{"id", v.id},
         {"method_description", v.method_description},
         {"experimental_plan", v.experimental_plan},
         {"depth", v.depth}};
}

void from_json(const json& j, Idea& v) {
    v.id = j.at("id").get<std::string>();
    v.method_description = j.at("method_description").get<std::string>();
    v.experimental_plan = j.at("experimental_plan").get<std::string>();
    v.depth = j.at("depth").get<int>();
}

void to_json(json& j, const ReviewFeedback& v) {
    j = {{"idea_id", v.idea_id}, {"critique", v.critique}, {"dimension_notes", v.dimension_notes}};
}

void from_json(const json& j, ReviewFeedback& v) {
    v.idea_id = j.at("idea_id").get<std::string>();
    v.critique = j.at("critique").get<std::string>();
    v.dimension_notes = j.value("dimension_notes", std::map<std::string, std::string>{});
}

void to_json(json& j, const IdeaNode& v) {
    j = {{"idea", v.idea},
         {"review", v.review ? json(*v.review) : json(nullptr)},
         {"parent_id", v.parent_id ? json(*v.parent_id) : json(nullptr)},
         {"child_ids", v.child_ids}};
}

void from_json(const json& j, IdeaNode& v) {
    v.idea = j.at("idea").get<Idea>();
    if (j.contains("review") && !j["review"].is_null()) {
        v.review = j["review"].get<ReviewFeedback>();
    }
    if (j.contains("parent_id") && !j["parent_id"].is_null()) {
        v.parent_id = j["parent_id"].get<std::string>();
    }
    v.child_ids = j.value("child_ids", std::vector<std::string>{});
}

void to_json(json& j, const IdeaTree& v) { j = {{"nodes", v.nodes}}; }

void from_json(const json& j, IdeaTree& v) { v.nodes = j.at("nodes").get<std::vector<IdeaNode>>(); }

std::vector<std::pair<Idea, ReviewFeedback>> IdeaTree::reviewed_pairs() const {
    std::vector<std::pair<Idea, ReviewFeedback>> out;
    for (const auto& node : nodes) {
        if (node.review) {
            out.emplace_back(node.idea, *node.review);
        }
    }
    return out;
}

const IdeaNode* IdeaTree::find(std::string_view id) const {
    for (const auto& node : nodes) {
        if (node.idea.id == id) {
            return &node;
        }
    }
    return nullptr;
}

// ---------------------------------------------------------------------------------------------
// Literature

FixtureLiteratureProvider::FixtureLiteratureProvider(std::vector<LiteratureDoc> docs) : docs_(std::move(docs)) {
    for (const auto& d : docs_) {
        if (text::trim(d.title).empty()) {
            throw ValidationError("literature fixture contains a document without a title");
        }
    }
}

FixtureLiteratureProvider FixtureLiteratureProvider::from_file(const std::filesystem::path& path) {
    const auto j = fsio::read_json(path);
    if (!j.is_array()) {
        throw ParseError(fmt::format("{}: literature fixture must be a JSON array", path.string()));
    }
    try {
        return FixtureLiteratureProvider(j.get<std::vector<LiteratureDoc>>());
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::vector<LiteratureDoc> FixtureLiteratureProvider::search(const UserGoal&, std::size_t limit) {
    const auto n = std::min(limit, docs_.size());
    return {docs_.begin(), docs_.begin() + static_cast<std::ptrdiff_t>(n)};
}

SemanticScholarProvider::SemanticScholarProvider(SemanticScholarConfig config) : config_(std::move(config)) {}

std::vector<LiteratureDoc> SemanticScholarProvider::search(const UserGoal& goal, std::size_t limit) {
    const auto target = detail::split_url(config_.search_url);
    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
            headers.emplace("x-api-key", key);
        }
    }
    const httplib::Params params{{"query", text::first_words(goal.text, 60)},
                                 {"limit", std::to_string(limit)},
                                 {"fields", "title,abstract,year"}};

    auto backoff = config_.retry.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        httplib::Client client(target.origin);
        client.set_connection_timeout(std::chrono::seconds(config_.timeout_seconds));
        client.set_read_timeout(std::chrono::seconds(config_.timeout_seconds));
        auto res = client.Get(target.path, params, headers);
        if (!res) {
            last_error = httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_error = fmt::format("HTTP {}", res->status);
        } else if (res->status != 200) {
            throw ProtocolError(fmt::format("literature search: HTTP {}", res->status));
        } else {
            try {
                const auto payload = json::parse(res->body);
                std::vector<LiteratureDoc> docs;
                for (const auto& p : payload.value("data", json::array())) {
                    LiteratureDoc doc;
                    doc.title = p.value("title", json()).is_string() ? p["title"].get<std::string>() : "";
                    if (text::trim(doc.title).empty()) {
                        continue;
                    }
                    doc.abstract = p.value("abstract", json()).is_string() ? p["abstract"].get<std::string>() : "";
                    doc.year = p.value("year", json()).is_number_integer() ? p["year"].get<int>() : 0;
                    doc.source_id = p.value("paperId", json()).is_string() ? p["paperId"].get<std::string>() : "";
                    docs.push_back(std::move(doc));
                }
                if (docs.size() > limit) {
                    docs.resize(limit);
                }
                return docs;
            } catch (const json::exception& e) {
                throw ProtocolError(fmt::format("literature search: malformed payload: {}", e.what()));
            }
        }
        spdlog::warn("literature search attempt {} failed: {}", attempt, last_error);
        if (attempt < config_.retry.max_attempts && backoff.count() > 0) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * config_.retry.multiplier));
        }
    }
    throw RetryableError(
        fmt::format("literature search failed after {} attempts: {}", config_.retry.max_attempts, last_error),
        config_.retry.max_attempts);
}

std::vector<LiteratureDoc> fetch_literature(LiteratureProvider& provider, const UserGoal& goal, std::size_t limit) {
    if (limit == 0) {
        throw ValidationError("literature limit must be positive");
    }
    auto docs = provider.search(goal, limit);
    if (docs.size() > limit) {
        docs.resize(limit);
    }
    return docs;
}

std::string literature_digest(const std::vector<LiteratureDoc>& docs, std::size_t limit) {
    std::string out;
    const auto n = std::min(limit, docs.size());
    for (std::size_t i = 0; i < n; ++i) {
        out += fmt::format("{}. {}: {}\n", i + 1, docs[i].title, text::first_words(docs[i].abstract, 50));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Parsing

std::optional<Idea> parse_idea(std::string_view response) {
    static constexpr std::array<std::string_view, 2> markers{"METHOD", "PLAN"};
    const auto sections = text::parse_sections(response, markers);
    Idea idea;
    idea.method_description = text::first_section(sections, "METHOD");
    idea.experimental_plan = text::first_section(sections, "PLAN");
    if (idea.method_description.empty() || idea.experimental_plan.empty()) {
        return std::nullopt;
    }
    return idea;
}

std::optional<ReviewFeedback> parse_review(std::string_view response) {
    static constexpr std::array<std::string_view, 5> markers{"CRITIQUE", "NOVELTY", "FEASIBILITY", "RELEVANCE",
                                                             "CLARITY"};
    const auto sections = text::parse_sections(response, markers);
    ReviewFeedback review;
    review.critique = text::first_section(sections, "CRITIQUE");
    if (review.critique.empty()) {
        review.critique = text::trim(response);
    }
    if (review.critique.empty()) {
        return std::nullopt;
    }
    for (const auto dim : kReviewDimensions) {
        std::string marker(dim);
        std::transform(marker.begin(), marker.end(), marker.begin(), [](unsigned char c) { return std::toupper(c); });
        if (auto note = text::first_section(sections, marker); !note.empty()) {
            review.dimension_notes[std::string(dim)] = std::move(note);
        }
    }
    return review;
}

// ---------------------------------------------------------------------------------------------
// Tree search

namespace {

std::string memory_block(const memory::RetrievedContext& ctx) {
    if (ctx.empty()) {
        return "(no earlier knowledge retrieved)\n";
    }
    return ctx.render();
}

}  // namespace

IdeaTreeSearch::IdeaTreeSearch(gateway::ModelGateway& gateway, IdeaSearchOptions options)
    : gateway_(gateway), options_(options) {
    if (options_.budget == 0) {
        throw ValidationError("idea budget must be positive");
    }
    if (options_.shape.roots == 0) {
        throw ValidationError("idea tree needs at least one root");
    }
}

std::optional<Idea> IdeaTreeSearch::generate(const Slot& slot, const IdeaTree& tree, const std::string& shared_context) {
    std::string prompt;
    if (!slot.parent) {
        prompt = fmt::format(
            "{}\n{}\nPropose candidate research idea {} of {}. Make it clearly different from the other "
            "candidates: vary the core mechanism, not only the wording. Reuse directions that worked before and "
            "avoid directions recorded as failures.\n\nAnswer with exactly these sections:\n"
            "METHOD: <brief method description>\nPLAN: <experimental plan: datasets, baselines, metrics>\n",
            prompts::kIdeaPropose, shared_context, slot.sibling_index + 1, options_.shape.roots);
    } else {
        const auto& parent = tree.nodes[*slot.parent];
        prompt = fmt::format(
            "{}\n{}\nParent idea ({}):\n{}\n\nReviewer critique of the parent idea:\n{}\n\n"
            "Write refined child idea {} of {}. It must address the critique directly while keeping what the "
            "reviewer valued.\n\nAnswer with exactly these sections:\n"
            "METHOD: <brief method description>\nPLAN: <experimental plan: datasets, baselines, metrics>\n",
            prompts::kIdeaRefine, shared_context, parent.idea.id, parent.idea.render(), parent.review->render(),
            slot.sibling_index + 1, options_.shape.branching);
    }
    try {
        const auto resp = gateway_.generate("researcher", std::string(prompts::kResearcherSystem), prompt);
        auto idea = parse_idea(resp.text);
        if (!idea) {
            spdlog::info("idea slot (depth {}, sibling {}) produced no parsable idea", slot.depth, slot.sibling_index);
        }
        return idea;
    } catch (const RetryableError& e) {
        spdlog::warn("idea generation failed: {}", e.what());
    } catch (const ProtocolError& e) {
        spdlog::warn("idea generation failed: {}", e.what());
    }
    return std::nullopt;
}

std::optional<ReviewFeedback> IdeaTreeSearch::review(const Idea& idea) {
    const auto prompt = fmt::format(
        "{}\nResearch goal:\n{}\n\nIdea {}:\n{}\n\nAssess the idea on novelty, feasibility, relevance to the goal and "
        "clarity, then give concrete suggestions for improving it.\n\nAnswer with exactly these sections:\n"
        "CRITIQUE: <overall critique and concrete suggestions>\nNOVELTY: <note>\nFEASIBILITY: <note>\n"
        "RELEVANCE: <note>\nCLARITY: <note>\n",
        prompts::kIdeaReview, goal_text_, idea.id, idea.render());
    try {
        const auto resp = gateway_.generate("reviewer", std::string(prompts::kReviewerSystem), prompt);
        auto parsed = parse_review(resp.text);
        if (parsed) {
            parsed->idea_id = idea.id;
        }
        return parsed;
    } catch (const RetryableError& e) {
        spdlog::warn("review of {} failed: {}", idea.id, e.what());
    } catch (const ProtocolError& e) {
        spdlog::warn("review of {} failed: {}", idea.id, e.what());
    }
    return std::nullopt;
}

IdeaTree IdeaTreeSearch::run(const UserGoal& goal, const std::vector<LiteratureDoc>& literature,
                             const memory::RetrievedContext& context) {
    goal_text_ = goal.text;
    if (goal_text_.size() > options_.max_goal_chars) {
        spdlog::warn("goal text has {} characters; truncating to {}", goal_text_.size(), options_.max_goal_chars);
        goal_text_.resize(options_.max_goal_chars);
    }
    const auto digest = literature_digest(literature, options_.digest_limit);
    const auto shared_context =
        fmt::format("Research goal:\n{}\n\nRelevant literature:\n{}\nKnowledge from earlier research runs "
                    "(directions that worked and directions that failed):\n{}",
                    goal_text_, digest.empty() ? "(none retrieved)\n" : digest, memory_block(context));

    IdeaTree tree;
    std::deque<Slot> queue;
    for (std::size_t i = 0; i < options_.shape.roots; ++i) {
        queue.push_back(Slot{std::nullopt, i, 0});
    }
    std::size_t reviewed = 0;

    // Every generated idea spends budget, reviewed or not.
    while (!queue.empty() && tree.nodes.size() < options_.budget) {
        const auto n = std::min(options_.budget - tree.nodes.size(), queue.size());
        std::vector<Slot> batch(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(n));
        queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(n));

        auto generated =
            parallel_map(batch.size(), options_.workers, [&](std::size_t i) { return generate(batch[i], tree, shared_context); });

        std::vector<std::size_t> fresh;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (!generated[i]) {
                continue;
            }
            IdeaNode node;
            node.idea = std::move(*generated[i]);
            node.idea.id = fmt::format("idea-{:02}", tree.nodes.size() + 1);
            node.idea.depth = batch[i].depth;
            if (batch[i].parent) {
                auto& parent = tree.nodes[*batch[i].parent];
                node.parent_id = parent.idea.id;
                parent.child_ids.push_back(node.idea.id);
            }
            fresh.push_back(tree.nodes.size());
            tree.nodes.push_back(std::move(node));
        }

        auto reviews = parallel_map(fresh.size(), options_.workers,
                                    [&](std::size_t i) { return review(tree.nodes[fresh[i]].idea); });
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            if (!reviews[i]) {
                continue;
            }
            auto& node = tree.nodes[fresh[i]];
            node.review = std::move(*reviews[i]);
            ++reviewed;
            if (node.idea.depth < options_.shape.max_depth) {
                for (std::size_t b = 0; b < options_.shape.branching; ++b) {
                    queue.push_back(Slot{fresh[i], b, node.idea.depth + 1});
                }
            }
        }
    }

    if (reviewed == 0) {
        throw SearchError("idea tree search produced no reviewed idea", std::move(tree));
    }
    return tree;
}

}  // namespace evolab::ideas
