#pragma once

#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace evolab::gateway {
class ModelGateway;
}

namespace evolab::memory {

enum class Kind {
    ideation_direction,
    ideation_failure,
    experiment_data_strategy,
    experiment_training_strategy,
};

enum class Source { ide, ive, ese };

/// M_I holds ideation kinds, M_E experiment kinds.
enum class StoreName { ideation, experimentation };

const char* to_string(Kind kind);
const char* to_string(Source source);
const char* to_string(StoreName store);
Kind kind_from_string(std::string_view s);
Source source_from_string(std::string_view s);
StoreName store_from_string(std::string_view s);

StoreName store_for(Kind kind);
const char* file_name(StoreName store);

struct Provenance {
    std::string run_id;
    Source source = Source::ide;

    bool operator==(const Provenance&) const = default;
};

struct MemoryItem {
    std::string id;
    Kind kind = Kind::ideation_direction;
    std::string text;
    std::vector<double> embedding;
    Provenance provenance;
    std::string created_at;

    bool operator==(const MemoryItem&) const = default;
};

nlohmann::json to_json(const MemoryItem& item);
MemoryItem memory_item_from_json(const nlohmann::json& j);

struct ScoredItem {
    MemoryItem item;
    double similarity = 0.0;
};

struct RetrievedContext {
    std::string query_text;
    std::vector<ScoredItem> items;

    bool empty() const noexcept { return items.empty(); }
    /// Bullet list of item texts for prompt injection; empty string when nothing was retrieved.
    std::string render() const;
};

nlohmann::json to_json(const RetrievedContext& ctx);
RetrievedContext retrieved_context_from_json(const nlohmann::json& j);

/// dot(a, b) / (|a| |b|); 0 when either vector is zero.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// In-memory store; thread-safe with many readers and one writer at a time.
class MemoryStore {
public:
    /// `dimension` 0 adopts the dimension of the first inserted item.
    explicit MemoryStore(StoreName name, std::size_t dimension = 0);

    MemoryStore(const MemoryStore& other);
    MemoryStore& operator=(const MemoryStore& other);

    /// Missing file → empty store. Throws ParseError naming the offending line.
    static MemoryStore load(StoreName name, const std::filesystem::path& path, std::size_t dimension = 0);
    void persist(const std::filesystem::path& path) const;

    /// The k items with the highest cosine similarity to `query`, most similar first. Ties go to
    /// the earlier created_at, then the smaller id.
    std::vector<ScoredItem> top_k(std::span<const double> query, std::size_t k) const;

    /// Appends items whose normalized text is new; returns the items actually inserted.
    /// Throws ValidationError on a kind that belongs to the other store or on empty text, and
    /// ConfigError on an embedding dimension mismatch. Nothing is inserted when any item is invalid.
    std::vector<MemoryItem> update(std::vector<MemoryItem> items);

    StoreName name() const noexcept { return name_; }
    std::size_t dimension() const;
    std::size_t size() const;
    std::vector<MemoryItem> items() const;
    std::optional<MemoryItem> find(std::string_view id) const;

private:
    void validate(const MemoryItem& item, std::size_t dimension) const;

    StoreName name_;
    std::size_t dimension_;
    std::vector<MemoryItem> items_;
    mutable std::shared_mutex mu_;
};

/// The two durable stores under a state directory, plus the embedder used to query them.
/// Updates take an exclusive file lock, reload the file, and append, so concurrent runs in
/// separate processes never lose each other's writes.
class MemoryBank {
public:
    MemoryBank(std::filesystem::path state_dir, gateway::ModelGateway& gateway);

    RetrievedContext retrieve(StoreName store, std::string_view query, std::size_t k);

    /// Durably appends; returns the number inserted (duplicates by normalized text skipped).
    std::size_t update(StoreName store, std::vector<MemoryItem> items);

    /// Embeds `text` and fills id (content hash) and created_at.
    MemoryItem make_item(Kind kind, std::string text, Provenance provenance);

    /// Fresh snapshot from disk.
    MemoryStore snapshot(StoreName store) const;

    std::filesystem::path path(StoreName store) const;

private:
    std::filesystem::path state_dir_;
    gateway::ModelGateway& gateway_;
};

}  // namespace evolab::memory
