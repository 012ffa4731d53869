#include "evolab/memory.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_set>

#include <fmt/format.h>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/gateway.hpp"
#include "evolab/text.hpp"

namespace evolab::memory {

using nlohmann::json;

const char* to_string(Kind kind) {
    switch (kind) {
        case Kind::ideation_direction: return "ideation-direction";
        case Kind::ideation_failure: return "ideation-failure";
        case Kind::experiment_data_strategy: return "experiment-data-strategy";
        case Kind::experiment_training_strategy: return "experiment-training-strategy";
    }
    return "?";
}

const char* to_string(Source source) {
    switch (source) {
        case Source::ide: return "IDE";
        case Source::ive: return "IVE";
        case Source::ese: return "ESE";
    }
    return "?";
}

const char* to_string(StoreName store) {
    return store == StoreName::ideation ? "ideation" : "experimentation";
}

Kind kind_from_string(std::string_view s) {
    for (auto k : {Kind::ideation_direction, Kind::ideation_failure, Kind::experiment_data_strategy,
                   Kind::experiment_training_strategy}) {
        if (s == to_string(k)) {
            return k;
        }
    }
    throw ValidationError(fmt::format("unknown memory kind '{}'", s));
}

Source source_from_string(std::string_view s) {
    for (auto src : {Source::ide, Source::ive, Source::ese}) {
        if (s == to_string(src)) {
            return src;
        }
    }
    throw ValidationError(fmt::format("unknown memory source '{}'", s));
}

StoreName store_from_string(std::string_view s) {
    if (s == "ideation" || s == "M_I") return StoreName::ideation;
    if (s == "experimentation" || s == "M_E") return StoreName::experimentation;
    throw ValidationError(fmt::format("unknown memory store '{}'", s));
}

StoreName store_for(Kind kind) {
    return kind == Kind::ideation_direction || kind == Kind::ideation_failure ? StoreName::ideation
                                                                              : StoreName::experimentation;
}

const char* file_name(StoreName store) {
    return store == StoreName::ideation ? "ideation_memory.jsonl" : "experimentation_memory.jsonl";
}

json to_json(const MemoryItem& item) {
    return {{"id", item.id},
            {"kind", to_string(item.kind)},
            {"text", item.text},
            {"embedding", item.embedding},
            {"provenance", {{"run_id", item.provenance.run_id}, {"source", to_string(item.provenance.source)}}},
            {"created_at", item.created_at}};
}

MemoryItem memory_item_from_json(const json& j) {
    MemoryItem item;
    item.id = j.at("id").get<std::string>();
    item.kind = kind_from_string(j.at("kind").get<std::string>());
    item.text = j.at("text").get<std::string>();
    item.embedding = j.at("embedding").get<std::vector<double>>();
    item.provenance.run_id = j.at("provenance").at("run_id").get<std::string>();
    item.provenance.source = source_from_string(j.at("provenance").at("source").get<std::string>());
    item.created_at = j.at("created_at").get<std::string>();
    return item;
}

std::string RetrievedContext::render() const {
    std::string out;
    for (const auto& s : items) {
        out += fmt::format("- [{}] {}\n", to_string(s.item.kind), s.item.text);
    }
    return out;
}

json to_json(const RetrievedContext& ctx) {
    json items = json::array();
    for (const auto& s : ctx.items) {
        items.push_back({{"item", to_json(s.item)}, {"similarity", s.similarity}});
    }
    return {{"query_text", ctx.query_text}, {"items", std::move(items)}};
}

RetrievedContext retrieved_context_from_json(const json& j) {
    RetrievedContext ctx;
    ctx.query_text = j.at("query_text").get<std::string>();
    for (const auto& s : j.at("items")) {
        ctx.items.push_back({memory_item_from_json(s.at("item")), s.at("similarity").get<double>()});
    }
    return ctx;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------------------------

MemoryStore::MemoryStore(StoreName name, std::size_t dimension) : name_(name), dimension_(dimension) {}

MemoryStore::MemoryStore(const MemoryStore& other) : name_(other.name_) {
    std::shared_lock lock(other.mu_);
    dimension_ = other.dimension_;
    items_ = other.items_;
}

MemoryStore& MemoryStore::operator=(const MemoryStore& other) {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        name_ = other.name_;
        dimension_ = other.dimension_;
        items_ = other.items_;
    }
    return *this;
}

MemoryStore MemoryStore::load(StoreName name, const std::filesystem::path& path, std::size_t dimension) {
    MemoryStore store(name, dimension);
    if (!std::filesystem::exists(path)) {
        return store;
    }
    std::size_t line_no = 0;
    for (const auto& line : text::split_lines(fsio::read_file(path))) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        MemoryItem item;
        try {
            item = memory_item_from_json(json::parse(line));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
        } catch (const ValidationError& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
        }
        if (store.dimension_ == 0) {
            store.dimension_ = item.embedding.size();
        }
        try {
            store.validate(item, store.dimension_);
        } catch (const ValidationError& e) {
            throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()), line_no);
        }
        store.items_.push_back(std::move(item));
    }
    return store;
}

void MemoryStore::persist(const std::filesystem::path& path) const {
    std::shared_lock lock(mu_);
    std::string out;
    for (const auto& item : items_) {
        out += to_json(item).dump();
        out.push_back('\n');
    }
    fsio::write_file_atomic(path, out);
}

void MemoryStore::validate(const MemoryItem& item, std::size_t dimension) const {
    if (text::trim(item.text).empty()) {
        throw ValidationError("memory item text is empty");
    }
    if (item.id.empty()) {
        throw ValidationError("memory item id is empty");
    }
    if (store_for(item.kind) != name_) {
        throw ValidationError(fmt::format("memory item kind {} does not belong in the {} store",
                                          to_string(item.kind), to_string(name_)));
    }
    if (dimension != 0 && item.embedding.size() != dimension) {
        throw ConfigError(fmt::format("memory item embedding dimension {} does not match store dimension {}",
                                      item.embedding.size(), dimension));
    }
}

std::vector<ScoredItem> MemoryStore::top_k(std::span<const double> query, std::size_t k) const {
    if (k == 0) {
        throw ValidationError("retrieval k must be at least 1");
    }
    std::shared_lock lock(mu_);
    if (items_.empty()) {
        return {};
    }
    if (query.size() != dimension_) {
        throw ConfigError(
            fmt::format("query embedding dimension {} does not match store dimension {}", query.size(), dimension_));
    }
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
        scored.emplace_back(cosine_similarity(query, items_[i].embedding), i);
    }
    auto better = [&](const auto& x, const auto& y) {
        if (x.first != y.first) {
            return x.first > y.first;
        }
        const auto& a = items_[x.second];
        const auto& b = items_[y.second];
        if (a.created_at != b.created_at) {
            return a.created_at < b.created_at;
        }
        return a.id < b.id;
    };
    const std::size_t n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    std::vector<ScoredItem> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({items_[scored[i].second], scored[i].first});
    }
    return out;
}

std::vector<MemoryItem> MemoryStore::update(std::vector<MemoryItem> items) {
    std::unique_lock lock(mu_);
    std::size_t dimension = dimension_;
    for (const auto& item : items) {
        if (dimension == 0) {
            dimension = item.embedding.size();
        }
        validate(item, dimension);
    }
    std::unordered_set<std::string> seen;
    for (const auto& existing : items_) {
        seen.insert(text::normalize(existing.text));
    }
    std::vector<MemoryItem> inserted;
    for (auto& item : items) {
        if (!seen.insert(text::normalize(item.text)).second) {
            continue;
        }
        inserted.push_back(item);
        items_.push_back(std::move(item));
    }
    dimension_ = dimension;
    return inserted;
}

std::size_t MemoryStore::dimension() const {
    std::shared_lock lock(mu_);
    return dimension_;
}

std::size_t MemoryStore::size() const {
    std::shared_lock lock(mu_);
    return items_.size();
}

std::vector<MemoryItem> MemoryStore::items() const {
    std::shared_lock lock(mu_);
    return items_;
}

std::optional<MemoryItem> MemoryStore::find(std::string_view id) const {
    std::shared_lock lock(mu_);
    for (const auto& item : items_) {
        if (item.id == id) {
            return item;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------------------------

MemoryBank::MemoryBank(std::filesystem::path state_dir, gateway::ModelGateway& gateway)
    : state_dir_(std::move(state_dir)), gateway_(gateway) {
    std::error_code ec;
    std::filesystem::create_directories(state_dir_, ec);
    if (ec) {
        throw StorageError(fmt::format("cannot create state directory {}: {}", state_dir_.string(), ec.message()));
    }
}

std::filesystem::path MemoryBank::path(StoreName store) const { return state_dir_ / file_name(store); }

MemoryStore MemoryBank::snapshot(StoreName store) const {
    fsio::FileLock lock(path(store), fsio::FileLock::Mode::shared);
    return MemoryStore::load(store, path(store), gateway_.expected_dimension());
}

RetrievedContext MemoryBank::retrieve(StoreName store, std::string_view query, std::size_t k) {
    if (k == 0) {
        throw ValidationError("retrieval k must be at least 1");
    }
    RetrievedContext ctx;
    ctx.query_text = std::string(query);
    const auto snap = snapshot(store);
    if (snap.size() == 0) {
        return ctx;
    }
    const auto query_vec = gateway_.embed(query);
    ctx.items = snap.top_k(query_vec.values(), k);
    return ctx;
}

std::size_t MemoryBank::update(StoreName store, std::vector<MemoryItem> items) {
    if (items.empty()) {
        return 0;
    }
    const auto file = path(store);
    fsio::FileLock lock(file, fsio::FileLock::Mode::exclusive);
    auto current = MemoryStore::load(store, file, gateway_.expected_dimension());
    const auto inserted = current.update(std::move(items));
    for (const auto& item : inserted) {
        fsio::append_line(file, to_json(item).dump());
    }
    return inserted.size();
}

MemoryItem MemoryBank::make_item(Kind kind, std::string text, Provenance provenance) {
    MemoryItem item;
    const auto prefix = store_for(kind) == StoreName::ideation ? "mi-" : "me-";
    item.id = prefix + text::short_hash(text::normalize(text), 16);
    item.kind = kind;
    item.embedding = gateway_.embed(text).release();
    item.text = std::move(text);
    item.provenance = std::move(provenance);
    item.created_at = text::utc_timestamp();
    return item;
}

}  // namespace evolab::memory
