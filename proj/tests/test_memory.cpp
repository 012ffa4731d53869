#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include "evolab/errors.hpp"
#include "evolab/fsio.hpp"
#include "evolab/memory.hpp"
#include "evolab/text.hpp"
#include "test_support.hpp"

using namespace evolab;
using namespace evolab::memory;
using evolab::testing::make_gateway;
using evolab::testing::TempDir;

namespace {

MemoryItem random_item(std::mt19937_64& rng, std::size_t dim, std::size_t index, Kind kind = Kind::ideation_direction) {
    std::normal_distribution<double> normal;
    MemoryItem item;
    item.id = "item-" + std::to_string(index);
    item.kind = kind;
    item.text = "text number " + std::to_string(index);
    item.embedding.resize(dim);
    for (auto& v : item.embedding) {
        v = normal(rng);
    }
    item.provenance = {"run-x", Source::ide};
    // Coarse timestamps so that some items share created_at.
    item.created_at = "2026-01-01T00:00:" + std::to_string(10 + index % 7) + ".000000Z";
    return item;
}

// Independent oracle: score every item with a naive cosine, sort the whole list.
std::vector<std::string> brute_force_top_k(const std::vector<MemoryItem>& items, const std::vector<double>& q,
                                           std::size_t k) {
    struct Scored {
        double sim;
        const MemoryItem* item;
    };
    std::vector<Scored> all;
    for (const auto& it : items) {
        double dot = 0, nq = 0, ni = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            dot += q[i] * it.embedding[i];
            nq += q[i] * q[i];
            ni += it.embedding[i] * it.embedding[i];
        }
        all.push_back({dot / (std::sqrt(nq) * std::sqrt(ni)), &it});
    }
    std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        if (a.item->created_at != b.item->created_at) return a.item->created_at < b.item->created_at;
        return a.item->id < b.item->id;
    });
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
        ids.push_back(all[i].item->id);
    }
    return ids;
}

std::vector<std::string> ids_of(const std::vector<ScoredItem>& scored) {
    std::vector<std::string> ids;
    for (const auto& s : scored) {
        ids.push_back(s.item.id);
    }
    return ids;
}

}  // namespace

TEST_CASE("empty store retrieves nothing") {
    TempDir dir;
    auto mock = std::make_shared<gateway::ScriptedMock>();
    auto gw = make_gateway(mock);
    MemoryBank bank(dir.path(), gw);
    const auto ctx = bank.retrieve(StoreName::ideation, "any query", 2);
    CHECK(ctx.empty());
    CHECK(ctx.render().empty());
}

TEST_CASE("an item with the query's own text ranks first with similarity 1") {
    TempDir dir;
    auto mock = std::make_shared<gateway::ScriptedMock>();
    auto gw = make_gateway(mock);
    MemoryBank bank(dir.path(), gw);
    const std::vector<std::string> texts{
        "contrastive pretraining for tabular data", "sparse attention for long documents",
        "curriculum learning for reinforcement agents", "graph neural networks for molecules",
        "diffusion models for audio synthesis", "retrieval augmented code generation",
        "low rank adaptation of language models", "federated learning with noisy clients",
        "bayesian optimisation of hyperparameters", "self supervised speech representations"};
    std::vector<MemoryItem> items;
    for (const auto& t : texts) {
        items.push_back(bank.make_item(Kind::ideation_direction, t, {"run-a", Source::ide}));
    }
    REQUIRE(bank.update(StoreName::ideation, items) == 10);
    const auto ctx = bank.retrieve(StoreName::ideation, "graph neural networks for molecules", 2);
    REQUIRE(ctx.items.size() == 2);
    CHECK(ctx.items[0].item.text == "graph neural networks for molecules");
    CHECK(std::abs(ctx.items[0].similarity - 1.0) <= 1e-9);
    CHECK(ctx.items[0].similarity >= ctx.items[1].similarity);
}

TEST_CASE("top-k matches an exhaustive scan on 50 random items") {
    std::mt19937_64 rng(42);
    MemoryStore store(StoreName::ideation);
    std::vector<MemoryItem> items;
    for (std::size_t i = 0; i < 50; ++i) {
        items.push_back(random_item(rng, 16, i));
    }
    REQUIRE(store.update(items).size() == 50);
    std::normal_distribution<double> normal;
    std::vector<double> q(16);
    for (auto& v : q) v = normal(rng);
    CHECK(ids_of(store.top_k(q, 5)) == brute_force_top_k(items, q, 5));
}

TEST_CASE("top-k oracle property over random stores up to 10^4 items") {
    std::mt19937_64 rng(7);
    for (std::size_t n : {1u, 2u, 3u, 17u, 256u, 1000u, 10000u}) {
        MemoryStore store(StoreName::experimentation);
        std::vector<MemoryItem> items;
        for (std::size_t i = 0; i < n; ++i) {
            items.push_back(random_item(rng, 8, i, Kind::experiment_data_strategy));
        }
        store.update(items);
        std::normal_distribution<double> normal;
        for (int trial = 0; trial < 3; ++trial) {
            std::vector<double> q(8);
            for (auto& v : q) v = normal(rng);
            for (std::size_t k : {1u, 2u, 5u, 50u}) {
                CHECK(ids_of(store.top_k(q, k)) == brute_force_top_k(items, q, k));
            }
        }
    }
}

TEST_CASE("similarity ties break by created_at then id") {
    MemoryStore store(StoreName::ideation);
    auto make = [](std::string id, std::string created, std::string text) {
        return MemoryItem{std::move(id), Kind::ideation_direction, std::move(text), {1.0, 0.0},
                          {"r", Source::ide}, std::move(created)};
    };
    store.update({make("b", "2026-01-01T00:00:02.000000Z", "one"), make("c", "2026-01-01T00:00:01.000000Z", "two"),
                  make("a", "2026-01-01T00:00:02.000000Z", "three")});
    CHECK(ids_of(store.top_k(std::vector<double>{2.0, 0.0}, 3)) == std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("update appends distinct items and skips normalized duplicates") {
    MemoryStore store(StoreName::ideation);
    auto make = [](std::string id, std::string text) {
        return MemoryItem{std::move(id), Kind::ideation_direction, std::move(text), {1.0, 0.0}, {"r", Source::ide},
                          "2026-01-01T00:00:00.000000Z"};
    };
    CHECK(store.update({make("1", "alpha"), make("2", "beta"), make("3", "gamma")}).size() == 3);
    CHECK(store.size() == 3);

    MemoryStore other(StoreName::ideation);
    CHECK(other.update({make("x", "Same  Direction")}).size() == 1);
    CHECK(other.update({make("y", "same direction")}).size() == 0);
    CHECK(other.size() == 1);
    CHECK(other.update({make("p", "dup"), make("q", "DUP")}).size() == 1);
}

TEST_CASE("update rejects kinds that belong to the other store") {
    MemoryStore ideation(StoreName::ideation);
    MemoryItem item{"id", Kind::experiment_data_strategy, "text", {1.0}, {"r", Source::ese}, "t"};
    CHECK_THROWS_AS(ideation.update({item}), ValidationError);
    CHECK(ideation.size() == 0);

    MemoryStore experimentation(StoreName::experimentation);
    item.kind = Kind::ideation_failure;
    CHECK_THROWS_AS(experimentation.update({item}), ValidationError);

    item.kind = Kind::experiment_training_strategy;
    item.text = "   ";
    CHECK_THROWS_AS(experimentation.update({item}), ValidationError);
}

TEST_CASE("embedding dimension mismatch is a configuration error") {
    MemoryStore store(StoreName::ideation, 3);
    MemoryItem item{"id", Kind::ideation_direction, "text", {1.0, 0.0}, {"r", Source::ide}, "t"};
    CHECK_THROWS_AS(store.update({item}), ConfigError);
    item.embedding = {1.0, 0.0, 0.0};
    store.update({item});
    CHECK_THROWS_AS(store.top_k(std::vector<double>{1.0, 0.0}, 1), ConfigError);
}

TEST_CASE("persist then load reproduces the store exactly") {
    TempDir dir;
    std::mt19937_64 rng(99);
    MemoryStore store(StoreName::ideation);
    std::vector<MemoryItem> items;
    for (std::size_t i = 0; i < 20; ++i) {
        auto item = random_item(rng, 12, i, i % 2 ? Kind::ideation_failure : Kind::ideation_direction);
        item.text += "\nwith \"quotes\" and unicode é";
        items.push_back(item);
    }
    store.update(items);
    store.persist(dir / "m.jsonl");
    const auto loaded = MemoryStore::load(StoreName::ideation, dir / "m.jsonl");
    REQUIRE(loaded.size() == 20);
    const auto a = store.items();
    const auto b = loaded.items();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].text == b[i].text);
        REQUIRE(a[i].embedding.size() == b[i].embedding.size());
        for (std::size_t d = 0; d < a[i].embedding.size(); ++d) {
            CHECK(std::abs(a[i].embedding[d] - b[i].embedding[d]) <= 1e-12);
        }
    }
    CHECK(a == b);
}

TEST_CASE("loading empty and corrupt files") {
    TempDir dir;
    fsio::write_file_atomic(dir / "empty.jsonl", "");
    CHECK(MemoryStore::load(StoreName::ideation, dir / "empty.jsonl").size() == 0);
    CHECK(MemoryStore::load(StoreName::ideation, dir / "missing.jsonl").size() == 0);

    MemoryStore store(StoreName::ideation);
    std::mt19937_64 rng(1);
    store.update({random_item(rng, 4, 0), random_item(rng, 4, 1)});
    store.persist(dir / "m.jsonl");
    auto content = fsio::read_file(dir / "m.jsonl");
    content += R"({"id":"broken","kind":"ideation-direction","text":"tru)";
    content += "\n";
    fsio::write_file_atomic(dir / "m.jsonl", content);
    try {
        MemoryStore::load(StoreName::ideation, dir / "m.jsonl");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("bank updates are durable and shared across bank instances") {
    TempDir dir;
    auto mock = std::make_shared<gateway::ScriptedMock>();
    auto gw = make_gateway(mock);
    {
        MemoryBank bank(dir.path(), gw);
        auto a = bank.make_item(Kind::experiment_data_strategy, "normalise features per column", {"r1", Source::ese});
        auto b = bank.make_item(Kind::experiment_training_strategy, "cosine learning rate decay", {"r1", Source::ese});
        CHECK(bank.update(StoreName::experimentation, {a, b}) == 2);
        CHECK(bank.update(StoreName::experimentation, {a}) == 0);
        CHECK_THROWS_AS(bank.update(StoreName::ideation, {a}), ValidationError);
    }
    MemoryBank reopened(dir.path(), gw);
    CHECK(reopened.snapshot(StoreName::experimentation).size() == 2);
    CHECK(reopened.snapshot(StoreName::ideation).size() == 0);
    const auto ctx = reopened.retrieve(StoreName::experimentation, "learning rate schedule", 1);
    REQUIRE(ctx.items.size() == 1);
    CHECK(ctx.items[0].item.provenance.run_id == "r1");
}

TEST_CASE("concurrent writers through separate banks never lose items") {
    TempDir dir;
    auto mock = std::make_shared<gateway::ScriptedMock>();
    auto gw = make_gateway(mock);
    constexpr int kWriters = 4;
    constexpr int kItems = 10;
    {
        std::vector<std::jthread> writers;
        for (int w = 0; w < kWriters; ++w) {
            writers.emplace_back([&, w] {
                MemoryBank bank(dir.path(), gw);
                for (int i = 0; i < kItems; ++i) {
                    auto item = bank.make_item(Kind::ideation_direction,
                                               "writer " + std::to_string(w) + " item " + std::to_string(i),
                                               {"run-" + std::to_string(w), Source::ide});
                    bank.update(StoreName::ideation, {item});
                    // Everyone also tries to insert the shared item; only one copy may land.
                    bank.update(StoreName::ideation,
                                {bank.make_item(Kind::ideation_direction, "shared item", {"run", Source::ide})});
                }
            });
        }
    }
    MemoryBank bank(dir.path(), gw);
    CHECK(bank.snapshot(StoreName::ideation).size() == kWriters * kItems + 1);
}
