#include <benchmark/benchmark.h>

#include <random>

#include "recindial/kgraph.hpp"

using namespace recindial;

namespace {

KnowledgeGraph random_graph(std::size_t entities, std::size_t relations, std::size_t triples, std::mt19937_64& rng) {
    std::vector<Triple> t;
    t.reserve(triples);
    for (std::size_t i = 0; i < triples; ++i) {
        t.push_back({static_cast<EntityId>(rng() % entities), static_cast<RelationId>(rng() % relations),
                     static_cast<EntityId>(rng() % entities)});
    }
    return KnowledgeGraph(entities, relations, std::move(t));
}

void BM_RgcnForward(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto kg = random_graph(n, 8, n * 6, rng);
    const auto p = KGParams::init(kg, KGShape{static_cast<std::size_t>(state.range(1)), 16, 2}, 16, rng);
    for (auto _ : state) benchmark::DoNotOptimize(rgcn_forward(kg, p));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RgcnForward)->Args({1000, 32})->Args({5000, 32})->Args({5000, 128})->Unit(benchmark::kMillisecond);

void BM_KnowledgeBias(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const std::size_t n = 2000;
    const auto kg = random_graph(n, 8, n * 6, rng);
    const auto p = KGParams::init(kg, KGShape{64, 32, 1}, 6000, rng);
    const Matrix H = rgcn_forward(kg, p);
    std::vector<EntityId> ents;
    for (std::int64_t i = 0; i < state.range(0); ++i) ents.push_back(static_cast<EntityId>(rng() % n));
    for (auto _ : state) benchmark::DoNotOptimize(knowledge_bias(ents, H, p));
}
BENCHMARK(BM_KnowledgeBias)->Arg(1)->Arg(8)->Arg(32);

}  // namespace
