#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "recindial/seqmodel.hpp"
#include "recindial/vpdecode.hpp"

using namespace recindial;

namespace {

struct Fixture {
    Vocabulary vocab;
    TransformerLM lm;
    std::vector<double> bias;
    std::vector<TokenId> prefix;
};

Fixture make_fixture(std::size_t items, std::size_t words, std::size_t width) {
    std::vector<std::string> item_ids, base{"[UNK]"};
    for (std::size_t i = 0; i < items; ++i) item_ids.push_back(std::to_string(1000 + i));
    for (std::size_t i = 0; i < words; ++i) base.push_back("w" + std::to_string(i));
    Vocabulary v = Vocabulary::build(item_ids, base);
    ModelConfig c;
    c.layers = 2;
    c.heads = 4;
    c.width = width;
    c.ff_width = 4 * width;
    c.max_position = 256;
    c.general_size = v.general_size();
    c.item_partition_size = v.item_partition_size();
    std::mt19937_64 rng(7);
    TransformerLM lm(c, rng);
    std::vector<double> bias(v.item_partition_size());
    std::normal_distribution<double> nd;
    for (double& b : bias) b = nd(rng);
    std::vector<TokenId> prefix;
    for (int i = 0; i < 48; ++i) prefix.push_back(static_cast<TokenId>(5 + rng() % words));
    return {std::move(v), std::move(lm), std::move(bias), std::move(prefix)};
}

void BM_BeamGenerate(benchmark::State& state) {
    const auto f = make_fixture(500, 2000, 64);
    DecodeOptions o;
    o.beam_width = static_cast<std::size_t>(state.range(0));
    o.max_steps = 24;
    for (auto _ : state) benchmark::DoNotOptimize(beam_generate(f.prefix, f.lm, f.bias, f.vocab, o));
}
BENCHMARK(BM_BeamGenerate)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
    const auto f = make_fixture(500, 2000, 64);
    DecodeOptions o;
    o.max_steps = 24;
    for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(f.prefix, f.lm, f.bias, f.vocab, o));
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

void BM_MaskedDistribution(benchmark::State& state) {
    const auto f = make_fixture(static_cast<std::size_t>(state.range(0)), 20000, 16);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<double> logits(f.vocab.size());
    for (double& z : logits) z = nd(rng);
    GenerationState st;
    for (auto _ : state) benchmark::DoNotOptimize(next_log_probs(logits, f.bias, st, f.vocab, true));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.vocab.size()));
}
BENCHMARK(BM_MaskedDistribution)->Arg(1000)->Arg(6924);

void BM_ForwardLogits(benchmark::State& state) {
    const auto f = make_fixture(500, 2000, static_cast<std::size_t>(state.range(0)));
    std::vector<TokenId> seq(f.prefix);
    seq.resize(static_cast<std::size_t>(state.range(1)), 5);
    for (auto _ : state) benchmark::DoNotOptimize(f.lm.forward_logits(seq));
}
BENCHMARK(BM_ForwardLogits)->Args({64, 64})->Args({128, 256})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
