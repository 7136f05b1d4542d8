#include "region_styler/encoders.hpp"
#include "region_styler/losses.hpp"
#include "region_styler/util.hpp"

#include <benchmark/benchmark.h>

using namespace region_styler;

namespace {

ImageTensor noise(std::size_t size, std::uint64_t seed) {
    SeededRng rng(seed);
    ImageTensor out(3, size, size);
    for (auto& v : out.data()) v = rng.uniform();
    return out;
}

LabelMask quarters(std::size_t size) {
    std::vector<std::int64_t> raw(size * size);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = (i / size < size / 2 ? 0 : 2) + ((i % size) < size / 2 ? 1 : 2);
    return LabelMask::from_raw(size, size, raw);
}

const std::vector<RegionSpec> kRegions{{1, "fire", 1.0}, {2, "snowy winter", 1.0}, {3, "oil painting", 0.5}};

void BM_MockImageEmbedding(benchmark::State& state) {
    const MockEncoder enc;
    const auto img = noise(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) benchmark::DoNotOptimize(enc.embed_image(img));
}
BENCHMARK(BM_MockImageEmbedding)->Arg(16)->Arg(64)->Arg(256);

void BM_MockTextEmbedding(benchmark::State& state) {
    const MockEncoder enc;
    for (auto _ : state) benchmark::DoNotOptimize(enc.embed_text("a gothic cathedral under a stormy sky"));
}
BENCHMARK(BM_MockTextEmbedding);

void BM_ObjectiveValue(benchmark::State& state) {
    const auto size = static_cast<std::size_t>(state.range(0));
    const MockEncoder enc;
    const StyleObjective objective(enc, noise(size, 1), quarters(size), kRegions, LossConfig{});
    const auto y = noise(size, 2);
    for (auto _ : state) benchmark::DoNotOptimize(objective.evaluate(y));
}
BENCHMARK(BM_ObjectiveValue)->Arg(16)->Arg(64)->Arg(256);

void BM_ObjectiveGradient(benchmark::State& state) {
    const auto size = static_cast<std::size_t>(state.range(0));
    const MockEncoder enc;
    const StyleObjective objective(enc, noise(size, 1), quarters(size), kRegions, LossConfig{});
    const auto y = noise(size, 2);
    ImageTensor grad;
    for (auto _ : state) benchmark::DoNotOptimize(objective.evaluate(y, &grad));
}
BENCHMARK(BM_ObjectiveGradient)->Arg(16)->Arg(64)->Arg(256);

void BM_TotalVariation(benchmark::State& state) {
    const auto y = noise(static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(tv_loss(y));
}
BENCHMARK(BM_TotalVariation)->Arg(64)->Arg(256);

}  // namespace
