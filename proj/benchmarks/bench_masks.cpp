#include "region_styler/image.hpp"
#include "region_styler/util.hpp"

#include <benchmark/benchmark.h>

using namespace region_styler;

namespace {

LabelMask speckle(std::size_t size, std::size_t labels) {
    SeededRng rng(9);
    std::vector<std::int64_t> raw(size * size);
    for (auto& v : raw) v = static_cast<std::int64_t>(rng.index(labels));
    return LabelMask::from_raw(size, size, raw);
}

void BM_SplitLabel(benchmark::State& state) {
    const auto mask = speckle(static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(split_label(mask, 1));
}
BENCHMARK(BM_SplitLabel)->Arg(64)->Arg(256)->Arg(512);

void BM_MergeLabels(benchmark::State& state) {
    const auto mask = speckle(static_cast<std::size_t>(state.range(0)), 6);
    for (auto _ : state) benchmark::DoNotOptimize(merge_labels(mask, {2, 3, 5}, 3));
}
BENCHMARK(BM_MergeLabels)->Arg(64)->Arg(256)->Arg(512);

}  // namespace
