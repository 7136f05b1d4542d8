#include "region_styler/optimizer.hpp"
#include "region_styler/util.hpp"

#include <benchmark/benchmark.h>

using namespace region_styler;

namespace {

// Cost of a short stylization, reported per optimizer step.
void run(benchmark::State& state, const StateBackend& backend) {
    const auto size = static_cast<std::size_t>(state.range(0));
    SeededRng rng(1);
    ImageTensor x(3, size, size);
    for (auto& v : x.data()) v = rng.uniform(0.1, 0.9);
    std::vector<std::int64_t> raw(size * size);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = (i % size) < size / 2 ? 1 : 2;
    const auto mask = LabelMask::from_raw(size, size, raw);
    const MockEncoder enc;
    StylizationConfig config;
    config.steps = 20;
    config.early_stop_patience = config.steps;
    int steps = 0;
    for (auto _ : state) {
        steps += stylize(x, mask, {{1, "fire", 1.0}, {2, "snowy winter", 1.0}}, enc, backend, config).steps_run;
    }
    state.counters["steps"] = benchmark::Counter(steps, benchmark::Counter::kIsRate);
}

void BM_StylizeIdentity(benchmark::State& state) {
    static const IdentityStateBackend backend;
    run(state, backend);
}
BENCHMARK(BM_StylizeIdentity)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_StylizeAutoencoder(benchmark::State& state) {
    static const ConvAutoencoderBackend backend(fit_conv_autoencoder(AutoencoderFitOptions{}));
    run(state, backend);
}
BENCHMARK(BM_StylizeAutoencoder)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
