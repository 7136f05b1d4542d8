#include <benchmark/benchmark.h>

// libbenchmark_main on some distributions ships LTO objects tied to one
// compiler build, so the entry point is compiled here instead.
BENCHMARK_MAIN();
