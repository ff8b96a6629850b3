// Serial reference vs OpenMP macroblock kernels.

#include "dsv/kernels.hpp"
#include "dsv/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace dsv;
using kernels::Exec;

struct Setup {
  RawFrame src;
  RawFrame ref;
  std::vector<std::uint8_t> intra;
  std::vector<std::int32_t> symbols;
  kernels::MacroblockPlan plan;

  Setup(int w, int h) : src(w, h), ref(w, h) {
    Rng rng(5);
    for (auto* f : {&src, &ref}) {
      for (auto& v : f->luma()) v = static_cast<std::uint8_t>(rng.below(256));
      for (auto& v : f->chroma_u()) v = static_cast<std::uint8_t>(rng.below(256));
      for (auto& v : f->chroma_v()) v = static_cast<std::uint8_t>(rng.below(256));
    }
    plan.mb_rows = h / 16;
    plan.mb_cols = w / 16;
    intra.assign(static_cast<std::size_t>(plan.mb_rows * plan.mb_cols), 0);
    plan.intra = intra;
    symbols.resize(static_cast<std::size_t>(kernels::kChannels * plan.mb_rows * plan.mb_cols));
  }
};

void BM_Encode(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const Exec exec = state.range(2) ? Exec::Parallel : Exec::Serial;
  for (auto _ : state) {
    kernels::encode_macroblocks(s.src, &s.ref, s.plan, 8.0, 1023, s.symbols, exec);
    benchmark::DoNotOptimize(s.symbols.data());
  }
  state.SetItemsProcessed(state.iterations() * s.plan.mb_rows * s.plan.mb_cols);
}

void BM_Decode(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const Exec exec = state.range(2) ? Exec::Parallel : Exec::Serial;
  kernels::encode_macroblocks(s.src, &s.ref, s.plan, 8.0, 1023, s.symbols, Exec::Serial);
  RawFrame out(s.src.width(), s.src.height());
  for (auto _ : state) {
    kernels::decode_macroblocks(s.symbols, &s.ref, s.plan, 8.0, out, exec);
    benchmark::DoNotOptimize(out.luma().data());
  }
  state.SetItemsProcessed(state.iterations() * s.plan.mb_rows * s.plan.mb_cols);
}

// Args: width, height, parallel.
BENCHMARK(BM_Encode)->Args({640, 352, 0})->Args({640, 352, 1})->Args({1280, 720, 0})->Args({1280, 720, 1});
BENCHMARK(BM_Decode)->Args({640, 352, 0})->Args({640, 352, 1})->Args({1280, 720, 0})->Args({1280, 720, 1});

}  // namespace

BENCHMARK_MAIN();
