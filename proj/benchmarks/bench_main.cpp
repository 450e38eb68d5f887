#include <random>

#include <benchmark/benchmark.h>

#include "ltg/agm.hpp"
#include "ltg/alm.hpp"
#include "ltg/geometry.hpp"
#include "ltg/preprocess.hpp"

namespace {

using namespace ltg;

BBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 0.5);
  const double x = u(rng), y = u(rng);
  return BBox{x, y, x + u(rng), y + u(rng)};
}

void BM_Giou(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<BBox> boxes;
  for (int i = 0; i < 1024; ++i) boxes.push_back(random_box(rng));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(giou(boxes[i % 1024], boxes[(i + 1) % 1024]));
    ++i;
  }
}
BENCHMARK(BM_Giou);

void BM_LocatorStep(benchmark::State& state) {
  const SceneInstance s = generate_instance(WorldConfig{}, 3, "bench");
  const AlmTargets t = build_targets(s.answer_tokens, s.tokens);
  AlmModel m(ModelConfig{}, AlmLossConfig{}, 1);
  for (auto _ : state) {
    m.params().zero_grad();
    benchmark::DoNotOptimize(m.accumulate(s, t).total);
  }
}
BENCHMARK(BM_LocatorStep)->Unit(benchmark::kMillisecond);

void BM_GeneratorDecode(benchmark::State& state) {
  const SceneInstance s = generate_instance(WorldConfig{}, 3, "bench");
  AgmModel m(AgmConfig{}, 1);
  const GenInput in = build_gen_input(s.question, s.answer_tokens, s.tokens, 96);
  DecodeConfig dc;
  dc.beam_size = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(m.decode(in, dc));
}
BENCHMARK(BM_GeneratorDecode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
