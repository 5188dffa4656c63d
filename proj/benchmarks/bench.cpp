#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "mvcl/contrastive.hpp"
#include "mvcl/model.hpp"
#include "mvcl/pipeline.hpp"
#include "mvcl/synthetic.hpp"
#include "mvcl/views.hpp"

namespace {

using namespace mvcl;

Tensor random_images(std::size_t n, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  Tensor t({n, 1, side, side});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

ProjectionBatch random_projections(std::size_t m, std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g(0.0, 1.0);
  ProjectionBatch b(m, n, d, kDefaultTemperature);
  for (std::size_t v = 0; v < m; ++v) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = b.at(v, i);
      Real sq = 0.0;
      for (auto& x : row) {
        x = g(rng);
        sq += x * x;
      }
      for (auto& x : row) x /= std::sqrt(sq);
    }
  }
  return b;
}

// args: batch size, input side; preset chosen by side.
void BM_EncoderForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  auto config = ModelConfig::preset(side >= 224 ? "standard" : "desk");
  config.plane_ids = {1, 2};
  auto model = ModelState::initialize(config, 1);
  const Tensor images = random_images(n, side, 2);
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(model, 1, images, Mode::kEval));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EncoderForward)->Args({16, 32})->Args({64, 32})->Args({1, 224})->Unit(benchmark::kMillisecond);

void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto config = ModelConfig::preset("desk");
  config.plane_ids = {1, 2};
  auto model = ModelState::initialize(config, 1);
  const Tensor images = random_images(n, 32, 3);
  auto& encoder = model.view(1).encoder;
  for (auto _ : state) {
    const Tensor y = encoder.forward(images, Mode::kTrain);
    benchmark::DoNotOptimize(encoder.backward(Tensor(y.shape(), 1.0)));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Unit(benchmark::kMillisecond);

// args: views M, lesions N; D = 128.
void BM_BatchLoss(benchmark::State& state) {
  const auto batch = random_projections(static_cast<std::size_t>(state.range(0)),
                                        static_cast<std::size_t>(state.range(1)), 128, 4);
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss(batch).value);
}
BENCHMARK(BM_BatchLoss)->Args({3, 16})->Args({9, 64})->Unit(benchmark::kMicrosecond);

void BM_BatchLossBackward(benchmark::State& state) {
  const auto batch = random_projections(static_cast<std::size_t>(state.range(0)),
                                        static_cast<std::size_t>(state.range(1)), 128, 5);
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss_backward(batch).grad);
}
BENCHMARK(BM_BatchLossBackward)->Args({3, 16})->Args({9, 64})->Unit(benchmark::kMicrosecond);

// args: cube side, output size; all nine planes.
void BM_ExtractViews(benchmark::State& state) {
  const auto cube = gen_synthetic_lesion(SyntheticClass::kSpiculatedBlob, static_cast<std::size_t>(state.range(0)), 6);
  const std::vector<int> planes{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto out = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(extract_views(cube, planes, out));
}
BENCHMARK(BM_ExtractViews)->Args({32, 32})->Args({64, 224})->Unit(benchmark::kMicrosecond);

void BM_PretrainStepDesk(benchmark::State& state) {
  auto config = ModelConfig::preset("desk");
  config.plane_ids = {1, 2, 3};
  auto model = ModelState::initialize(config, 7);
  std::vector<Tensor> batch;
  for (int m = 0; m < 3; ++m) batch.push_back(random_images(16, 32, 10 + static_cast<std::uint64_t>(m)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_backward(model, batch, LossMode::kCmcInclusive, kDeskTemperature).loss);
  }
}
BENCHMARK(BM_PretrainStepDesk)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
