#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lgmm/kernel.hpp"

namespace {

lgmm::FeatureMatrix random_features(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  lgmm::Matrix m(rows, dim);
  for (double& x : m.values()) x = g(rng);
  return lgmm::FeatureMatrix(std::move(m));
}

// Args: query units, context units, feature dim.
void BM_LgmmScore(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto q = random_features(rng, state.range(0), state.range(2));
  const auto c = random_features(rng, state.range(1), state.range(2));
  const lgmm::ScoringConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(lgmm::lgmm_score(q, c, cfg));
}
BENCHMARK(BM_LgmmScore)->Args({9, 6, 16})->Args({32, 20, 64})->Args({128, 30, 256});

void BM_BaselineMaxMean(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto q = random_features(rng, state.range(0), state.range(2));
  const auto c = random_features(rng, state.range(1), state.range(2));
  for (auto _ : state) benchmark::DoNotOptimize(lgmm::baseline_score(q, c, lgmm::AggregationMode::kMaxMean));
}
BENCHMARK(BM_BaselineMaxMean)->Args({9, 6, 16})->Args({128, 30, 256});

// Arg: batch size B; scores a B x B matrix of 9-frame audio against 6-word captions.
void BM_BatchScoreMatrix(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto b = static_cast<std::size_t>(state.range(0));
  std::vector<lgmm::FeatureMatrix> audio, text;
  for (std::size_t k = 0; k < b; ++k) {
    audio.push_back(random_features(rng, 9, 32));
    text.push_back(random_features(rng, 6, 32));
  }
  const lgmm::ScoringConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(lgmm::batch_score_matrix(audio, text, cfg, lgmm::AggregationMode::kLgmm));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b * b));
}
BENCHMARK(BM_BatchScoreMatrix)->Arg(16)->Arg(64);

}  // namespace
