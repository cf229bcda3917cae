#include <benchmark/benchmark.h>

#include <vector>

#include "lgmm/autograd.hpp"
#include "lgmm/data.hpp"
#include "lgmm/model.hpp"

namespace {

// One optimiser step: record the full loss, backpropagate, apply Adam.
void BM_TrainStep(benchmark::State& state) {
  lgmm::SyntheticConfig sc;
  sc.items = 64;
  const lgmm::SyntheticDataset data = lgmm::generate_synthetic(sc);
  lgmm::TrainConfig cfg;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  lgmm::HeadPair heads = lgmm::init_heads(sc.dim, sc.dim, cfg.d_hidden, cfg.d_shared, cfg.seed);
  std::vector<lgmm::Matrix> params = lgmm::head_parameters(heads);
  lgmm::OptimizerState opt = lgmm::OptimizerState::for_params(params, cfg.adam);
  std::vector<lgmm::BatchItem> batch;
  for (std::size_t k = 0; k < cfg.batch_size; ++k) batch.push_back({k, 0});

  for (auto _ : state) {
    lgmm::Tape tape;
    std::vector<lgmm::Var> leaves;
    for (const lgmm::Matrix& p : params) leaves.push_back(tape.leaf(p));
    const auto loss = lgmm::record_batch_loss(tape, leaves, data.dataset, batch, cfg);
    tape.backward(loss.total);
    std::vector<lgmm::Matrix> grads;
    for (const lgmm::Var& v : leaves) grads.push_back(tape.grad(v));
    lgmm::adam_step(params, grads, opt);
    benchmark::DoNotOptimize(params.front().values().data());
  }
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Epoch(benchmark::State& state) {
  lgmm::SyntheticConfig sc;
  const lgmm::SyntheticDataset data = lgmm::generate_synthetic(sc);
  lgmm::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(lgmm::train(data.dataset, cfg));
}
BENCHMARK(BM_Epoch)->Unit(benchmark::kMillisecond);

}  // namespace
