#include "lgmm/gradcheck.hpp"

#include <random>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"
#include "lgmm/model.hpp"

namespace lgmm {
namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = gauss(rng);
  return m;
}

}  // namespace

BatchScores<Matrix> random_batch_scores(std::size_t batch, const ScoringConfig& scoring,
                                        std::uint64_t seed) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> units(2, 5);
  std::vector<FeatureMatrix> audio, text;
  for (std::size_t m = 0; m < batch; ++m) {
    audio.emplace_back(random_matrix(units(rng), 8, rng));
    text.emplace_back(random_matrix(units(rng), 8, rng));
  }
  const auto mode = AggregationMode::kLgmm;
  return {batch_score_matrix(audio, text, scoring, mode).values,
          batch_score_matrix(text, audio, scoring, mode).values,
          batch_score_matrix(audio, audio, scoring, mode).values,
          batch_score_matrix(text, text, scoring, mode).values};
}

std::vector<GradientCheck> run_gradient_suite(const GradientSuiteConfig& cfg) {
  cfg.loss.validate();
  cfg.scoring.validate();
  if (cfg.batch < 2) throw ConfigError("gradient suite needs a batch of at least 2");

  const BatchScores<Matrix> s = random_batch_scores(cfg.batch, cfg.scoring, cfg.seed);
  const Matrix labels = Matrix::identity(cfg.batch);
  const LossConfig loss = cfg.loss;
  std::vector<GradientCheck> out;

  out.push_back({"inter_modal", finite_diff_check(
                                    [&](Tape&, std::span<const Var> p) {
                                      return inter_modal_expr(p[0], p[1], loss);
                                    },
                                    {s.at, s.ta}, cfg.step, cfg.tolerance)});

  out.push_back({"joint", finite_diff_check(
                              [&](Tape& t, std::span<const Var> p) {
                                return joint_expr(t.constant(s.aa), t.constant(s.tt), p[0], p[1],
                                                  labels, loss);
                              },
                              {s.at, s.ta}, cfg.step, cfg.tolerance)});

  out.push_back({"intra_modal", finite_diff_check(
                                    [&](Tape&, std::span<const Var> p) {
                                      return intra_modal_expr(p[0], p[1], p[2], loss);
                                    },
                                    {s.at, s.aa, s.tt}, cfg.step, cfg.tolerance)});

  out.push_back({"total", finite_diff_check(
                              [&](Tape& t, std::span<const Var> p) {
                                BatchScores<Var> vars{p[0], p[1], p[2], p[3]};
                                BatchScores<Var> targets{p[0], p[1], t.constant(s.aa),
                                                         t.constant(s.tt)};
                                return total_expr(vars, labels, loss, LossTerms{}, &targets).total;
                              },
                              {s.at, s.ta, s.aa, s.tt}, cfg.step, cfg.tolerance)});

  std::mt19937_64 rng(cfg.seed + 1);
  const ScoringConfig scoring = cfg.scoring;
  out.push_back({"lgmm_score", finite_diff_check(
                                   [&](Tape&, std::span<const Var> p) {
                                     return lgmm_expr(p[0], p[1], scoring);
                                   },
                                   {random_matrix(3, 4, rng), random_matrix(2, 4, rng)}, cfg.step,
                                   cfg.tolerance)});

  // Full pipeline. Positive biases keep every rectifier in its linear
  // regime so the central difference never straddles a kink.
  SyntheticConfig synth;
  synth.vocab_size = 8;
  synth.dim = 6;
  synth.items = cfg.batch;
  synth.events_per_item = 2;
  synth.frames_per_event = 2;
  synth.words_per_event = 1;
  synth.noise_sigma = 0.1;
  synth.hard_negative_fraction = 0.0;
  synth.seed = cfg.seed;
  const SyntheticDataset data = generate_synthetic(synth);
  HeadPair heads = init_heads(synth.dim, synth.dim, 5, 4, cfg.seed);
  for (ProjectionHead* h : {&heads.audio, &heads.text}) {
    for (double& v : h->b1.values()) v = 3.0;
    for (double& v : h->b2.values()) v = 3.0;
  }
  TrainConfig train_cfg;
  train_cfg.batch_size = cfg.batch;
  train_cfg.loss = cfg.loss;
  train_cfg.scoring = cfg.scoring;
  std::vector<BatchItem> batch;
  for (std::size_t k = 0; k < cfg.batch; ++k) batch.push_back({k, 0});
  const BatchScores<Matrix> base = batch_scores(heads, data.dataset, batch, cfg.scoring);
  const FrozenTargets frozen{base.aa, base.tt};
  out.push_back({"projection_pipeline",
                 finite_diff_check(
                     [&](Tape& t, std::span<const Var> p) {
                       return record_batch_loss(t, p, data.dataset, batch, train_cfg, &frozen).total;
                     },
                     head_parameters(heads), cfg.step, cfg.tolerance)});
  return out;
}

}  // namespace lgmm
