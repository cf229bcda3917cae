#pragma once

// Projection heads, Adam, and the training loop minimising
// inter-modal + joint soft supervision + intra-modal losses.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lgmm/autograd.hpp"
#include "lgmm/data.hpp"
#include "lgmm/kernel.hpp"
#include "lgmm/losses.hpp"

namespace lgmm {

/// Two rectified linear layers: rect(rect(x W1 + b1) W2 + b2).
struct ProjectionHead {
  Matrix w1;  // d_in x d_hidden
  Matrix b1;  // 1 x d_hidden
  Matrix w2;  // d_hidden x d_shared
  Matrix b2;  // 1 x d_shared
  bool final_rectifier = true;

  std::size_t d_in() const noexcept { return w1.rows(); }
  std::size_t d_hidden() const noexcept { return w1.cols(); }
  std::size_t d_shared() const noexcept { return w2.cols(); }

  friend bool operator==(const ProjectionHead&, const ProjectionHead&) = default;
};

struct HeadPair {
  ProjectionHead audio;
  ProjectionHead text;

  friend bool operator==(const HeadPair&, const HeadPair&) = default;
};

template <typename T>
T project_expr(const T& raw, const T& w1, const T& b1, const T& w2, const T& b2,
               bool final_rectifier) {
  T hidden = rectify(add_row_broadcast(matmul(raw, w1), b1));
  T out = add_row_broadcast(matmul(hidden, w2), b2);
  return final_rectifier ? rectify(out) : out;
}

FeatureMatrix project(const FeatureMatrix& raw, const ProjectionHead& head);

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
HeadPair init_heads(std::size_t d_in_audio, std::size_t d_in_text, std::size_t d_hidden,
                    std::size_t d_shared, std::uint64_t seed);

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static OptimizerState for_params(std::span<const Matrix> params, const AdamConfig& config);
};

/// One bias-corrected Adam update. On a non-finite gradient nothing is
/// modified and NumericError names the offending parameter.
void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, OptimizerState& state,
               std::span<const std::string> names = {});

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LossConfig loss;
  ScoringConfig scoring;
  LossTerms terms;
  std::size_t d_hidden = 32;
  std::size_t d_shared = 32;
  AdamConfig adam;
  bool final_rectifier = true;

  void validate() const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text);

/// Mean loss terms over a sequence of batches.
struct LossSummary {
  double inter = 0.0;
  std::optional<double> joint;
  std::optional<double> intra;
  double total = 0.0;
  std::size_t batches = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  LossSummary loss;
  double valid_t2a_r1 = 0.0;
  /// Steps in which every gradient of a head was exactly zero.
  std::size_t dead_audio_steps = 0;
  std::size_t dead_text_steps = 0;
};

struct TrainResult {
  HeadPair heads;
  std::vector<EpochMetrics> log;
  /// Loss over the training set in fixed order, before and after training.
  LossSummary initial;
  LossSummary final;
};

/// Flattened parameter order shared by the optimiser, gradients and checkpoints.
std::vector<Matrix> head_parameters(const HeadPair& heads);
void set_head_parameters(HeadPair& heads, std::span<const Matrix> params);
std::vector<std::string> head_parameter_names();

/// Items of one batch: audio pair index and the caption used for it.
struct BatchItem {
  std::size_t pair = 0;
  std::size_t caption = 0;
};

/// Intra-modal score matrices to build soft labels from, held fixed.
struct FrozenTargets {
  Matrix aa;
  Matrix tt;
};

/// Recorded loss over one batch with the given parameter leaves (order of
/// head_parameters()). With `frozen`, the soft labels come from those
/// matrices instead of the current intra-modal scores.
LossParts<Var> record_batch_loss(Tape& tape, std::span<const Var> params,
                                 const RetrievalDataset& dataset, std::span<const BatchItem> batch,
                                 const TrainConfig& cfg, const FrozenTargets* frozen = nullptr);

/// Plain-value loss of one batch with the given heads.
LossParts<Matrix> batch_loss_value(const HeadPair& heads, const RetrievalDataset& dataset,
                                   std::span<const BatchItem> batch, const TrainConfig& cfg);

/// The four B x B score matrices of one batch under the given heads.
BatchScores<Matrix> batch_scores(const HeadPair& heads, const RetrievalDataset& dataset,
                                 std::span<const BatchItem> batch, const ScoringConfig& cfg);

/// Loss terms over sequential batches (first caption of every pair, ragged
/// tail dropped) without training.
LossSummary evaluate_loss(const RetrievalDataset& dataset, const HeadPair& heads,
                          const TrainConfig& cfg);

/// Runs `cfg.epochs` epochs. Validation R@1 is measured on `valid` when given,
/// otherwise on the training set.
TrainResult train(const RetrievalDataset& dataset, const TrainConfig& cfg,
                  const RetrievalDataset* valid = nullptr);

/// One metrics record per line (JSON objects).
std::string format_metrics_log(const TrainResult& result);

struct Checkpoint {
  HeadPair heads;
  TrainConfig config;
};

Bytes encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lgmm
