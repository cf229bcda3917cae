#pragma once

// Finite-difference validation of the recorded gradients of every training
// objective, the similarity kernel, and the full projection pipeline.

#include <cstdint>
#include <string>
#include <vector>

#include "lgmm/autograd.hpp"
#include "lgmm/kernel.hpp"
#include "lgmm/losses.hpp"

namespace lgmm {

struct GradientCheck {
  std::string name;
  GradientReport report;
};

struct GradientSuiteConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 4;
  LossConfig loss;
  ScoringConfig scoring;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Random batch of four score matrices produced by the kernel on random
/// local features (2-5 units, dim 8).
BatchScores<Matrix> random_batch_scores(std::size_t batch, const ScoringConfig& scoring,
                                        std::uint64_t seed);

/// Checks, in order: inter-modal, joint, intra-modal and total loss with
/// respect to score matrices; the kernel score with respect to both feature
/// matrices; and the total loss with respect to projection parameters.
/// Soft-label targets are held at their base-point value throughout, which is
/// the function the stop-gradient rule differentiates.
std::vector<GradientCheck> run_gradient_suite(const GradientSuiteConfig& cfg);

}  // namespace lgmm
