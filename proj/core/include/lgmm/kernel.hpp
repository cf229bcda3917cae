#pragma once

// Local-to-global multiscale matching (LGMM) similarity between two sets of
// local features, plus the pairwise-cosine aggregation baselines.
//
// score(query, context) runs three stages:
//   local-local   s = Q C^T, column-normalised over query units, softmax over
//                 context units at temperature tau_w -> attention weights W
//   local-global  V = W C; cosine(Q.row(i), V.row(i)) per query unit
//   global-global (1/lambda) log sum_i exp(lambda * cosine_i)

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgmm/matrix.hpp"
#include "lgmm/ops.hpp"

namespace lgmm {

/// Local features of one item: one row per frame or word.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  /// Throws ContractError on an empty shape and NumericError on non-finite entries.
  explicit FeatureMatrix(Matrix values);
  FeatureMatrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t dim() const noexcept { return values_.cols(); }
  std::span<const double> row(std::size_t i) const { return values_.row(i); }
  const Matrix& matrix() const noexcept { return values_; }

  FeatureMatrix scaled(double factor) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  Matrix values_;
};

struct ScoringConfig {
  double tau_w = 0.25;
  double lambda = 10.0;
  double epsilon = 1e-12;

  /// Throws ConfigError unless every field is strictly positive and finite.
  void validate() const;
};

/// Raw dot products between query units (rows) and context units (columns).
struct LocalSimMatrix {
  Matrix values;
};

/// Row-stochastic attention of each query unit over the context units.
struct WeightMatrix {
  Matrix values;
};

enum class AggregationMode { kLgmm, kMaxMean, kMaxMax, kMeanMean, kMeanMax };

/// Accepts "lgmm", "max-mean", "max-max", "mean-mean", "mean-max" (case and
/// separator insensitive). Throws ConfigError on anything else.
AggregationMode parse_aggregation_mode(std::string_view name);
std::string_view to_string(AggregationMode mode) noexcept;

enum class Modality { kAudio, kText };
std::string_view to_string(Modality m) noexcept;
Modality parse_modality(std::string_view name);

/// B x B global scores; entry [m][n] = score(query item m, context item n).
struct ScoreMatrix {
  Matrix values;
  Modality query_modality = Modality::kAudio;
  Modality context_modality = Modality::kText;

  std::size_t size() const noexcept { return values.rows(); }
};

LocalSimMatrix local_similarity(const FeatureMatrix& query, const FeatureMatrix& context);
WeightMatrix attention_weights(const LocalSimMatrix& sims, const ScoringConfig& cfg);
FeatureMatrix context_aware_vectors(const WeightMatrix& weights, const FeatureMatrix& context);
std::vector<double> local_global_scores(const FeatureMatrix& query, const FeatureMatrix& aware,
                                        const ScoringConfig& cfg);
double lse_pool(std::span<const double> scores, const ScoringConfig& cfg);

double lgmm_score(const FeatureMatrix& query, const FeatureMatrix& context,
                  const ScoringConfig& cfg);

/// Two-stage reduction of the pairwise cosine matrix. "Max-Mean" takes the
/// max over context units for every query unit, then the mean over query
/// units; the other three modes follow the same <context>-<query> order.
double baseline_score(const FeatureMatrix& query, const FeatureMatrix& context,
                      AggregationMode mode);

/// Dispatches to lgmm_score or baseline_score.
double score(const FeatureMatrix& query, const FeatureMatrix& context, const ScoringConfig& cfg,
             AggregationMode mode);

ScoreMatrix batch_score_matrix(std::span<const FeatureMatrix> queries,
                               std::span<const FeatureMatrix> contexts, const ScoringConfig& cfg,
                               AggregationMode mode, Modality query_modality = Modality::kAudio,
                               Modality context_modality = Modality::kText);

/// The LGMM pipeline written over the shared primitives. T is Matrix for
/// plain evaluation or a recorded variable for differentiation.
template <typename T>
T lgmm_expr(const T& query, const T& context, const ScoringConfig& cfg) {
  T sims = matmul_nt(query, context);
  T weights = row_softmax(col_l2_normalize(sims, cfg.epsilon), cfg.tau_w);
  T aware = matmul(weights, context);
  return lse_pool(row_cosine(query, aware, cfg.epsilon), cfg.lambda);
}

}  // namespace lgmm
