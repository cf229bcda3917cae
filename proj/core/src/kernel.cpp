#include "lgmm/kernel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "lgmm/error.hpp"

namespace lgmm {
namespace {

void require_same_dim(const FeatureMatrix& query, const FeatureMatrix& context) {
  if (query.dim() != context.dim()) {
    throw ShapeError("query dim " + std::to_string(query.dim()) + " != context dim " +
                     std::to_string(context.dim()));
  }
}

double cosine(std::span<const double> x, std::span<const double> y) {
  double dot = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    dot += x[k] * y[k];
    xx += x[k] * x[k];
    yy += y[k] * y[k];
  }
  const double denom = std::sqrt(xx) * std::sqrt(yy);
  return denom == 0.0 ? 0.0 : dot / denom;
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) {
    throw ContractError("feature matrix must have at least one row and one column, got " +
                        std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()));
  }
  if (!values_.all_finite()) throw NumericError("feature matrix holds non-finite entries");
}

FeatureMatrix::FeatureMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : FeatureMatrix(Matrix(rows)) {}

FeatureMatrix FeatureMatrix::scaled(double factor) const {
  return FeatureMatrix(scale(values_, factor));
}

void ScoringConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(tau_w)) throw ConfigError("tau_w must be > 0");
  if (!positive(lambda)) throw ConfigError("lambda must be > 0");
  if (!positive(epsilon) && epsilon != 0.0) throw ConfigError("epsilon must be >= 0");
}

AggregationMode parse_aggregation_mode(std::string_view name) {
  std::string key;
  for (char ch : name) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (key == "lgmm") return AggregationMode::kLgmm;
  if (key == "maxmean") return AggregationMode::kMaxMean;
  if (key == "maxmax") return AggregationMode::kMaxMax;
  if (key == "meanmean") return AggregationMode::kMeanMean;
  if (key == "meanmax") return AggregationMode::kMeanMax;
  throw ConfigError("unknown aggregation mode '" + std::string(name) +
                    "' (expected lgmm, max-mean, max-max, mean-mean, mean-max)");
}

std::string_view to_string(AggregationMode mode) noexcept {
  switch (mode) {
    case AggregationMode::kLgmm: return "lgmm";
    case AggregationMode::kMaxMean: return "max-mean";
    case AggregationMode::kMaxMax: return "max-max";
    case AggregationMode::kMeanMean: return "mean-mean";
    case AggregationMode::kMeanMax: return "mean-max";
  }
  return "?";
}

std::string_view to_string(Modality m) noexcept {
  return m == Modality::kAudio ? "audio" : "text";
}

Modality parse_modality(std::string_view name) {
  if (name == "audio") return Modality::kAudio;
  if (name == "text") return Modality::kText;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected audio or text)");
}

LocalSimMatrix local_similarity(const FeatureMatrix& query, const FeatureMatrix& context) {
  require_same_dim(query, context);
  return {matmul_nt(query.matrix(), context.matrix())};
}

WeightMatrix attention_weights(const LocalSimMatrix& sims, const ScoringConfig& cfg) {
  cfg.validate();
  if (!sims.values.all_finite()) throw NumericError("attention_weights: non-finite similarities");
  return {row_softmax(col_l2_normalize(sims.values, cfg.epsilon), cfg.tau_w)};
}

FeatureMatrix context_aware_vectors(const WeightMatrix& weights, const FeatureMatrix& context) {
  if (weights.values.cols() != context.rows()) {
    throw ShapeError("attention covers " + std::to_string(weights.values.cols()) +
                     " context units but context has " + std::to_string(context.rows()));
  }
  return FeatureMatrix(matmul(weights.values, context.matrix()));
}

std::vector<double> local_global_scores(const FeatureMatrix& query, const FeatureMatrix& aware,
                                        const ScoringConfig& cfg) {
  if (!query.matrix().same_shape(aware.matrix())) {
    throw ShapeError("query and context-aware vectors differ in shape");
  }
  Matrix cos = row_cosine(query.matrix(), aware.matrix(), cfg.epsilon);
  return {cos.values().begin(), cos.values().end()};
}

double lse_pool(std::span<const double> scores, const ScoringConfig& cfg) {
  if (scores.empty()) throw ContractError("lse_pool: empty score vector");
  return lse_pool(Matrix::column(scores), cfg.lambda).item();
}

double lgmm_score(const FeatureMatrix& query, const FeatureMatrix& context,
                  const ScoringConfig& cfg) {
  require_same_dim(query, context);
  cfg.validate();
  return lgmm_expr(query.matrix(), context.matrix(), cfg).item();
}

double baseline_score(const FeatureMatrix& query, const FeatureMatrix& context,
                      AggregationMode mode) {
  require_same_dim(query, context);
  if (mode == AggregationMode::kLgmm) {
    throw ContractError("baseline_score does not handle lgmm mode; call lgmm_score");
  }
  const bool max_over_context = mode == AggregationMode::kMaxMean || mode == AggregationMode::kMaxMax;
  const bool max_over_query = mode == AggregationMode::kMaxMax || mode == AggregationMode::kMeanMax;

  double acc = max_over_query ? -std::numeric_limits<double>::infinity() : 0.0;
  for (std::size_t i = 0; i < query.rows(); ++i) {
    double unit = max_over_context ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t j = 0; j < context.rows(); ++j) {
      const double c = cosine(query.row(i), context.row(j));
      unit = max_over_context ? std::max(unit, c) : unit + c;
    }
    if (!max_over_context) unit /= static_cast<double>(context.rows());
    acc = max_over_query ? std::max(acc, unit) : acc + unit;
  }
  if (!max_over_query) acc /= static_cast<double>(query.rows());
  return acc;
}

double score(const FeatureMatrix& query, const FeatureMatrix& context, const ScoringConfig& cfg,
             AggregationMode mode) {
  return mode == AggregationMode::kLgmm ? lgmm_score(query, context, cfg)
                                        : baseline_score(query, context, mode);
}

ScoreMatrix batch_score_matrix(std::span<const FeatureMatrix> queries,
                               std::span<const FeatureMatrix> contexts, const ScoringConfig& cfg,
                               AggregationMode mode, Modality query_modality,
                               Modality context_modality) {
  if (queries.empty() || contexts.empty()) {
    throw ContractError("batch_score_matrix: empty query or context list");
  }
  ScoreMatrix out{Matrix(queries.size(), contexts.size()), query_modality, context_modality};
  for (std::size_t m = 0; m < queries.size(); ++m)
    for (std::size_t n = 0; n < contexts.size(); ++n)
      out.values(m, n) = score(queries[m], contexts[n], cfg, mode);
  return out;
}

}  // namespace lgmm
