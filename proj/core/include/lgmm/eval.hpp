#pragma once

// Recall@K under the multi-caption protocol and word/frame-level alignment
// dumps.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgmm/data.hpp"
#include "lgmm/kernel.hpp"
#include "lgmm/model.hpp"

namespace lgmm {

enum class Direction { kT2A, kA2T };
std::string_view to_string(Direction d) noexcept;
/// Accepts t2a / a2t in any case.
Direction parse_direction(std::string_view name);

/// Directional: T2A scores score(T, A), A2T scores score(A, T).
/// Symmetric: both use the mean of the two.
enum class ScorePolicy { kDirectional, kSymmetric };
ScorePolicy parse_score_policy(std::string_view name);
std::string_view to_string(ScorePolicy p) noexcept;

struct RetrievalResult {
  Direction direction = Direction::kT2A;
  std::vector<std::size_t> ranks;  // one per query, 1-based
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;

  /// Fraction of queries with rank <= k.
  double recall_at(std::size_t k) const;
};

struct EvalReport {
  RetrievalResult t2a;
  RetrievalResult a2t;
  AggregationMode mode = AggregationMode::kLgmm;
};

struct EvalOptions {
  ScoringConfig scoring;
  AggregationMode mode = AggregationMode::kLgmm;
  ScorePolicy policy = ScorePolicy::kDirectional;
};

/// 1 + number of candidates scoring strictly above the best relevant one,
/// plus every other candidate tied with it (ties count against the query).
std::size_t rank_of(std::span<const double> scores, std::span<const std::size_t> relevant);

RetrievalResult summarize(Direction direction, std::vector<std::size_t> ranks);

/// `heads == nullptr` scores the raw features directly.
EvalReport evaluate(const RetrievalDataset& dataset, const HeadPair* heads,
                    const EvalOptions& options = {});

/// T2A R@1 only; skips the A2T pass.
double t2a_recall_at_1(const RetrievalDataset& dataset, const HeadPair* heads,
                       const EvalOptions& options = {});

/// Tab-separated: direction, mode, k, value.
/// With `only` set, rows of the other direction are omitted.
void write_metrics(std::ostream& out, const EvalReport& report,
                   std::optional<Direction> only = std::nullopt);

struct AlignmentDump {
  struct Entry {
    std::string context_id;
    std::vector<double> local_scores;  // one per query unit
    double pooled = 0.0;
  };

  std::string query_id;
  Modality query_modality = Modality::kText;
  std::vector<Entry> entries;
};

/// Local-global cosine of every query unit against each candidate and the
/// pooled score. Throws LookupError for unknown ids; pooled values are
/// cross-checked against the listed vectors before returning.
AlignmentDump dump_alignment(const RetrievalDataset& dataset, std::string_view query_id,
                             Modality query_modality, std::span<const std::string> candidate_ids,
                             const HeadPair* heads, const ScoringConfig& cfg);

/// One loss configuration of the ablation: trained heads evaluated on the
/// evaluation set.
struct AblationRow {
  std::string label;
  LossTerms terms;
  LossSummary initial;
  LossSummary final;
  EvalReport report;
};

/// Trains the full loss, without the joint term, without the intra-modal
/// term, and with the inter-modal term only, all from the same seed.
std::vector<AblationRow> run_loss_ablation(const RetrievalDataset& train_set,
                                           const RetrievalDataset& eval_set,
                                           const TrainConfig& base);

void write_ablation_table(std::ostream& out, std::span<const AblationRow> rows);

/// Columns: query_unit_index, context_id, local_score. The pooled score of
/// each candidate is written with query_unit_index "pooled".
void write_alignment(std::ostream& out, const AlignmentDump& dump);

}  // namespace lgmm
