#include "lgmm/losses.hpp"

#include <cmath>
#include <string>

#include "lgmm/error.hpp"

namespace lgmm {
namespace {

void require_batch(const ScoreMatrix& s, const char* name) {
  if (s.values.rows() == 0 || s.values.rows() != s.values.cols()) {
    throw ContractError(std::string(name) + " must be a non-empty square matrix");
  }
  if (!s.values.all_finite()) throw ContractError(std::string(name) + " holds non-finite scores");
}

void require_direction(const ScoreMatrix& s, Modality query, Modality context, const char* name) {
  if (s.query_modality != query || s.context_modality != context) {
    throw ContractError(std::string(name) + " is tagged " + std::string(to_string(s.query_modality)) +
                        "->" + std::string(to_string(s.context_modality)) + ", expected " +
                        std::string(to_string(query)) + "->" + std::string(to_string(context)));
  }
}

void require_same_batch(const ScoreMatrix& a, const ScoreMatrix& b) {
  if (a.size() != b.size()) {
    throw ShapeError("score matrices cover batches of " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(std::isfinite(tau) && tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(std::isfinite(tau_kl) && tau_kl > 0.0)) throw ConfigError("tau_kl must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
}

MatchLabels::MatchLabels(std::size_t batch) : values_(Matrix::identity(batch)) {}

double inter_modal_contrastive(const ScoreMatrix& s_at, const LossConfig& cfg,
                               const ScoreMatrix* s_ta) {
  cfg.validate();
  require_batch(s_at, "s_at");
  require_direction(s_at, Modality::kAudio, Modality::kText, "s_at");
  if (cfg.text_query_anchor) {
    if (s_ta == nullptr) throw ContractError("text_query_anchor needs the text->audio matrix");
    require_batch(*s_ta, "s_ta");
    require_direction(*s_ta, Modality::kText, Modality::kAudio, "s_ta");
    require_same_batch(s_at, *s_ta);
    return inter_modal_expr(s_at.values, s_ta->values, cfg).item();
  }
  return inter_modal_expr(s_at.values, s_at.values, cfg).item();
}

Matrix soft_labels(const ScoreMatrix& s_intra, const MatchLabels& labels, const LossConfig& cfg) {
  cfg.validate();
  if (s_intra.size() != labels.size() || s_intra.values.rows() != s_intra.values.cols()) {
    throw ShapeError("soft_labels: score matrix and labels differ in batch size");
  }
  return soft_labels_expr(s_intra.values, labels.matrix(), cfg.beta);
}

double joint_soft_supervision(const ScoreMatrix& s_aa, const ScoreMatrix& s_tt,
                              const ScoreMatrix& s_at, const ScoreMatrix& s_ta,
                              const MatchLabels& labels, const LossConfig& cfg) {
  cfg.validate();
  require_batch(s_aa, "s_aa");
  require_batch(s_tt, "s_tt");
  require_batch(s_at, "s_at");
  require_batch(s_ta, "s_ta");
  require_direction(s_aa, Modality::kAudio, Modality::kAudio, "s_aa");
  require_direction(s_tt, Modality::kText, Modality::kText, "s_tt");
  require_direction(s_at, Modality::kAudio, Modality::kText, "s_at");
  require_direction(s_ta, Modality::kText, Modality::kAudio, "s_ta");
  require_same_batch(s_aa, s_tt);
  require_same_batch(s_aa, s_at);
  require_same_batch(s_aa, s_ta);
  if (labels.size() != s_aa.size()) throw ShapeError("labels do not match the batch size");
  return joint_expr(s_aa.values, s_tt.values, s_at.values, s_ta.values, labels.matrix(), cfg)
      .item();
}

double intra_modal_contrastive(const ScoreMatrix& s_at, const ScoreMatrix& s_aa,
                               const ScoreMatrix& s_tt, const LossConfig& cfg) {
  cfg.validate();
  require_batch(s_at, "s_at");
  require_batch(s_aa, "s_aa");
  require_batch(s_tt, "s_tt");
  require_direction(s_at, Modality::kAudio, Modality::kText, "s_at");
  require_direction(s_aa, Modality::kAudio, Modality::kAudio, "s_aa");
  require_direction(s_tt, Modality::kText, Modality::kText, "s_tt");
  require_same_batch(s_at, s_aa);
  require_same_batch(s_at, s_tt);
  if (s_at.size() < 2) {
    throw ContractError("intra-modal contrastive loss needs a batch of at least 2");
  }
  return intra_modal_expr(s_at.values, s_aa.values, s_tt.values, cfg).item();
}

LossBreakdown total_loss(const BatchScores<ScoreMatrix>& scores, const MatchLabels& labels,
                         const LossConfig& cfg, const LossTerms& terms) {
  cfg.validate();
  if (terms.intra && scores.at.size() < 2) {
    throw ConfigError("intra-modal contrastive loss is enabled but the batch holds " +
                      std::to_string(scores.at.size()) + " pair(s); it needs at least 2");
  }
  LossBreakdown out;
  out.inter = inter_modal_contrastive(scores.at, cfg, &scores.ta);
  out.total = out.inter;
  if (terms.joint) {
    out.joint = joint_soft_supervision(scores.aa, scores.tt, scores.at, scores.ta, labels, cfg);
    out.total = out.total + *out.joint;
  }
  if (terms.intra) {
    out.intra = intra_modal_contrastive(scores.at, scores.aa, scores.tt, cfg);
    out.total = out.total + *out.intra;
  }
  return out;
}

}  // namespace lgmm
