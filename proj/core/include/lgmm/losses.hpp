#pragma once

// Training objectives over a batch of B audio-text pairs.
//
//   inter-modal   bidirectional NT-Xent over the audio->text score matrix
//   joint         KL(softmax(soft labels) || softmax(cross-modal scores)),
//                 soft labels = beta * intra-modal scores + (1 - beta) * Y
//   intra-modal   cross-modal positive against same-modality negatives
//                 (diagonal excluded from the denominator)
//
// The *_expr templates are the single definition of each objective; they run
// on plain matrices here and on recorded variables in the trainer.

#include <optional>

#include "lgmm/kernel.hpp"
#include "lgmm/matrix.hpp"
#include "lgmm/ops.hpp"

namespace lgmm {

struct LossConfig {
  double tau = 0.07;
  double beta = 0.3;
  /// Temperature turning score rows into distributions for the KL term.
  double tau_kl = 0.07;
  /// Use the text-query matrix score(T_n, A_m) for the text-anchored half of
  /// the inter-modal loss instead of the column of score(A_m, T_n).
  bool text_query_anchor = false;

  void validate() const;
};

/// Which objectives contribute to the total; the inter-modal term is always on.
struct LossTerms {
  bool joint = true;
  bool intra = true;
};

/// B x B binary matrix with Y[m][n] = 1 iff m == n.
class MatchLabels {
 public:
  explicit MatchLabels(std::size_t batch);
  std::size_t size() const noexcept { return values_.rows(); }
  const Matrix& matrix() const noexcept { return values_; }

 private:
  Matrix values_;
};

/// The four score matrices of one batch. `ta` holds score(T_m, A_n).
template <typename T>
struct BatchScores {
  T at;
  T ta;
  T aa;
  T tt;
};

template <typename T>
struct LossParts {
  T inter;
  std::optional<T> joint;
  std::optional<T> intra;
  T total;
};

struct LossBreakdown {
  double inter = 0.0;
  std::optional<double> joint;
  std::optional<double> intra;
  double total = 0.0;
};

double inter_modal_contrastive(const ScoreMatrix& s_at, const LossConfig& cfg,
                               const ScoreMatrix* s_ta = nullptr);
Matrix soft_labels(const ScoreMatrix& s_intra, const MatchLabels& labels, const LossConfig& cfg);
double joint_soft_supervision(const ScoreMatrix& s_aa, const ScoreMatrix& s_tt,
                              const ScoreMatrix& s_at, const ScoreMatrix& s_ta,
                              const MatchLabels& labels, const LossConfig& cfg);
double intra_modal_contrastive(const ScoreMatrix& s_at, const ScoreMatrix& s_aa,
                               const ScoreMatrix& s_tt, const LossConfig& cfg);
LossBreakdown total_loss(const BatchScores<ScoreMatrix>& scores, const MatchLabels& labels,
                         const LossConfig& cfg, const LossTerms& terms = {});

// ---------------------------------------------------------------------------
// Generic definitions.

template <typename T>
T contrastive_direction(const T& logits) {
  return sum(sub(diagonal(logits), row_logsumexp(logits, RowMask::kNone)));
}

template <typename T>
T inter_modal_expr(const T& s_at, const T& s_ta, const LossConfig& cfg) {
  const double batch = static_cast<double>(value_of(s_at).rows());
  T audio_anchor = scale(s_at, 1.0 / cfg.tau);
  T text_anchor = cfg.text_query_anchor ? scale(s_ta, 1.0 / cfg.tau) : transpose(audio_anchor);
  return scale(add(contrastive_direction(audio_anchor), contrastive_direction(text_anchor)),
               -1.0 / batch);
}

template <typename T>
T soft_labels_expr(const T& s_intra, const Matrix& labels, double beta) {
  return add(scale(s_intra, beta), lift(s_intra, scale(labels, 1.0 - beta)));
}

/// Mean over rows of KL(softmax(target row / t) || softmax(prediction row / t)).
/// No gradient reaches `target`.
template <typename T>
T row_kl_mean(const T& target, const T& prediction, double temperature) {
  const double rows = static_cast<double>(value_of(prediction).rows());
  T t = stop_gradient(scale(target, 1.0 / temperature));
  T log_p = sub_col_broadcast(t, row_logsumexp(t, RowMask::kNone));
  T x = scale(prediction, 1.0 / temperature);
  T log_q = sub_col_broadcast(x, row_logsumexp(x, RowMask::kNone));
  return scale(sum(hadamard(exp(log_p), sub(log_p, log_q))), 1.0 / rows);
}

template <typename T>
T joint_expr(const T& s_aa, const T& s_tt, const T& s_at, const T& s_ta, const Matrix& labels,
             const LossConfig& cfg) {
  T audio_targets = stop_gradient(soft_labels_expr(s_aa, labels, cfg.beta));
  T text_targets = stop_gradient(soft_labels_expr(s_tt, labels, cfg.beta));
  return add(scale(row_kl_mean(audio_targets, s_at, cfg.tau_kl), 0.5),
             scale(row_kl_mean(text_targets, s_ta, cfg.tau_kl), 0.5));
}

template <typename T>
T intra_modal_expr(const T& s_at, const T& s_aa, const T& s_tt, const LossConfig& cfg) {
  const double batch = static_cast<double>(value_of(s_at).rows());
  T positives = diagonal(scale(s_at, 1.0 / cfg.tau));
  T audio_neg = row_logsumexp(scale(s_aa, 1.0 / cfg.tau), RowMask::kOffDiagonal);
  // The text half sums over m != n down each column of score(T_m, T_n).
  T text_neg = row_logsumexp(transpose(scale(s_tt, 1.0 / cfg.tau)), RowMask::kOffDiagonal);
  return scale(add(sum(sub(positives, audio_neg)), sum(sub(positives, text_neg))), -1.0 / batch);
}

/// `targets`, when given, supplies the intra-modal matrices the soft labels
/// are built from in place of s.aa and s.tt (used to freeze them).
template <typename T>
LossParts<T> total_expr(const BatchScores<T>& s, const Matrix& labels, const LossConfig& cfg,
                        const LossTerms& terms, const BatchScores<T>* targets = nullptr) {
  LossParts<T> parts{inter_modal_expr(s.at, s.ta, cfg), std::nullopt, std::nullopt, T{}};
  parts.total = parts.inter;
  if (terms.joint) {
    const T& aa = targets ? targets->aa : s.aa;
    const T& tt = targets ? targets->tt : s.tt;
    parts.joint = joint_expr(aa, tt, s.at, s.ta, labels, cfg);
    parts.total = add(parts.total, *parts.joint);
  }
  if (terms.intra) {
    parts.intra = intra_modal_expr(s.at, s.aa, s.tt, cfg);
    parts.total = add(parts.total, *parts.intra);
  }
  return parts;
}

}  // namespace lgmm
