#include "lgmm/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "lgmm/error.hpp"

namespace lgmm {
namespace {

// Restores stream formatting on scope exit.
class FormatGuard {
 public:
  explicit FormatGuard(std::ostream& out) : out_(out), flags_(out.flags()), precision_(out.precision()) {}
  ~FormatGuard() {
    out_.flags(flags_);
    out_.precision(precision_);
  }
  FormatGuard(const FormatGuard&) = delete;
  FormatGuard& operator=(const FormatGuard&) = delete;

 private:
  std::ostream& out_;
  std::ios::fmtflags flags_;
  std::streamsize precision_;
};

std::vector<FeatureMatrix> projected(const FeaturePack& pack, std::span<const std::size_t> indices,
                                     const ProjectionHead* head) {
  std::vector<FeatureMatrix> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const FeatureMatrix& raw = pack[i].features;
    out.push_back(head ? project(raw, *head) : raw);
  }
  return out;
}

struct Layout {
  std::vector<std::size_t> audio;           // audio pack index per item
  std::vector<std::size_t> captions;        // text pack index per caption query
  std::vector<std::size_t> caption_owner;   // item of each caption
  std::vector<std::vector<std::size_t>> item_captions;  // caption positions per item
};

Layout layout_of(const RetrievalDataset& dataset) {
  Layout l;
  for (std::size_t item = 0; item < dataset.pairs().size(); ++item) {
    const auto& pair = dataset.pairs()[item];
    l.audio.push_back(pair.audio);
    l.item_captions.emplace_back();
    for (std::size_t c : pair.captions) {
      l.item_captions.back().push_back(l.captions.size());
      l.captions.push_back(c);
      l.caption_owner.push_back(item);
    }
  }
  return l;
}

void check_options(const EvalOptions& options) { options.scoring.validate(); }

}  // namespace

std::string_view to_string(Direction d) noexcept { return d == Direction::kT2A ? "T2A" : "A2T"; }

Direction parse_direction(std::string_view name) {
  std::string key;
  for (char ch : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (key == "t2a") return Direction::kT2A;
  if (key == "a2t") return Direction::kA2T;
  throw ConfigError("unknown direction '" + std::string(name) + "' (expected t2a or a2t)");
}

ScorePolicy parse_score_policy(std::string_view name) {
  if (name == "directional") return ScorePolicy::kDirectional;
  if (name == "symmetric") return ScorePolicy::kSymmetric;
  throw ConfigError("unknown direction policy '" + std::string(name) +
                    "' (expected directional or symmetric)");
}

std::string_view to_string(ScorePolicy p) noexcept {
  return p == ScorePolicy::kDirectional ? "directional" : "symmetric";
}

double RetrievalResult::recall_at(std::size_t k) const {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

std::size_t rank_of(std::span<const double> scores, std::span<const std::size_t> relevant) {
  if (relevant.empty()) throw ContractError("rank_of: empty relevant set");
  std::size_t best = relevant.front();
  for (std::size_t r : relevant) {
    if (r >= scores.size()) throw ContractError("rank_of: relevant index out of range");
    if (scores[r] > scores[best]) best = r;
  }
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == best) continue;
    if (scores[j] >= scores[best]) ++rank;
  }
  return rank;
}

RetrievalResult summarize(Direction direction, std::vector<std::size_t> ranks) {
  RetrievalResult r;
  r.direction = direction;
  r.ranks = std::move(ranks);
  r.r1 = r.recall_at(1);
  r.r5 = r.recall_at(5);
  r.r10 = r.recall_at(10);
  return r;
}

namespace {

struct ScoreTables {
  std::vector<std::vector<double>> text_query;   // score(T_c, A_a)
  std::vector<std::vector<double>> audio_query;  // score(A_a, T_c)
};

ScoreTables score_tables(const RetrievalDataset& dataset, const Layout& l, const HeadPair* heads,
                         const EvalOptions& options, bool need_a2t) {
  const auto audio = projected(dataset.audio(), l.audio, heads ? &heads->audio : nullptr);
  const auto text = projected(dataset.text(), l.captions, heads ? &heads->text : nullptr);
  const bool symmetric = options.policy == ScorePolicy::kSymmetric;
  ScoreTables t;
  t.text_query.assign(text.size(), std::vector<double>(audio.size()));
  if (need_a2t || symmetric) t.audio_query.assign(audio.size(), std::vector<double>(text.size()));
  for (std::size_t c = 0; c < text.size(); ++c) {
    for (std::size_t a = 0; a < audio.size(); ++a) {
      t.text_query[c][a] = score(text[c], audio[a], options.scoring, options.mode);
      if (!t.audio_query.empty()) {
        t.audio_query[a][c] = score(audio[a], text[c], options.scoring, options.mode);
      }
    }
  }
  if (symmetric) {
    for (std::size_t c = 0; c < text.size(); ++c)
      for (std::size_t a = 0; a < audio.size(); ++a) {
        const double mean = 0.5 * (t.text_query[c][a] + t.audio_query[a][c]);
        t.text_query[c][a] = mean;
        t.audio_query[a][c] = mean;
      }
  }
  return t;
}

std::vector<std::size_t> t2a_ranks(const Layout& l, const ScoreTables& t) {
  std::vector<std::size_t> ranks;
  ranks.reserve(l.captions.size());
  for (std::size_t c = 0; c < l.captions.size(); ++c) {
    const std::size_t relevant[] = {l.caption_owner[c]};
    ranks.push_back(rank_of(t.text_query[c], relevant));
  }
  return ranks;
}

}  // namespace

EvalReport evaluate(const RetrievalDataset& dataset, const HeadPair* heads,
                    const EvalOptions& options) {
  check_options(options);
  if (dataset.pairs().empty()) throw ContractError("evaluate: dataset has no pairs");
  const Layout l = layout_of(dataset);
  const ScoreTables t = score_tables(dataset, l, heads, options, true);

  std::vector<std::size_t> a2t;
  a2t.reserve(l.audio.size());
  for (std::size_t a = 0; a < l.audio.size(); ++a) {
    a2t.push_back(rank_of(t.audio_query[a], l.item_captions[a]));
  }
  return {summarize(Direction::kT2A, t2a_ranks(l, t)), summarize(Direction::kA2T, std::move(a2t)),
          options.mode};
}

double t2a_recall_at_1(const RetrievalDataset& dataset, const HeadPair* heads,
                       const EvalOptions& options) {
  check_options(options);
  if (dataset.pairs().empty()) throw ContractError("evaluate: dataset has no pairs");
  const Layout l = layout_of(dataset);
  return summarize(Direction::kT2A, t2a_ranks(l, score_tables(dataset, l, heads, options, false)))
      .r1;
}

void write_metrics(std::ostream& out, const EvalReport& report, std::optional<Direction> only) {
  const FormatGuard guard(out);
  out << "direction\tmode\tk\tvalue\n";
  for (const RetrievalResult* r : {&report.t2a, &report.a2t}) {
    if (only && r->direction != *only) continue;
    for (std::size_t k : {1, 5, 10}) {
      out << to_string(r->direction) << '\t' << to_string(report.mode) << '\t' << k << '\t'
          << std::fixed << std::setprecision(6) << r->recall_at(k) << '\n';
    }
  }
}

AlignmentDump dump_alignment(const RetrievalDataset& dataset, std::string_view query_id,
                             Modality query_modality, std::span<const std::string> candidate_ids,
                             const HeadPair* heads, const ScoringConfig& cfg) {
  cfg.validate();
  const bool text_query = query_modality == Modality::kText;
  const FeaturePack& query_pack = text_query ? dataset.text() : dataset.audio();
  const FeaturePack& context_pack = text_query ? dataset.audio() : dataset.text();
  const ProjectionHead* query_head = heads ? (text_query ? &heads->text : &heads->audio) : nullptr;
  const ProjectionHead* context_head = heads ? (text_query ? &heads->audio : &heads->text) : nullptr;

  const FeatureMatrix& raw_query = query_pack[query_pack.index_of(query_id)].features;
  const FeatureMatrix query = query_head ? project(raw_query, *query_head) : raw_query;

  AlignmentDump dump;
  dump.query_id = std::string(query_id);
  dump.query_modality = query_modality;
  for (const std::string& id : candidate_ids) {
    const FeatureMatrix& raw = context_pack[context_pack.index_of(id)].features;
    const FeatureMatrix context = context_head ? project(raw, *context_head) : raw;
    const auto weights = attention_weights(local_similarity(query, context), cfg);
    AlignmentDump::Entry entry{id, local_global_scores(query, context_aware_vectors(weights, context), cfg), 0.0};
    entry.pooled = lgmm_score(query, context, cfg);
    const double check = lse_pool(entry.local_scores, cfg);
    if (!(std::abs(check - entry.pooled) <= 1e-9)) {
      throw NumericError("alignment dump for '" + id + "' is inconsistent: pooled " +
                         std::to_string(entry.pooled) + " vs " + std::to_string(check));
    }
    dump.entries.push_back(std::move(entry));
  }
  return dump;
}

void write_alignment(std::ostream& out, const AlignmentDump& dump) {
  const FormatGuard guard(out);
  out << "# query_id=" << dump.query_id << " query_modality=" << to_string(dump.query_modality)
      << '\n';
  out << "query_unit_index\tcontext_id\tlocal_score\n";
  out << std::setprecision(17);
  for (const auto& e : dump.entries) {
    for (std::size_t i = 0; i < e.local_scores.size(); ++i) {
      out << i << '\t' << e.context_id << '\t' << e.local_scores[i] << '\n';
    }
    out << "pooled\t" << e.context_id << '\t' << e.pooled << '\n';
  }
}

std::vector<AblationRow> run_loss_ablation(const RetrievalDataset& train_set,
                                           const RetrievalDataset& eval_set,
                                           const TrainConfig& base) {
  struct Variant {
    const char* label;
    LossTerms terms;
  };
  const Variant variants[] = {{"L", {true, true}},
                              {"L-Jnt", {false, true}},
                              {"L-IntraC", {true, false}},
                              {"L-IntraC-Jnt", {false, false}}};
  const EvalOptions options{base.scoring, AggregationMode::kLgmm, ScorePolicy::kDirectional};
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    TrainConfig cfg = base;
    cfg.terms = v.terms;
    TrainResult trained = train(train_set, cfg);
    rows.push_back({v.label, v.terms, trained.initial, trained.final,
                    evaluate(eval_set, &trained.heads, options)});
  }
  return rows;
}

void write_ablation_table(std::ostream& out, std::span<const AblationRow> rows) {
  const FormatGuard guard(out);
  out << "config\tinter_initial\tinter_final\tT2A_R@1\tT2A_R@5\tT2A_R@10\tA2T_R@1\tA2T_R@5\tA2T_R@10\n";
  out << std::fixed << std::setprecision(4);
  for (const AblationRow& r : rows) {
    out << r.label << '\t' << r.initial.inter << '\t' << r.final.inter << '\t' << r.report.t2a.r1
        << '\t' << r.report.t2a.r5 << '\t' << r.report.t2a.r10 << '\t' << r.report.a2t.r1 << '\t'
        << r.report.a2t.r5 << '\t' << r.report.a2t.r10 << '\n';
  }
}

}  // namespace lgmm
