#include "lgmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lgmm/error.hpp"
#include "lgmm/eval.hpp"

namespace lgmm {
namespace {

using nlohmann::json;

constexpr std::size_t kParamsPerHead = 4;

Matrix xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (double& v : w.values()) v = dist(rng);
  return w;
}

ProjectionHead make_head(std::size_t d_in, std::size_t d_hidden, std::size_t d_shared,
                         std::mt19937_64& rng) {
  ProjectionHead h;
  h.w1 = xavier(d_in, d_hidden, rng);
  h.b1 = Matrix(1, d_hidden);
  h.w2 = xavier(d_hidden, d_shared, rng);
  h.b2 = Matrix(1, d_shared);
  return h;
}

template <typename T>
T project_with(const T& raw, std::span<const T> p, bool final_rectifier) {
  return project_expr(raw, p[0], p[1], p[2], p[3], final_rectifier);
}

// Batch loss over either plain matrices or recorded variables; `params` in
// head_parameters() order.
template <typename T>
BatchScores<T> batch_scores_expr(std::span<const T> params, const RetrievalDataset& dataset,
                                 std::span<const BatchItem> batch, const TrainConfig& cfg,
                                 bool need_ta, bool need_intra) {
  const std::size_t b = batch.size();
  auto audio_params = params.subspan(0, kParamsPerHead);
  auto text_params = params.subspan(kParamsPerHead, kParamsPerHead);
  std::vector<T> audio, text;
  audio.reserve(b);
  text.reserve(b);
  for (const BatchItem& item : batch) {
    const auto& pair = dataset.pairs().at(item.pair);
    const Matrix& raw_audio = dataset.audio()[pair.audio].features.matrix();
    const Matrix& raw_text = dataset.text()[pair.captions.at(item.caption)].features.matrix();
    audio.push_back(project_with(lift(params[0], raw_audio), audio_params, cfg.final_rectifier));
    text.push_back(project_with(lift(params[0], raw_text), text_params, cfg.final_rectifier));
  }

  auto matrix_of = [&](const std::vector<T>& queries, const std::vector<T>& contexts) {
    std::vector<T> cells;
    cells.reserve(b * b);
    for (std::size_t m = 0; m < b; ++m)
      for (std::size_t n = 0; n < b; ++n) cells.push_back(lgmm_expr(queries[m], contexts[n], cfg.scoring));
    return stack(std::span<const T>(cells), b, b);
  };

  BatchScores<T> s;
  s.at = matrix_of(audio, text);
  s.ta = need_ta ? matrix_of(text, audio) : s.at;
  s.aa = need_intra ? matrix_of(audio, audio) : s.at;
  s.tt = need_intra ? matrix_of(text, text) : s.at;
  return s;
}

template <typename T>
LossParts<T> batch_loss(std::span<const T> params, const RetrievalDataset& dataset,
                        std::span<const BatchItem> batch, const TrainConfig& cfg,
                        const FrozenTargets* frozen = nullptr) {
  const bool need_ta = cfg.terms.joint || cfg.loss.text_query_anchor;
  const bool need_intra = cfg.terms.joint || cfg.terms.intra;
  BatchScores<T> s = batch_scores_expr(params, dataset, batch, cfg, need_ta, need_intra);
  if (frozen != nullptr && cfg.terms.joint) {
    BatchScores<T> targets{s.at, s.ta, lift(params[0], frozen->aa), lift(params[0], frozen->tt)};
    return total_expr(s, Matrix::identity(batch.size()), cfg.loss, cfg.terms, &targets);
  }
  return total_expr(s, Matrix::identity(batch.size()), cfg.loss, cfg.terms);
}

void accumulate(LossSummary& sum, const LossParts<Matrix>& parts) {
  sum.inter += parts.inter.item();
  if (parts.joint) sum.joint = sum.joint.value_or(0.0) + parts.joint->item();
  if (parts.intra) sum.intra = sum.intra.value_or(0.0) + parts.intra->item();
  sum.total += parts.total.item();
  ++sum.batches;
}

void accumulate(LossSummary& sum, const LossParts<Var>& parts) {
  LossParts<Matrix> plain{parts.inter.value(), std::nullopt, std::nullopt, parts.total.value()};
  if (parts.joint) plain.joint = parts.joint->value();
  if (parts.intra) plain.intra = parts.intra->value();
  accumulate(sum, plain);
}

void finish(LossSummary& sum) {
  if (sum.batches == 0) return;
  const double n = static_cast<double>(sum.batches);
  sum.inter /= n;
  if (sum.joint) *sum.joint /= n;
  if (sum.intra) *sum.intra /= n;
  sum.total /= n;
}

void require_trainable(const RetrievalDataset& dataset, const TrainConfig& cfg) {
  if (dataset.pairs().size() < cfg.batch_size) {
    throw ConfigError("dataset holds " + std::to_string(dataset.pairs().size()) +
                      " pair(s), fewer than one batch of " + std::to_string(cfg.batch_size));
  }
  if (dataset.audio().dim() == 0 || dataset.text().dim() == 0) {
    throw ConfigError("dataset has empty feature packs");
  }
}

bool all_zero(std::span<const Matrix> grads) {
  return std::all_of(grads.begin(), grads.end(), [](const Matrix& g) {
    return std::all_of(g.values().begin(), g.values().end(), [](double v) { return v == 0.0; });
  });
}

json summary_json(const LossSummary& s) {
  json j = {{"inter", s.inter}, {"total", s.total}, {"batches", s.batches}};
  if (s.joint) j["joint"] = *s.joint;
  if (s.intra) j["intra"] = *s.intra;
  return j;
}

}  // namespace

FeatureMatrix project(const FeatureMatrix& raw, const ProjectionHead& head) {
  if (raw.dim() != head.d_in()) {
    throw ShapeError("projection head expects dim " + std::to_string(head.d_in()) + ", got " +
                     std::to_string(raw.dim()));
  }
  return FeatureMatrix(
      project_expr(raw.matrix(), head.w1, head.b1, head.w2, head.b2, head.final_rectifier));
}

HeadPair init_heads(std::size_t d_in_audio, std::size_t d_in_text, std::size_t d_hidden,
                    std::size_t d_shared, std::uint64_t seed) {
  if (d_in_audio < 1 || d_in_text < 1 || d_hidden < 1 || d_shared < 1) {
    throw ConfigError("projection dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  HeadPair heads;
  heads.audio = make_head(d_in_audio, d_hidden, d_shared, rng);
  heads.text = make_head(d_in_text, d_hidden, d_shared, rng);
  return heads;
}

OptimizerState OptimizerState::for_params(std::span<const Matrix> params,
                                          const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  for (const Matrix& p : params) {
    s.first_moment.emplace_back(p.rows(), p.cols());
    s.second_moment.emplace_back(p.rows(), p.cols());
  }
  return s;
}

void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, OptimizerState& state,
               std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(grads[p]) || !params[p].same_shape(state.first_moment[p])) {
      throw ShapeError("adam_step: gradient shape differs for parameter " + std::to_string(p));
    }
    if (!grads[p].all_finite()) {
      throw NumericError("non-finite gradient for parameter " +
                         (p < names.size() ? "'" + names[p] + "'" : "#" + std::to_string(p)) +
                         "; step skipped");
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto value = params[p].values();
    auto g = grads[p].values();
    auto m = state.first_moment[p].values();
    auto v = state.second_moment[p].values();
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      value[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  loss.validate();
  scoring.validate();
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (terms.intra && batch_size < 2) {
    throw ConfigError("intra-modal contrastive loss needs batch size >= 2");
  }
  if (d_hidden < 1 || d_shared < 1) throw ConfigError("projection dimensions must be >= 1");
  if (!(adam.lr > 0.0) || !(adam.epsilon > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("invalid Adam settings");
  }
}

std::string to_json(const TrainConfig& cfg) {
  json j = {{"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"seed", cfg.seed},
            {"tau", cfg.loss.tau},
            {"beta", cfg.loss.beta},
            {"tau_kl", cfg.loss.tau_kl},
            {"text_query_anchor", cfg.loss.text_query_anchor},
            {"tau_w", cfg.scoring.tau_w},
            {"lambda", cfg.scoring.lambda},
            {"epsilon", cfg.scoring.epsilon},
            {"joint", cfg.terms.joint},
            {"intra", cfg.terms.intra},
            {"d_hidden", cfg.d_hidden},
            {"d_shared", cfg.d_shared},
            {"lr", cfg.adam.lr},
            {"beta1", cfg.adam.beta1},
            {"beta2", cfg.adam.beta2},
            {"adam_epsilon", cfg.adam.epsilon},
            {"final_rectifier", cfg.final_rectifier}};
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("training config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.loss.tau = j.at("tau").get<double>();
    cfg.loss.beta = j.at("beta").get<double>();
    cfg.loss.tau_kl = j.at("tau_kl").get<double>();
    cfg.loss.text_query_anchor = j.at("text_query_anchor").get<bool>();
    cfg.scoring.tau_w = j.at("tau_w").get<double>();
    cfg.scoring.lambda = j.at("lambda").get<double>();
    cfg.scoring.epsilon = j.at("epsilon").get<double>();
    cfg.terms.joint = j.at("joint").get<bool>();
    cfg.terms.intra = j.at("intra").get<bool>();
    cfg.d_hidden = j.at("d_hidden").get<std::size_t>();
    cfg.d_shared = j.at("d_shared").get<std::size_t>();
    cfg.adam.lr = j.at("lr").get<double>();
    cfg.adam.beta1 = j.at("beta1").get<double>();
    cfg.adam.beta2 = j.at("beta2").get<double>();
    cfg.adam.epsilon = j.at("adam_epsilon").get<double>();
    cfg.final_rectifier = j.at("final_rectifier").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config is incomplete: ") + e.what());
  }
  return cfg;
}

std::vector<Matrix> head_parameters(const HeadPair& heads) {
  return {heads.audio.w1, heads.audio.b1, heads.audio.w2, heads.audio.b2,
          heads.text.w1,  heads.text.b1,  heads.text.w2,  heads.text.b2};
}

void set_head_parameters(HeadPair& heads, std::span<const Matrix> params) {
  if (params.size() != 2 * kParamsPerHead) throw ShapeError("expected 8 head parameters");
  heads.audio.w1 = params[0];
  heads.audio.b1 = params[1];
  heads.audio.w2 = params[2];
  heads.audio.b2 = params[3];
  heads.text.w1 = params[4];
  heads.text.b1 = params[5];
  heads.text.w2 = params[6];
  heads.text.b2 = params[7];
}

std::vector<std::string> head_parameter_names() {
  return {"audio.w1", "audio.b1", "audio.w2", "audio.b2",
          "text.w1",  "text.b1",  "text.w2",  "text.b2"};
}

LossParts<Var> record_batch_loss(Tape& tape, std::span<const Var> params,
                                 const RetrievalDataset& dataset, std::span<const BatchItem> batch,
                                 const TrainConfig& cfg, const FrozenTargets* frozen) {
  if (params.size() != 2 * kParamsPerHead) throw ShapeError("expected 8 head parameters");
  for (const Var& p : params) {
    if (p.tape() != &tape) throw ContractError("parameters belong to another tape");
  }
  return batch_loss<Var>(params, dataset, batch, cfg, frozen);
}

LossParts<Matrix> batch_loss_value(const HeadPair& heads, const RetrievalDataset& dataset,
                                   std::span<const BatchItem> batch, const TrainConfig& cfg) {
  const std::vector<Matrix> params = head_parameters(heads);
  TrainConfig effective = cfg;
  effective.final_rectifier = heads.audio.final_rectifier;
  return batch_loss<Matrix>(params, dataset, batch, effective);
}

BatchScores<Matrix> batch_scores(const HeadPair& heads, const RetrievalDataset& dataset,
                                 std::span<const BatchItem> batch, const ScoringConfig& cfg) {
  const std::vector<Matrix> params = head_parameters(heads);
  TrainConfig effective;
  effective.scoring = cfg;
  effective.final_rectifier = heads.audio.final_rectifier;
  return batch_scores_expr<Matrix>(params, dataset, batch, effective, true, true);
}

LossSummary evaluate_loss(const RetrievalDataset& dataset, const HeadPair& heads,
                          const TrainConfig& cfg) {
  cfg.validate();
  require_trainable(dataset, cfg);
  const std::vector<Matrix> params = head_parameters(heads);
  LossSummary summary;
  std::vector<BatchItem> batch;
  for (std::size_t start = 0; start + cfg.batch_size <= dataset.pairs().size();
       start += cfg.batch_size) {
    batch.clear();
    for (std::size_t k = start; k < start + cfg.batch_size; ++k) batch.push_back({k, 0});
    accumulate(summary, batch_loss<Matrix>(params, dataset, batch, cfg));
  }
  finish(summary);
  return summary;
}

TrainResult train(const RetrievalDataset& dataset, const TrainConfig& cfg,
                  const RetrievalDataset* valid) {
  cfg.validate();
  require_trainable(dataset, cfg);

  TrainResult result;
  result.heads = init_heads(dataset.audio().dim(), dataset.text().dim(), cfg.d_hidden,
                            cfg.d_shared, cfg.seed);
  result.heads.audio.final_rectifier = cfg.final_rectifier;
  result.heads.text.final_rectifier = cfg.final_rectifier;
  result.initial = evaluate_loss(dataset, result.heads, cfg);

  std::vector<Matrix> params = head_parameters(result.heads);
  OptimizerState state = OptimizerState::for_params(params, cfg.adam);
  const std::vector<std::string> names = head_parameter_names();
  // Separate stream from init so changing epochs never perturbs the heads.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const RetrievalDataset& validation = valid ? *valid : dataset;
  const EvalOptions eval_options{cfg.scoring, AggregationMode::kLgmm, ScorePolicy::kDirectional};

  std::vector<std::size_t> order(dataset.pairs().size());
  std::vector<BatchItem> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> caption(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t n = dataset.pairs()[order[k]].captions.size();
      caption[k] = n == 1 ? 0 : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < start + cfg.batch_size; ++k) {
        batch.push_back({order[k], caption[k]});
      }
      Tape tape;
      std::vector<Var> leaves;
      leaves.reserve(params.size());
      for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
      LossParts<Var> parts = record_batch_loss(tape, leaves, dataset, batch, cfg);
      accumulate(metrics.loss, parts);
      tape.backward(parts.total);

      std::vector<Matrix> grads;
      grads.reserve(leaves.size());
      for (const Var& v : leaves) grads.push_back(v.grad());
      if (all_zero(std::span<const Matrix>(grads).subspan(0, kParamsPerHead))) ++metrics.dead_audio_steps;
      if (all_zero(std::span<const Matrix>(grads).subspan(kParamsPerHead))) ++metrics.dead_text_steps;
      adam_step(params, grads, state, names);
    }
    finish(metrics.loss);
    set_head_parameters(result.heads, params);
    metrics.valid_t2a_r1 = t2a_recall_at_1(validation, &result.heads, eval_options);
    result.log.push_back(metrics);
  }
  set_head_parameters(result.heads, params);
  result.final = evaluate_loss(dataset, result.heads, cfg);
  return result;
}

std::string format_metrics_log(const TrainResult& result) {
  std::ostringstream out;
  out << json{{"phase", "initial"}, {"loss", summary_json(result.initial)}}.dump() << '\n';
  for (const EpochMetrics& m : result.log) {
    out << json{{"phase", "epoch"},
                {"epoch", m.epoch},
                {"loss", summary_json(m.loss)},
                {"valid_t2a_r1", m.valid_t2a_r1},
                {"dead_audio_steps", m.dead_audio_steps},
                {"dead_text_steps", m.dead_text_steps}}
               .dump()
        << '\n';
  }
  out << json{{"phase", "final"}, {"loss", summary_json(result.final)}}.dump() << '\n';
  return out.str();
}

Bytes encode_checkpoint(const Checkpoint& checkpoint) {
  const std::vector<Matrix> params = head_parameters(checkpoint.heads);
  const std::vector<std::string> names = head_parameter_names();
  std::vector<NamedMatrix> records;
  for (std::size_t k = 0; k < params.size(); ++k) records.push_back({names[k], params[k]});

  const std::string config = to_json(checkpoint.config);
  Bytes trailer;
  const auto length = static_cast<std::uint32_t>(config.size());
  for (int k = 0; k < 4; ++k) trailer.push_back(static_cast<std::uint8_t>(length >> (8 * k)));
  trailer.insert(trailer.end(), config.begin(), config.end());
  return encode_frame(kCheckpointMagic, records, trailer, ValueWidth::kFloat64);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  DecodedFrame frame = decode_frame(kCheckpointMagic, bytes, ValueWidth::kFloat64);
  const std::vector<std::string> names = head_parameter_names();
  const std::uint64_t trailer_at = bytes.size() - frame.trailer.size();
  if (frame.records.size() != names.size()) {
    throw FormatError(FormatError::Kind::kBadPayload, 16,
                      "checkpoint holds " + std::to_string(frame.records.size()) +
                          " record(s), expected " + std::to_string(names.size()));
  }
  std::vector<Matrix> params;
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (frame.records[k].name != names[k]) {
      throw FormatError(FormatError::Kind::kBadPayload, frame.offsets[k],
                        "expected record '" + names[k] + "', found '" + frame.records[k].name + "'");
    }
    params.push_back(std::move(frame.records[k].values));
  }
  for (std::size_t h = 0; h < 2; ++h) {
    const Matrix* p = &params[h * kParamsPerHead];
    if (p[1].rows() != 1 || p[1].cols() != p[0].cols() || p[2].rows() != p[0].cols() ||
        p[3].rows() != 1 || p[3].cols() != p[2].cols() || p[0].empty() || p[2].empty()) {
      throw FormatError(FormatError::Kind::kDimMismatch, frame.offsets[h * kParamsPerHead],
                        "inconsistent layer shapes in the " + std::string(h == 0 ? "audio" : "text") +
                            " head");
    }
  }
  if (params[2].cols() != params[6].cols()) {
    throw FormatError(FormatError::Kind::kDimMismatch, frame.offsets[6],
                      "audio and text heads project to different dims");
  }

  if (frame.trailer.size() < 4) {
    throw FormatError(FormatError::Kind::kTruncated, trailer_at, "missing config length");
  }
  std::uint32_t length = 0;
  for (int k = 0; k < 4; ++k) length |= static_cast<std::uint32_t>(frame.trailer[k]) << (8 * k);
  if (frame.trailer.size() - 4 < length) {
    throw FormatError(FormatError::Kind::kTruncated, trailer_at + 4, "config runs past the end");
  }
  if (frame.trailer.size() - 4 > length) {
    throw FormatError(FormatError::Kind::kTrailingBytes, trailer_at + 4 + length,
                      "bytes after the config");
  }
  Checkpoint out;
  try {
    out.config = train_config_from_json(std::string(frame.trailer.begin() + 4, frame.trailer.end()));
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kBadPayload, trailer_at + 4, e.what());
  }
  set_head_parameters(out.heads, params);
  out.heads.audio.final_rectifier = out.config.final_rectifier;
  out.heads.text.final_rectifier = out.config.final_rectifier;
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace lgmm
