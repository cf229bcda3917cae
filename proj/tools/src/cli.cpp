#include "lgmm_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <nlohmann/json.hpp>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"
#include "lgmm/eval.hpp"
#include "lgmm/gradcheck.hpp"
#include "lgmm/model.hpp"

namespace lgmm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Writes to the named file, or to `fallback` when the path is empty.
void emit(const std::string& path, std::ostream& fallback,
          const std::function<void(std::ostream&)>& body) {
  if (path.empty()) {
    body(fallback);
    return;
  }
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream file(target, std::ios::binary);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  body(file);
  if (!file) throw IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// Training hyperparameters shared by `train` and `ablate`. Precedence is
// flag, then the --config JSON file, then the built-in default.
class TrainFlags {
 public:
  void attach(CLI::App* app) {
    app->add_option("--config", config_path_, "JSON file with training settings (keys as in checkpoints)")
        ->check(CLI::ExistingFile);
    bind<std::size_t>(app, "--epochs", "Training epochs", [](TrainConfig& c) -> auto& { return c.epochs; });
    bind<std::size_t>(app, "--batch-size", "Pairs per minibatch",
                      [](TrainConfig& c) -> auto& { return c.batch_size; });
    bind<std::uint64_t>(app, "--seed", "Seed for init and shuffling", [](TrainConfig& c) -> auto& { return c.seed; });
    bind<double>(app, "--tau", "Contrastive temperature", [](TrainConfig& c) -> auto& { return c.loss.tau; });
    bind<double>(app, "--beta", "Soft-label blend weight", [](TrainConfig& c) -> auto& { return c.loss.beta; });
    bind<double>(app, "--tau-kl", "Soft-supervision temperature", [](TrainConfig& c) -> auto& { return c.loss.tau_kl; });
    bind<double>(app, "--tau-w", "Attention temperature", [](TrainConfig& c) -> auto& { return c.scoring.tau_w; });
    bind<double>(app, "--lambda", "LogSumExp sharpness", [](TrainConfig& c) -> auto& { return c.scoring.lambda; });
    bind<double>(app, "--lr", "Adam learning rate", [](TrainConfig& c) -> auto& { return c.adam.lr; });
    bind<std::size_t>(app, "--d-hidden", "Projection hidden width", [](TrainConfig& c) -> auto& { return c.d_hidden; });
    bind<std::size_t>(app, "--d-shared", "Shared embedding width", [](TrainConfig& c) -> auto& { return c.d_shared; });
    disable_jnt_ = app->add_flag("--disable-jnt", "Drop the joint soft-supervision term");
    disable_intrac_ = app->add_flag("--disable-intrac", "Drop the intra-modal contrastive term");
  }

  TrainConfig resolve() const {
    json merged = json::parse(to_json(TrainConfig{}));
    if (!config_path_.empty()) {
      json file;
      try {
        file = json::parse(read_text(config_path_));
      } catch (const json::parse_error& e) {
        throw ConfigError("config '" + config_path_ + "' is not valid JSON: " + e.what());
      }
      if (!file.is_object()) throw ConfigError("config '" + config_path_ + "' must be a JSON object");
      for (const auto& [key, value] : file.items()) {
        if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
        merged[key] = value;
      }
    }
    TrainConfig cfg = train_config_from_json(merged.dump());
    for (const auto& apply : setters_) apply(cfg);
    if (disable_jnt_->count() > 0) cfg.terms.joint = false;
    if (disable_intrac_->count() > 0) cfg.terms.intra = false;
    cfg.validate();
    return cfg;
  }

 private:
  template <typename V, typename Field>
  void bind(CLI::App* app, const std::string& flag, const std::string& help, Field field) {
    auto value = std::make_shared<V>(field(defaults_));
    CLI::Option* opt = app->add_option(flag, *value, help)->default_str(to_text(*value));
    setters_.push_back([opt, value, field](TrainConfig& cfg) {
      if (opt->count() > 0) field(cfg) = *value;
    });
  }

  template <typename V>
  static std::string to_text(const V& v) {
    std::ostringstream s;
    s << v;
    return s.str();
  }

  TrainConfig defaults_;
  std::string config_path_;
  std::vector<std::function<void(TrainConfig&)>> setters_;
  CLI::Option* disable_jnt_ = nullptr;
  CLI::Option* disable_intrac_ = nullptr;
};

// --- gen-synthetic -------------------------------------------------------

struct GenArgs {
  SyntheticConfig cfg;
  std::string out;
  std::size_t holdout = 0;
  std::string split = "train";
  bool triple = false;
};

json items_json(const SyntheticDataset& data) {
  json items = json::array();
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const auto& item = data.items[i];
    json entry = {{"audio_id", data.audio[data.dataset.pairs()[i].audio].id},
                  {"events", item.events},
                  {"frame_events", item.frame_events},
                  {"word_events", item.word_events}};
    entry["cloned_from"] = item.cloned_from ? json(*item.cloned_from) : json(nullptr);
    entry["swapped_slot"] = item.swapped_slot ? json(*item.swapped_slot) : json(nullptr);
    items.push_back(std::move(entry));
  }
  return items;
}

int gen_synthetic(const GenArgs& a, std::ostream& out) {
  std::optional<HardNegativeTriple> triple;
  SyntheticDataset data;
  if (a.triple) {
    triple = generate_hard_negative_triple(a.cfg);
    data = triple->data;
  } else {
    data = generate_synthetic(a.cfg);
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_pack(dir / "audio.lgf", data.audio);
  write_pack(dir / "text.lgf", data.text);

  const Split split = parse_split(a.split);
  if (a.holdout > 0 && a.holdout >= data.dataset.pairs().size()) {
    throw ConfigError("--holdout must leave at least one training pair");
  }
  auto retag = [split](const RetrievalDataset& d) {
    std::vector<std::size_t> idx(d.pairs().size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return d.subset(idx, split);
  };
  RetrievalDataset main_set = retag(data.dataset);
  std::optional<RetrievalDataset> held;
  if (a.holdout > 0) {
    auto [train_part, valid_part] = split_holdout(data.dataset, a.holdout);
    main_set = retag(train_part);
    held = std::move(valid_part);
  }
  emit((dir / "manifest.json").string(), out, [&](std::ostream& s) {
    s << format_manifest(main_set.to_manifest("audio.lgf", "text.lgf"));
  });
  if (held) {
    emit((dir / "valid.json").string(), out, [&](std::ostream& s) {
      s << format_manifest(held->to_manifest("audio.lgf", "text.lgf"));
    });
  }
  json truth = {{"seed", a.cfg.seed}, {"items", items_json(data)}};
  if (triple) {
    truth["swapped_slot"] = triple->swapped_slot;
    truth["swapped_event"] = triple->swapped_event;
  }
  emit((dir / "events.json").string(), out, [&](std::ostream& s) { s << truth.dump(2) << '\n'; });

  out << "wrote " << data.audio.size() << " audio items, " << data.text.size() << " captions to "
      << dir.string() << '\n';
  if (held) out << "held out " << held->pairs().size() << " pairs in valid.json\n";
  return kOk;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  TrainFlags flags;
  std::string manifest;
  std::string valid_manifest;
  std::string out;
  std::string metrics;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.flags.resolve();
  const RetrievalDataset data = load_manifest(a.manifest);
  std::optional<RetrievalDataset> valid;
  if (!a.valid_manifest.empty()) valid = load_manifest(a.valid_manifest);

  const TrainResult result = train(data, cfg, valid ? &*valid : nullptr);
  save_checkpoint(a.out, Checkpoint{result.heads, cfg});
  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.jsonl" : a.metrics;
  emit(metrics_path, out, [&](std::ostream& s) { s << format_metrics_log(result); });

  out << std::setprecision(6) << "initial inter " << result.initial.inter << " total "
      << result.initial.total << '\n'
      << "final inter " << result.final.inter << " total " << result.final.total << '\n';
  if (!result.log.empty()) out << "valid T2A R@1 " << result.log.back().valid_t2a_r1 << '\n';
  out << "checkpoint " << a.out << "\nmetrics " << metrics_path << '\n';
  return kOk;
}

// --- evaluate / dump-alignment --------------------------------------------

struct ScoringArgs {
  CLI::Option* tau_w = nullptr;
  CLI::Option* lambda = nullptr;
  double tau_w_value = ScoringConfig{}.tau_w;
  double lambda_value = ScoringConfig{}.lambda;

  void attach(CLI::App* app) {
    tau_w = app->add_option("--tau-w", tau_w_value, "Attention temperature (default: checkpoint, else 0.25)");
    lambda = app->add_option("--lambda", lambda_value, "LogSumExp sharpness (default: checkpoint, else 10)");
  }

  ScoringConfig resolve(const std::optional<Checkpoint>& ckpt) const {
    ScoringConfig cfg = ckpt ? ckpt->config.scoring : ScoringConfig{};
    if (tau_w->count() > 0) cfg.tau_w = tau_w_value;
    if (lambda->count() > 0) cfg.lambda = lambda_value;
    cfg.validate();
    return cfg;
  }
};

std::optional<Checkpoint> maybe_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_checkpoint(path);
}

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  std::string mode = "lgmm";
  std::string direction = "both";
  std::string policy = "directional";
  std::string out;
  ScoringArgs scoring;
};

int evaluate_cmd(const EvalArgs& a, std::ostream& out) {
  const std::optional<Checkpoint> ckpt = maybe_checkpoint(a.checkpoint);
  EvalOptions options;
  options.scoring = a.scoring.resolve(ckpt);
  options.mode = parse_aggregation_mode(a.mode);
  options.policy = parse_score_policy(a.policy);
  std::optional<Direction> only;
  if (a.direction != "both") only = parse_direction(a.direction);

  const RetrievalDataset data = load_manifest(a.manifest);
  const EvalReport report = evaluate(data, ckpt ? &ckpt->heads : nullptr, options);
  emit(a.out, out, [&](std::ostream& s) { write_metrics(s, report, only); });
  return kOk;
}

struct DumpArgs {
  std::string manifest;
  std::string checkpoint;
  std::string query;
  std::string query_modality = "text";
  std::vector<std::string> candidates;
  std::string out;
  ScoringArgs scoring;
};

int dump_cmd(const DumpArgs& a, std::ostream& out) {
  const std::optional<Checkpoint> ckpt = maybe_checkpoint(a.checkpoint);
  const ScoringConfig scoring = a.scoring.resolve(ckpt);
  const Modality modality = parse_modality(a.query_modality);
  const RetrievalDataset data = load_manifest(a.manifest);

  std::vector<std::string> candidates = a.candidates;
  if (candidates.empty()) {
    const FeaturePack& context = modality == Modality::kText ? data.audio() : data.text();
    for (const PackRecord& r : context.records()) candidates.push_back(r.id);
  }
  const AlignmentDump dump =
      dump_alignment(data, a.query, modality, candidates, ckpt ? &ckpt->heads : nullptr, scoring);
  emit(a.out, out, [&](std::ostream& s) { write_alignment(s, dump); });
  return kOk;
}

// --- ablate --------------------------------------------------------------

struct AblateArgs {
  TrainFlags flags;
  std::string manifest;
  std::string valid_manifest;
  std::string out;
};

int ablate_cmd(const AblateArgs& a, std::ostream& out) {
  const TrainConfig cfg = a.flags.resolve();
  const RetrievalDataset train_set = load_manifest(a.manifest);
  const RetrievalDataset eval_set = a.valid_manifest.empty() ? train_set : load_manifest(a.valid_manifest);
  const std::vector<AblationRow> rows = run_loss_ablation(train_set, eval_set, cfg);
  emit(a.out, out, [&](std::ostream& s) { write_ablation_table(s, rows); });
  return kOk;
}

// --- grad-check ----------------------------------------------------------

struct GradArgs {
  GradientSuiteConfig cfg;
};

int grad_check_cmd(const GradArgs& a, std::ostream& out) {
  a.cfg.loss.validate();
  a.cfg.scoring.validate();
  const std::vector<GradientCheck> checks = run_gradient_suite(a.cfg);
  double worst = 0.0;
  bool passed = true;
  out << std::scientific << std::setprecision(3);
  for (const GradientCheck& c : checks) {
    out << std::left << std::setw(22) << c.name << " max_rel_err " << c.report.max_relative_error
        << (c.report.passed ? "  ok" : "  FAIL") << '\n';
    worst = std::max(worst, c.report.max_relative_error);
    passed = passed && c.report.passed;
  }
  out << "worst relative error " << worst << " (tolerance " << a.cfg.tolerance << ") "
      << (passed ? "PASS" : "FAIL") << '\n';
  out.unsetf(std::ios::floatfield);
  return passed ? kOk : kGradCheckFailed;
}

// --- pack-inspect --------------------------------------------------------

int pack_inspect_cmd(const std::string& path, std::ostream& out) {
  const Bytes bytes = read_file(path);
  const bool checkpoint =
      bytes.size() >= 4 && std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin());
  if (checkpoint) {
    const DecodedFrame frame = decode_frame(kCheckpointMagic, bytes, ValueWidth::kFloat64);
    out << "magic LGC1 version " << kFormatVersion << " records " << frame.records.size() << " bytes "
        << bytes.size() << '\n';
    for (const NamedMatrix& r : frame.records) {
      out << r.name << '\t' << r.values.rows() << '\t' << r.values.cols() << '\n';
    }
    const Checkpoint ckpt = decode_checkpoint(bytes);
    out << "config " << to_json(ckpt.config) << '\n';
    return kOk;
  }
  const FeaturePack pack = decode_pack(bytes);
  out << "magic LGF1 version " << kFormatVersion << " records " << pack.size() << " dim "
      << pack.dim() << " bytes " << bytes.size() << '\n';
  for (const PackRecord& r : pack.records()) {
    out << r.id << '\t' << r.features.rows() << '\t' << r.features.dim() << '\n';
  }
  return kOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local-to-global multiscale matching for audio-text retrieval", "lgmm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  int status = kOk;

  GenArgs gen;
  CLI::App* gen_app = app.add_subcommand("gen-synthetic", "Write synthetic packs, manifest and event ground truth");
  gen_app->add_option("--out", gen.out, "Output directory")->required();
  gen_app->add_option("--seed", gen.cfg.seed, "Generator seed")->capture_default_str();
  gen_app->add_option("--items", gen.cfg.items, "Number of audio items")->capture_default_str();
  gen_app->add_option("--vocab", gen.cfg.vocab_size, "Event vocabulary size")->capture_default_str();
  gen_app->add_option("--dim", gen.cfg.dim, "Feature dimension")->capture_default_str();
  gen_app->add_option("--events", gen.cfg.events_per_item, "Events per item")->capture_default_str();
  gen_app->add_option("--frames", gen.cfg.frames_per_event, "Audio frames per event")->capture_default_str();
  gen_app->add_option("--words", gen.cfg.words_per_event, "Caption words per event")->capture_default_str();
  gen_app->add_option("--captions", gen.cfg.captions_per_item, "Captions per item")->capture_default_str();
  gen_app->add_option("--noise", gen.cfg.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  gen_app->add_option("--hard-negatives", gen.cfg.hard_negative_fraction, "Fraction of one-event-swap clones")
      ->capture_default_str();
  gen_app->add_option("--holdout", gen.holdout, "Move the last N pairs into valid.json")->capture_default_str();
  gen_app->add_option("--split", gen.split, "Split tag of manifest.json (train, valid, test)")->capture_default_str();
  gen_app->add_flag("--triple", gen.triple, "Emit a positive and two hard negatives instead");
  gen_app->callback([&] { status = gen_synthetic(gen, out); });

  TrainArgs tr;
  CLI::App* train_app = app.add_subcommand("train", "Train projection heads and write a checkpoint");
  train_app->add_option("--manifest", tr.manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  train_app->add_option("--valid-manifest", tr.valid_manifest, "Validation manifest (default: training set)")
      ->check(CLI::ExistingFile);
  train_app->add_option("--out", tr.out, "Checkpoint path")->required();
  train_app->add_option("--metrics", tr.metrics, "Metrics log path (default: <out>.metrics.jsonl)");
  tr.flags.attach(train_app);
  train_app->callback([&] { status = train_cmd(tr, out); });

  EvalArgs ev;
  CLI::App* eval_app = app.add_subcommand("evaluate", "Report R@1/5/10 in both retrieval directions");
  eval_app->add_option("--manifest", ev.manifest, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  eval_app->add_option("--checkpoint", ev.checkpoint, "Checkpoint (default: identity heads)")
      ->check(CLI::ExistingFile);
  eval_app->add_option("--mode", ev.mode, "lgmm, max-mean, max-max, mean-mean or mean-max")->capture_default_str();
  eval_app->add_option("--direction", ev.direction, "t2a, a2t or both")->capture_default_str();
  eval_app->add_option("--policy", ev.policy, "directional or symmetric scoring")->capture_default_str();
  eval_app->add_option("--out", ev.out, "Metrics file (default: stdout)");
  ev.scoring.attach(eval_app);
  eval_app->callback([&] { status = evaluate_cmd(ev, out); });

  AblateArgs ab;
  CLI::App* ablate_app = app.add_subcommand("ablate", "Train the four loss configurations and compare");
  ablate_app->add_option("--manifest", ab.manifest, "Training manifest")->required()->check(CLI::ExistingFile);
  ablate_app->add_option("--valid-manifest", ab.valid_manifest, "Evaluation manifest (default: training set)")
      ->check(CLI::ExistingFile);
  ablate_app->add_option("--out", ab.out, "Table file (default: stdout)");
  ab.flags.attach(ablate_app);
  ablate_app->callback([&] { status = ablate_cmd(ab, out); });

  DumpArgs dp;
  CLI::App* dump_app = app.add_subcommand("dump-alignment", "Per-unit local-global scores against candidates");
  dump_app->add_option("--manifest", dp.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  dump_app->add_option("--query", dp.query, "Query item id")->required();
  dump_app->add_option("--query-modality", dp.query_modality, "text or audio")->capture_default_str();
  dump_app->add_option("--candidates", dp.candidates, "Context ids (default: all of the other modality)")
      ->delimiter(',');
  dump_app->add_option("--checkpoint", dp.checkpoint, "Checkpoint (default: identity heads)")
      ->check(CLI::ExistingFile);
  dump_app->add_option("--out", dp.out, "Dump file (default: stdout)");
  dp.scoring.attach(dump_app);
  dump_app->callback([&] { status = dump_cmd(dp, out); });

  GradArgs gc;
  CLI::App* grad_app = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  grad_app->add_option("--seed", gc.cfg.seed, "Seed for the random batches")->capture_default_str();
  grad_app->add_option("--batch-size", gc.cfg.batch, "Batch size")->capture_default_str();
  grad_app->add_option("--tau", gc.cfg.loss.tau, "Contrastive temperature")->capture_default_str();
  grad_app->add_option("--beta", gc.cfg.loss.beta, "Soft-label blend weight")->capture_default_str();
  grad_app->add_option("--tau-kl", gc.cfg.loss.tau_kl, "Soft-supervision temperature")->capture_default_str();
  grad_app->add_option("--tau-w", gc.cfg.scoring.tau_w, "Attention temperature")->capture_default_str();
  grad_app->add_option("--lambda", gc.cfg.scoring.lambda, "LogSumExp sharpness")->capture_default_str();
  grad_app->add_option("--step", gc.cfg.step, "Central-difference step")->capture_default_str();
  grad_app->add_option("--tolerance", gc.cfg.tolerance, "Maximum relative error")->capture_default_str();
  grad_app->callback([&] { status = grad_check_cmd(gc, out); });

  std::string pack_path;
  CLI::App* inspect_app = app.add_subcommand("pack-inspect", "Print the header and record shapes of a pack or checkpoint");
  inspect_app->add_option("path", pack_path, "Pack or checkpoint file")->required()->check(CLI::ExistingFile);
  inspect_app->callback([&] { status = pack_inspect_cmd(pack_path, out); });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand --help surfaces here with the subcommand still selected.
    if (e.get_exit_code() == 0) {
      const auto chosen = app.get_subcommands();
      out << (chosen.empty() ? app.help() : chosen.front()->help());
      return kOk;
    }
    err << "lgmm: " << e.what() << '\n';
    return kUsage;
  }
  (void)err;
  return status;
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto fail = [&](const char* kind, const std::exception& e, int code) {
    err << "lgmm: " << kind << ": " << one_line(e.what()) << '\n';
    return code;
  };
  try {
    return dispatch(args, out, err);
  } catch (const FormatError& e) {
    return fail("format error", e, kFormat);
  } catch (const ShapeError& e) {
    return fail("shape error", e, kShape);
  } catch (const ContractError& e) {
    return fail("contract error", e, kContract);
  } catch (const ValidationError& e) {
    return fail("validation error", e, kValidation);
  } catch (const ConfigError& e) {
    return fail("config error", e, kConfig);
  } catch (const IoError& e) {
    return fail("io error", e, kIo);
  } catch (const fs::filesystem_error& e) {
    return fail("io error", e, kIo);
  } catch (const NumericError& e) {
    return fail("numeric error", e, kNumeric);
  } catch (const LookupError& e) {
    return fail("lookup error", e, kLookup);
  } catch (const std::exception& e) {
    return fail("error", e, kFailure);
  }
}

}  // namespace lgmm::cli
