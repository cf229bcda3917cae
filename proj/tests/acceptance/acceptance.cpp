// Acceptance harness: one PASS/FAIL line per criterion, each timed against
// its runtime budget.
//
// Usage: lgmm_acceptance [--expect-fail N]...
// A criterion named with --expect-fail still prints FAIL when it fails, but
// does not turn the exit status nonzero. The rationale for each such entry
// lives next to the test registration.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"
#include "lgmm/eval.hpp"
#include "lgmm/gradcheck.hpp"
#include "lgmm/kernel.hpp"
#include "lgmm/losses.hpp"
#include "lgmm/model.hpp"
#include "oracles.hpp"

using namespace lgmm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;  // <= 0: no budget
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

oracle::Mat to_oracle(const Matrix& m) {
  oracle::Mat out(m.rows(), std::vector<oracle::Real>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

Matrix uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = u(rng);
  return m;
}

ScoreMatrix scores(Matrix m, Modality q = Modality::kAudio, Modality c = Modality::kText) {
  return ScoreMatrix{std::move(m), q, c};
}
ScoreMatrix audio_audio(Matrix m) { return scores(std::move(m), Modality::kAudio, Modality::kAudio); }
ScoreMatrix text_text(Matrix m) { return scores(std::move(m), Modality::kText, Modality::kText); }
ScoreMatrix text_audio(Matrix m) { return scores(std::move(m), Modality::kText, Modality::kAudio); }

class ScratchDir {
 public:
  ScratchDir() {
    path_ = fs::temp_directory_path() / ("lgmm_accept_" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1 -------------------------------------------------------------------------
Outcome kernel_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> rows(1, 5), dims(1, 8);
  std::uniform_real_distribution<double> tau(0.05, 2.0), lambda(0.5, 50.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = dims(rng);
    const Matrix q = uniform(rng, rows(rng), d, -2.0, 2.0), c = uniform(rng, rows(rng), d, -2.0, 2.0);
    ScoringConfig cfg;
    if (trial % 2) {
      cfg.tau_w = tau(rng);
      cfg.lambda = lambda(rng);
    }
    const double got = lgmm_score(FeatureMatrix(q), FeatureMatrix(c), cfg);
    const auto want = oracle::lgmm(to_oracle(q), to_oracle(c), cfg.tau_w, cfg.lambda, cfg.epsilon);
    worst = std::max(worst, static_cast<double>(std::abs(static_cast<oracle::Real>(got) - want)));
  }
  return {worst <= 1e-10, fmt("max |lgmm - oracle| = %.3g over 100 instances (tol 1e-10)", worst)};
}

// 2 -------------------------------------------------------------------------
Outcome lse_limits() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> len(1, 16);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ScoringConfig sharp, flat;
  sharp.lambda = 1e3;
  flat.lambda = 1e-3;
  double worst_mean_gap = 0.0;
  bool max_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(len(rng));
    for (double& x : s) x = u(rng);
    const double mx = *std::max_element(s.begin(), s.end());
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    const double gap_max = std::abs(lse_pool(s, sharp) - mx);
    const double bound = std::log(static_cast<double>(s.size())) / 1e3;
    max_ok = max_ok && gap_max <= bound + 1e-15;
    worst_mean_gap = std::max(worst_mean_gap, std::abs(lse_pool(s, flat) - mean));
  }
  const bool mean_ok = worst_mean_gap <= 1e-2;
  std::ostringstream detail;
  detail << "lambda=1e3 within log(n)/lambda of max: " << (max_ok ? "yes" : "no")
         << "; lambda=1e-3 worst |lse - mean| = " << worst_mean_gap
         << " (tol 1e-2; the sum-form pool tends to mean + log(n)/lambda as lambda shrinks)";
  return {max_ok && mean_ok, detail.str()};
}

// 3 -------------------------------------------------------------------------
Outcome invariances() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> rows(1, 5), dims(1, 8);
  ScoringConfig cfg;
  cfg.epsilon = 0.0;
  double worst = 0.0;
  auto permuted = [&](const Matrix& m) {
    std::vector<std::size_t> order(m.rows());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(order[r], c);
    return FeatureMatrix(std::move(out));
  };
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = dims(rng);
    const FeatureMatrix q(uniform(rng, rows(rng), d, -1.0, 1.0)), c(uniform(rng, rows(rng), d, -1.0, 1.0));
    const double base = lgmm_score(q, c, cfg);
    for (double k : {0.1, 3.0, 100.0}) {
      worst = std::max(worst, std::abs(lgmm_score(q.scaled(k), c, cfg) - base));
      worst = std::max(worst, std::abs(lgmm_score(q, c.scaled(k), cfg) - base));
    }
    worst = std::max(worst, std::abs(lgmm_score(permuted(q.matrix()), c, cfg) - base));
    worst = std::max(worst, std::abs(lgmm_score(q, permuted(c.matrix()), cfg) - base));
  }
  return {worst <= 1e-6, fmt("max score change = %.3g under scaling and row permutation (tol 1e-6)", worst)};
}

// 4 -------------------------------------------------------------------------
Outcome loss_closed_forms() {
  LossConfig cfg;
  std::vector<std::string> problems;
  double worst_inter = 0.0;
  for (std::size_t b : {2u, 4u, 8u}) {
    const double got = inter_modal_contrastive(scores(Matrix(b, b, 0.37)), cfg);
    worst_inter = std::max(worst_inter, std::abs(got - 2.0 * std::log(static_cast<double>(b))));
  }
  if (worst_inter > 1e-9) problems.push_back(fmt("constant-matrix InterC off by %.3g", worst_inter));

  LossConfig unit;
  unit.tau = 1.0;
  const double hand = inter_modal_contrastive(scores(Matrix{{1, 0}, {0, 1}}), unit);
  if (std::abs(hand - 2.0 * std::log(1.0 + std::exp(-1.0))) > 1e-9) problems.push_back("B=2 InterC hand example");

  LossConfig full_beta = cfg;
  full_beta.beta = 1.0;
  std::mt19937_64 rng(404);
  double worst_jnt = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix aa = uniform(rng, 4, 4, -1, 1), tt = uniform(rng, 4, 4, -1, 1);
    worst_jnt = std::max(worst_jnt, std::abs(joint_soft_supervision(audio_audio(aa), text_text(tt), scores(aa), text_audio(tt),
                                                                      MatchLabels(4), full_beta)));
  }
  if (worst_jnt != 0.0) problems.push_back(fmt("Jnt on matched distributions = %.3g", worst_jnt));

  const auto zeros = [&](std::size_t b, Matrix at) {
    return intra_modal_contrastive(scores(std::move(at)), audio_audio(Matrix(b, b)), text_text(Matrix(b, b)), unit);
  };
  const double intra2 = zeros(2, Matrix(2, 2));
  const double intra3 = zeros(3, Matrix(3, 3));
  const double intra_neg = zeros(2, Matrix{{1, 0}, {0, 1}});
  if (intra2 != 0.0) problems.push_back(fmt("IntraC B=2 zeros = %.17g", intra2));
  if (std::abs(intra3 - 2.0 * std::log(2.0)) > 1e-15) problems.push_back(fmt("IntraC B=3 zeros = %.17g", intra3));
  if (intra_neg != -2.0) problems.push_back(fmt("IntraC diag-1 case = %.17g", intra_neg));

  std::string detail = fmt("InterC constant err %.2g, hand %.2g; Jnt matched %.2g; ", worst_inter,
                           std::abs(hand - 2.0 * std::log(1.0 + std::exp(-1.0))), worst_jnt) +
                       fmt("IntraC cases %.17g, %.17g, %.17g", intra2, intra3, intra_neg);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// 5 -------------------------------------------------------------------------
Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_name;
  std::set<std::string> covered;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    GradientSuiteConfig cfg;
    cfg.seed = seed;
    for (const GradientCheck& c : run_gradient_suite(cfg)) {
      covered.insert(c.name);
      if (c.report.max_relative_error >= worst) {
        worst = c.report.max_relative_error;
        worst_name = c.name;
      }
    }
  }
  const bool all_terms = covered.count("inter_modal") && covered.count("joint") && covered.count("intra_modal") &&
                         covered.count("total");
  return {all_terms && worst <= 1e-4,
          fmt("worst max relative error %.3g (tol 1e-4) over 3 seeds, B=4", worst) + " in " + worst_name};
}

// 6 -------------------------------------------------------------------------
Outcome kernel_ordering() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticConfig sc;
    sc.seed = seed;
    const SyntheticDataset s = generate_synthetic(sc);
    EvalOptions lg, mm;
    mm.mode = AggregationMode::kMaxMax;
    const double a = t2a_recall_at_1(s.dataset, nullptr, lg), b = t2a_recall_at_1(s.dataset, nullptr, mm);
    ok = ok && a >= b;
    detail += fmt("seed %.0f: LGMM %.3f vs MaxMax %.3f; ", static_cast<double>(seed), a, b);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// 7 -------------------------------------------------------------------------
Outcome loss_ablation() {
  int wins = 0;
  bool all_decrease = true;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticConfig sc;
    sc.seed = seed;
    const SyntheticDataset s = generate_synthetic(sc);
    const auto [train_set, eval_set] = split_holdout(s.dataset, 16);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.adam.lr = 1e-3;
    const auto rows = run_loss_ablation(train_set, eval_set, cfg);
    const double full = rows.front().report.t2a.r1, inter_only = rows.back().report.t2a.r1;
    wins += full >= inter_only;
    for (const auto& r : rows) all_decrease = all_decrease && r.final.inter < r.initial.inter;
    detail += fmt("seed %.0f: L %.4f vs InterC-only %.4f; ", static_cast<double>(seed), full, inter_only);
  }
  detail += "L >= InterC-only on " + std::to_string(wins) + "/3; every InterC decreased: " +
            (all_decrease ? "yes" : "no");
  return {wins >= 2 && all_decrease, detail};
}

// 8 -------------------------------------------------------------------------
Outcome alignment_discrimination() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticConfig sc;
    sc.seed = seed;
    const HardNegativeTriple t = generate_hard_negative_triple(sc);
    const auto& d = t.data.dataset;
    std::vector<std::string> candidates;
    for (const auto& p : d.pairs()) candidates.push_back(d.audio()[p.audio].id);
    const std::string query = d.text()[d.pairs()[0].captions[0]].id;
    const AlignmentDump dump = dump_alignment(d, query, Modality::kText, candidates, nullptr, ScoringConfig{});
    const auto& words = t.data.items[0].word_events[0];
    double margin = std::numeric_limits<double>::infinity();
    std::size_t units = 0;
    for (std::size_t u = 0; u < words.size(); ++u) {
      if (words[u] != t.swapped_event) continue;
      ++units;
      const double pos = dump.entries[0].local_scores[u];
      margin = std::min({margin, pos - dump.entries[1].local_scores[u], pos - dump.entries[2].local_scores[u]});
    }
    ok = ok && units > 0 && margin > 0.0;
    detail += fmt("seed %.0f: min margin %.4f over %.0f swapped units; ", static_cast<double>(seed), margin,
                  static_cast<double>(units));
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// 9 -------------------------------------------------------------------------
bool every_header_corruption_rejected(const Bytes& good, const std::function<void(const Bytes&)>& decode,
                                      std::size_t& tried) {
  for (std::size_t at = 0; at < 16; ++at) {
    for (int mask : {0x01, 0x02, 0x10, 0x80, 0xff}) {
      Bytes bad = good;
      bad[at] ^= static_cast<std::uint8_t>(mask);
      ++tried;
      try {
        decode(bad);
        return false;
      } catch (const Error&) {
      }
    }
  }
  return true;
}

Outcome format_round_trips() {
  std::mt19937_64 rng(909);
  ScratchDir dir;
  std::size_t packs_ok = 0, ckpts_ok = 0, corruptions = 0;
  bool rejected = true;
  std::uniform_int_distribution<std::size_t> small(1, 6), dims(1, 9), count(0, 8);
  std::uniform_real_distribution<float> f32(-1e3f, 1e3f);
  std::normal_distribution<double> wide(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const std::size_t dim = dims(rng);
    std::vector<PackRecord> records;
    for (std::size_t n = count(rng); n > 0; --n) {
      Matrix m(small(rng), dim);
      for (double& x : m.values()) x = f32(rng);
      records.push_back({"item_" + std::to_string(k) + "_" + std::to_string(n), FeatureMatrix(std::move(m))});
    }
    const FeaturePack pack(std::move(records));
    const fs::path pack_path = dir.path() / ("p" + std::to_string(k) + ".lgf");
    write_pack(pack_path, pack);
    const Bytes pack_bytes = read_file(pack_path);
    if (read_pack(pack_path) == pack && encode_pack(decode_pack(pack_bytes)) == pack_bytes) ++packs_ok;
    if (!pack.empty()) {
      rejected = rejected && every_header_corruption_rejected(pack_bytes, [](const Bytes& b) { decode_pack(b); }, corruptions);
    }

    Checkpoint ckpt{init_heads(dims(rng), dims(rng), small(rng) + 1, small(rng) + 1, rng()), TrainConfig{}};
    std::vector<Matrix> params = head_parameters(ckpt.heads);
    for (Matrix& p : params)
      for (double& x : p.values()) x = wide(rng);
    set_head_parameters(ckpt.heads, params);
    ckpt.config.seed = rng();
    ckpt.config.adam.lr = std::ldexp(wide(rng) * wide(rng), -12);
    ckpt.config.terms.joint = k % 2 == 0;
    const fs::path ckpt_path = dir.path() / ("c" + std::to_string(k) + ".lgc");
    save_checkpoint(ckpt_path, ckpt);
    const Bytes ckpt_bytes = read_file(ckpt_path);
    const Checkpoint back = load_checkpoint(ckpt_path);
    if (back.heads == ckpt.heads && to_json(back.config) == to_json(ckpt.config) &&
        encode_checkpoint(back) == ckpt_bytes) {
      ++ckpts_ok;
    }
    rejected = rejected && every_header_corruption_rejected(ckpt_bytes, [](const Bytes& b) { decode_checkpoint(b); }, corruptions);
  }
  return {packs_ok == 100 && ckpts_ok == 100 && rejected,
          fmt("packs %.0f/100 and checkpoints %.0f/100 bit-exact; ", static_cast<double>(packs_ok),
              static_cast<double>(ckpts_ok)) +
              std::to_string(corruptions) + " corrupted headers " + (rejected ? "all rejected" : "NOT all rejected")};
}

// 10 ------------------------------------------------------------------------
Outcome training_determinism() {
  ScratchDir dir;
  const std::string tool = LGMM_TOOL_PATH;
  auto sh = [&](const std::string& args, const std::string& log) {
    const std::string cmd = "\"" + tool + "\" " + args + " > \"" + (dir.path() / log).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const fs::path data = dir.path() / "data";
  if (sh("gen-synthetic --seed 3 --holdout 16 --out \"" + data.string() + "\"", "gen.txt") != 0) {
    return {false, "gen-synthetic failed: " + slurp(dir.path() / "gen.txt")};
  }
  const std::string common = "train --manifest \"" + (data / "manifest.json").string() + "\" --valid-manifest \"" +
                             (data / "valid.json").string() + "\" --seed 11";
  for (const char* run : {"r1", "r2"}) {
    const fs::path out = dir.path() / (std::string(run) + ".lgc");
    if (sh(common + " --out \"" + out.string() + "\"", std::string(run) + ".txt") != 0) {
      return {false, std::string("train failed: ") + slurp(dir.path() / (std::string(run) + ".txt"))};
    }
  }
  const bool same_ckpt = slurp(dir.path() / "r1.lgc") == slurp(dir.path() / "r2.lgc");
  const bool same_log = slurp(dir.path() / "r1.lgc.metrics.jsonl") == slurp(dir.path() / "r2.lgc.metrics.jsonl");
  const auto size = static_cast<double>(fs::file_size(dir.path() / "r1.lgc"));
  return {same_ckpt && same_log, fmt("two 30-epoch CLI runs: checkpoint (%.0f bytes) ", size) +
                                     (same_ckpt ? "identical" : "DIFFERS") + ", metrics log " +
                                     (same_log ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expected_failures;
  for (int k = 1; k < argc; ++k) {
    const std::string arg = argv[k];
    if (arg == "--expect-fail" && k + 1 < argc) {
      expected_failures.insert(std::atoi(argv[++k]));
    } else {
      std::cerr << "usage: lgmm_acceptance [--expect-fail N]...\n";
      return 2;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "kernel oracle equivalence", 5, kernel_oracle},
      {2, "LSE limits", 1, lse_limits},
      {3, "scale and permutation invariance", 5, invariances},
      {4, "loss closed forms", 1, loss_closed_forms},
      {5, "gradient checks", 30, gradient_checks},
      {6, "kernel ordering (LGMM >= MaxMax)", 60, kernel_ordering},
      {7, "loss ablation", 600, loss_ablation},
      {8, "hard-negative alignment", 10, alignment_discrimination},
      {9, "format round trips", 5, format_round_trips},
      {10, "training determinism", 0, training_determinism},
  };

  int unexpected = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = c.budget_seconds <= 0 || seconds < c.budget_seconds;
    const bool pass = o.pass && in_budget;
    std::string budget = c.budget_seconds > 0 ? fmt("%.2fs of %.0fs", seconds, c.budget_seconds) : fmt("%.2fs", seconds);
    if (!in_budget) budget += " OVER BUDGET";
    std::cout << "criterion " << c.id << ": " << (pass ? "PASS" : "FAIL") << " - " << c.title << " - " << o.detail
              << " [" << budget << "]";
    if (!pass && expected_failures.count(c.id)) std::cout << " (known deviation)";
    std::cout << '\n' << std::flush;
    if (!pass && !expected_failures.count(c.id)) ++unexpected;
  }
  std::cout << (unexpected == 0 ? "acceptance: no unexpected failures\n"
                                : "acceptance: " + std::to_string(unexpected) + " unexpected failure(s)\n");
  return unexpected == 0 ? 0 : 1;
}
