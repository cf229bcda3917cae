#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "helpers.hpp"
#include "lgmm/error.hpp"
#include "lgmm/kernel.hpp"

using namespace lgmm;
using testing::random_features;
using testing::to_oracle;

namespace {

ScoringConfig exact_cfg() {
  ScoringConfig cfg;
  cfg.epsilon = 0.0;
  return cfg;
}

FeatureMatrix permute_rows(const FeatureMatrix& f, const std::vector<std::size_t>& order) {
  Matrix out(f.rows(), f.dim());
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy(f.row(order[i]).begin(), f.row(order[i]).end(), out.row(i).begin());
  }
  return FeatureMatrix(out);
}

}  // namespace

TEST_SUITE("kernel") {
  TEST_CASE("feature matrix invariants") {
    CHECK_THROWS_AS(FeatureMatrix(Matrix(0, 3)), ContractError);
    CHECK_THROWS_AS(FeatureMatrix(Matrix(2, 0)), ContractError);
    CHECK_THROWS_AS(FeatureMatrix({{1.0, std::nan("")}}), NumericError);
    CHECK_THROWS_AS(FeatureMatrix({{INFINITY}}), NumericError);
  }

  TEST_CASE("scoring config validation") {
    ScoringConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.tau_w = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.epsilon = -1e-12;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.epsilon = 0;
    CHECK_NOTHROW(cfg.validate());
  }

  TEST_CASE("local similarity examples") {
    CHECK(local_similarity({{2}}, {{3}}).values == Matrix{{6}});
    CHECK(local_similarity({{1, 0}, {0, 1}}, {{1, 0}}).values == Matrix{{1}, {0}});
    CHECK(local_similarity({{1, 2}, {3, 4}}, {{5, 6}, {7, 8}}).values == Matrix{{17, 23}, {39, 53}});
    CHECK_THROWS_AS(local_similarity({{1, 2}}, {{1, 2, 3}}), ShapeError);
  }

  TEST_CASE("attention weight examples") {
    const ScoringConfig cfg;
    const WeightMatrix uniform = attention_weights({Matrix{{0.4, 0.4, 0.4, 0.4}}}, cfg);
    for (double w : uniform.values.values()) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));

    const WeightMatrix single = attention_weights({Matrix{{1}, {1}}}, cfg);
    CHECK(single.values == Matrix{{1}, {1}});

    const WeightMatrix half = attention_weights({Matrix{{3, 4}}}, exact_cfg());
    CHECK(half.values(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(half.values(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("zero columns contribute zero before the softmax") {
    // Column 1 is all zero; its normalized entries are 0, column 0 normalizes to +-0.6/0.8.
    const WeightMatrix w = attention_weights({Matrix{{3, 0}, {-4, 0}}}, ScoringConfig{});
    const double tau = 0.25;
    const double e0 = std::exp(0.6 / tau), e1 = std::exp(-0.8 / tau);
    CHECK(w.values(0, 0) == doctest::Approx(e0 / (e0 + 1)).epsilon(1e-12));
    CHECK(w.values(1, 0) == doctest::Approx(e1 / (e1 + 1)).epsilon(1e-12));
    CHECK(w.values.all_finite());

    const WeightMatrix all_zero = attention_weights({Matrix(2, 3, 0.0)}, exact_cfg());
    for (double x : all_zero.values.values()) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }

  TEST_CASE("attention rows are probability distributions") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      std::uniform_int_distribution<std::size_t> n(1, 7);
      const Matrix s = testing::random_matrix(rng, n(rng), n(rng), -50, 50);
      const WeightMatrix w = attention_weights({s}, ScoringConfig{});
      for (std::size_t i = 0; i < s.rows(); ++i) {
        double total = 0;
        for (double x : w.values.row(i)) {
          CHECK(x >= 0.0);
          CHECK(x <= 1.0);
          total += x;
        }
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("context-aware vector examples") {
    CHECK(context_aware_vectors({Matrix{{1}}}, {{7, 8}}).matrix() == Matrix{{7, 8}});
    CHECK(context_aware_vectors({Matrix{{0.5, 0.5}}}, {{2, 0}, {0, 2}}).matrix() == Matrix{{1, 1}});
    CHECK(context_aware_vectors({Matrix{{0.25, 0.75}}}, {{4, 0}, {0, 4}}).matrix() == Matrix{{1, 3}});
    CHECK_THROWS_AS(context_aware_vectors({Matrix{{0.5, 0.5}}}, {{1, 0}}), ShapeError);
  }

  TEST_CASE("local-global score examples") {
    const ScoringConfig cfg;
    CHECK(local_global_scores({{1, 0}}, {{1, 0}}, cfg)[0] == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(local_global_scores({{1, 0}}, {{0, 1}}, cfg)[0] == 0.0);
    CHECK(local_global_scores({{1, 1}}, {{1, 0}}, cfg)[0] ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-11));
    CHECK_THROWS_AS(local_global_scores({{1, 1}}, {{1, 0}, {0, 1}}, cfg), ShapeError);
  }

  TEST_CASE("lse pool examples") {
    ScoringConfig cfg;
    const std::vector<double> constant(5, 0.3);
    CHECK(lse_pool(constant, cfg) == doctest::Approx(0.3 + std::log(5.0) / 10).epsilon(1e-14));
    const std::vector<double> single{0.9};
    cfg.lambda = 3.7;
    CHECK(lse_pool(single, cfg) == doctest::Approx(0.9).epsilon(1e-15));
    cfg.lambda = 10;
    const std::vector<double> two{0.0, 1.0};
    CHECK(lse_pool(two, cfg) == doctest::Approx(std::log1p(std::exp(10.0)) / 10).epsilon(1e-14));
    CHECK(lse_pool(two, cfg) == doctest::Approx(1.00000454).epsilon(1e-8));
    CHECK_THROWS_AS(lse_pool(std::vector<double>{}, cfg), ContractError);
  }

  TEST_CASE("lse bounds hold on random vectors") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 1 + trial % 16;
      std::vector<double> s(n);
      for (double& x : s) x = u(rng);
      ScoringConfig cfg;
      cfg.lambda = std::pow(10.0, u(rng) / 2);
      const double hi = *std::max_element(s.begin(), s.end());
      const double pooled = lse_pool(s, cfg);
      CHECK(pooled >= hi - 1e-12);
      CHECK(pooled <= hi + std::log(static_cast<double>(n)) / cfg.lambda + 1e-12);
    }
  }

  TEST_CASE("lgmm score examples") {
    const ScoringConfig cfg;
    const double s = 1.0 / std::sqrt(3.0);
    CHECK(lgmm_score({{s, s, s}}, {{s, s, s}}, cfg) == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(lgmm_score({{1, 0}, {1, 0}}, {{1, 0}}, cfg) ==
          doctest::Approx(1.0 + std::log(2.0) / 10).epsilon(1e-11));
    CHECK_THROWS_AS(lgmm_score({{1, 0}}, {{1, 0, 0}}, cfg), ShapeError);
  }

  TEST_CASE("lgmm score matches the straight-line oracle on seeded 3x4 vs 2x4") {
    std::mt19937_64 rng(0);
    const FeatureMatrix q = random_features(rng, 3, 4), c = random_features(rng, 2, 4);
    const ScoringConfig cfg;
    const auto expected = oracle::lgmm(to_oracle(q), to_oracle(c), cfg.tau_w, cfg.lambda, cfg.epsilon);
    CHECK(std::abs(lgmm_score(q, c, cfg) - static_cast<double>(expected)) <= 1e-12);
  }

  TEST_CASE("staged composition equals lgmm_score") {
    std::mt19937_64 rng(5);
    const ScoringConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      const FeatureMatrix q = random_features(rng, 1 + trial % 4, 6);
      const FeatureMatrix c = random_features(rng, 1 + trial % 3, 6);
      const auto w = attention_weights(local_similarity(q, c), cfg);
      const auto local = local_global_scores(q, context_aware_vectors(w, c), cfg);
      CHECK(lse_pool(local, cfg) == lgmm_score(q, c, cfg));
    }
  }

  TEST_CASE("scale and permutation invariance") {
    std::mt19937_64 rng(17);
    const ScoringConfig cfg = exact_cfg();
    for (int trial = 0; trial < 50; ++trial) {
      std::uniform_int_distribution<std::size_t> rows(1, 5), dims(1, 8);
      const std::size_t d = dims(rng);
      const FeatureMatrix q = random_features(rng, rows(rng), d), c = random_features(rng, rows(rng), d);
      const double base = lgmm_score(q, c, cfg);
      for (double k : {0.1, 3.0, 100.0}) {
        CHECK(std::abs(lgmm_score(q.scaled(k), c, cfg) - base) <= 1e-6);
        CHECK(std::abs(lgmm_score(q, c.scaled(k), cfg) - base) <= 1e-6);
      }
      std::vector<std::size_t> pq(q.rows()), pc(c.rows());
      std::iota(pq.begin(), pq.end(), 0);
      std::iota(pc.begin(), pc.end(), 0);
      std::shuffle(pq.begin(), pq.end(), rng);
      std::shuffle(pc.begin(), pc.end(), rng);
      CHECK(std::abs(lgmm_score(permute_rows(q, pq), permute_rows(c, pc), cfg) - base) <= 1e-6);
    }
  }

  TEST_CASE("baseline examples") {
    for (auto mode : {AggregationMode::kMaxMean, AggregationMode::kMaxMax, AggregationMode::kMeanMean,
                      AggregationMode::kMeanMax}) {
      CHECK(baseline_score({{0.3, -0.4}}, {{0.3, -0.4}}, mode) == doctest::Approx(1.0).epsilon(1e-14));
    }
    const FeatureMatrix eye{{1, 0}, {0, 1}};
    CHECK(baseline_score(eye, eye, AggregationMode::kMaxMax) == doctest::Approx(1.0));
    CHECK(baseline_score(eye, eye, AggregationMode::kMeanMean) == doctest::Approx(0.5));

  }

  TEST_CASE("max-mean averages the per-unit best match") {
    // Columns of the cosine matrix are realized directly: context rows are the
    // standard basis and query rows are unit vectors whose coordinates give the cosines.
    const double a = 0.8, b = 0.2, c = 0.4, d = 0.6;
    const double na = std::sqrt(1 - a * a - b * b), nc = std::sqrt(1 - c * c - d * d);
    const FeatureMatrix q{{a, b, na}, {c, d, nc}};
    const FeatureMatrix ctx{{1, 0, 0}, {0, 1, 0}};
    CHECK(baseline_score(q, ctx, AggregationMode::kMaxMean) == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(baseline_score(q, ctx, AggregationMode::kMaxMax) == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(baseline_score(q, ctx, AggregationMode::kMeanMean) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(baseline_score(q, ctx, AggregationMode::kMeanMax) == doctest::Approx(0.5).epsilon(1e-14));
  }

  TEST_CASE("baselines match the oracle reductions") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
      const FeatureMatrix q = random_features(rng, 1 + trial % 5, 4), c = random_features(rng, 1 + trial % 3, 4);
      const auto oq = to_oracle(q), oc = to_oracle(c);
      CHECK(baseline_score(q, c, AggregationMode::kMaxMean) ==
            doctest::Approx(static_cast<double>(oracle::baseline(oq, oc, false, true))).epsilon(1e-12));
      CHECK(baseline_score(q, c, AggregationMode::kMaxMax) ==
            doctest::Approx(static_cast<double>(oracle::baseline(oq, oc, true, true))).epsilon(1e-12));
      CHECK(baseline_score(q, c, AggregationMode::kMeanMean) ==
            doctest::Approx(static_cast<double>(oracle::baseline(oq, oc, false, false))).epsilon(1e-12));
      CHECK(baseline_score(q, c, AggregationMode::kMeanMax) ==
            doctest::Approx(static_cast<double>(oracle::baseline(oq, oc, true, false))).epsilon(1e-12));
    }
  }

  TEST_CASE("baseline rejects lgmm mode") {
    CHECK_THROWS_AS(baseline_score({{1}}, {{1}}, AggregationMode::kLgmm), ContractError);
  }

  TEST_CASE("aggregation mode parsing") {
    CHECK(parse_aggregation_mode("LGMM") == AggregationMode::kLgmm);
    CHECK(parse_aggregation_mode("max-mean") == AggregationMode::kMaxMean);
    CHECK(parse_aggregation_mode("MaxMax") == AggregationMode::kMaxMax);
    CHECK(parse_aggregation_mode("mean_mean") == AggregationMode::kMeanMean);
    CHECK(parse_aggregation_mode("Mean-Max") == AggregationMode::kMeanMax);
    CHECK_THROWS_AS(parse_aggregation_mode("max-median"), ConfigError);
    for (auto mode : {AggregationMode::kLgmm, AggregationMode::kMaxMean, AggregationMode::kMaxMax,
                      AggregationMode::kMeanMean, AggregationMode::kMeanMax}) {
      CHECK(parse_aggregation_mode(to_string(mode)) == mode);
    }
  }

  TEST_CASE("batch score matrix") {
    std::mt19937_64 rng(0);
    const ScoringConfig cfg;
    std::vector<FeatureMatrix> items;
    for (int k = 0; k < 3; ++k) items.push_back(random_features(rng, 2 + k, 5));

    const std::vector<FeatureMatrix> one{items[0]};
    const ScoreMatrix single = batch_score_matrix(one, one, cfg, AggregationMode::kLgmm);
    CHECK(single.values == Matrix{{lgmm_score(items[0], items[0], cfg)}});

    const ScoreMatrix s = batch_score_matrix(items, items, cfg, AggregationMode::kLgmm);
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t n = 0; n < 3; ++n) CHECK(s.values(m, n) == lgmm_score(items[m], items[n], cfg));

    const ScoreMatrix mm = batch_score_matrix(items, items, cfg, AggregationMode::kMaxMax);
    CHECK(mm.values(1, 2) == baseline_score(items[1], items[2], AggregationMode::kMaxMax));

    CHECK_THROWS_AS(batch_score_matrix({}, items, cfg, AggregationMode::kLgmm), ContractError);
  }

  TEST_CASE("scores are thread-safe and reproducible") {
    std::mt19937_64 rng(9);
    const FeatureMatrix q = random_features(rng, 4, 8), c = random_features(rng, 5, 8);
    const double expected = lgmm_score(q, c, ScoringConfig{});
    std::vector<double> got(8);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < got.size(); ++t) {
      threads.emplace_back([&, t] { got[t] = lgmm_score(q, c, ScoringConfig{}); });
    }
    for (auto& t : threads) t.join();
    for (double g : got) CHECK(g == expected);
  }
}
