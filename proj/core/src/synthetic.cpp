#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"

namespace lgmm {
namespace {

constexpr double kMaxEventCosine = 0.95;
constexpr int kMaxRedraws = 10000;

// Stored values are rounded to float32 so packs written from a generated
// dataset read back identical.
double storable(double v) { return static_cast<double>(static_cast<float>(v)); }

Matrix draw_events(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix events(cfg.vocab_size, cfg.dim);
  for (std::size_t e = 0; e < cfg.vocab_size; ++e) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) {
        throw ConfigError("cannot draw " + std::to_string(cfg.vocab_size) +
                          " separable events in " + std::to_string(cfg.dim) + " dimensions");
      }
      auto row = events.row(e);
      double norm = 0.0;
      for (double& v : row) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (double& v : row) v /= norm;
      bool separable = true;
      for (std::size_t prev = 0; prev < e && separable; ++prev) {
        double cos = 0.0;
        auto other = events.row(prev);
        for (std::size_t k = 0; k < cfg.dim; ++k) cos += row[k] * other[k];
        separable = cos <= kMaxEventCosine;
      }
      if (separable) break;
    }
  }
  return events;
}

std::vector<std::size_t> draw_event_set(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::vector<std::size_t> all(cfg.vocab_size);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(cfg.events_per_item);
  return all;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

Matrix render(const Matrix& events, std::span<const std::size_t> item_events,
              std::size_t rows_per_event, double sigma, std::mt19937_64& rng,
              std::vector<std::size_t>& row_events) {
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  Matrix out(item_events.size() * rows_per_event, events.cols());
  std::size_t r = 0;
  for (std::size_t e : item_events) {
    for (std::size_t k = 0; k < rows_per_event; ++k, ++r) {
      auto dst = out.row(r);
      auto src = events.row(e);
      for (std::size_t d = 0; d < dst.size(); ++d) {
        dst[d] = storable(src[d] + (sigma > 0.0 ? noise(rng) : 0.0));
      }
      row_events.push_back(e);
    }
  }
  return out;
}

std::string audio_id(std::size_t item) {
  std::string digits = std::to_string(item);
  return "a" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

std::string caption_id(std::size_t item, std::size_t caption) {
  return "t" + audio_id(item).substr(1) + "_" + std::to_string(caption);
}

// Renders features for every item in order and wires up packs and manifest.
SyntheticDataset assemble(const SyntheticConfig& cfg, Matrix events,
                          std::vector<SyntheticDataset::Item> items, std::mt19937_64& rng) {
  SyntheticDataset out;
  out.event_vectors = std::move(events);
  std::vector<PackRecord> audio_records, text_records;
  Manifest manifest;
  manifest.split = Split::kTrain;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& item = items[i];
    audio_records.push_back({audio_id(i), FeatureMatrix(render(out.event_vectors, item.events,
                                                               cfg.frames_per_event, cfg.noise_sigma,
                                                               rng, item.frame_events))});
    Manifest::Pair pair{audio_id(i), {}};
    item.word_events.resize(cfg.captions_per_item);
    for (std::size_t c = 0; c < cfg.captions_per_item; ++c) {
      text_records.push_back({caption_id(i, c),
                              FeatureMatrix(render(out.event_vectors, item.events,
                                                   cfg.words_per_event, cfg.noise_sigma, rng,
                                                   item.word_events[c]))});
      pair.caption_ids.push_back(caption_id(i, c));
    }
    manifest.pairs.push_back(std::move(pair));
  }
  out.audio = FeaturePack(std::move(audio_records));
  out.text = FeaturePack(std::move(text_records));
  out.items = std::move(items);
  out.dataset = RetrievalDataset(std::make_shared<FeaturePack>(out.audio),
                                 std::make_shared<FeaturePack>(out.text), manifest);
  return out;
}

std::size_t replacement_event(const SyntheticConfig& cfg, std::span<const std::size_t> taken,
                              std::mt19937_64& rng) {
  std::vector<std::size_t> free;
  for (std::size_t e = 0; e < cfg.vocab_size; ++e) {
    if (std::find(taken.begin(), taken.end(), e) == taken.end()) free.push_back(e);
  }
  if (free.empty()) throw ConfigError("no event left to swap in for a hard negative");
  std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
  return free[pick(rng)];
}

}  // namespace

void SyntheticConfig::validate() const {
  if (vocab_size < 1 || dim < 1 || items < 1 || events_per_item < 1 || frames_per_event < 1 ||
      words_per_event < 1 || captions_per_item < 1) {
    throw ConfigError("synthetic counts must all be >= 1");
  }
  if (events_per_item > vocab_size) {
    throw ConfigError("events_per_item (" + std::to_string(events_per_item) +
                      ") exceeds vocab_size (" + std::to_string(vocab_size) + ")");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be >= 0");
  }
  if (!(hard_negative_fraction >= 0.0 && hard_negative_fraction <= 1.0)) {
    throw ConfigError("hard_negative_fraction must lie in [0, 1]");
  }
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Matrix events = draw_events(cfg, rng);

  std::size_t hard = static_cast<std::size_t>(
      std::floor(cfg.hard_negative_fraction * static_cast<double>(cfg.items) + 0.5));
  if (hard >= cfg.items) hard = cfg.items - 1;
  if (hard > 0 && cfg.events_per_item == cfg.vocab_size) {
    throw ConfigError("hard negatives need vocab_size > events_per_item");
  }
  const std::size_t base = cfg.items - hard;

  // Distinct event sets where the vocabulary allows it; bounded retries
  // otherwise accept repeats.
  std::set<std::vector<std::size_t>> used;
  std::vector<SyntheticDataset::Item> items;
  items.reserve(cfg.items);
  for (std::size_t i = 0; i < base; ++i) {
    std::vector<std::size_t> set;
    for (int attempt = 0; attempt < 64; ++attempt) {
      set = draw_event_set(cfg, rng);
      if (!used.contains(sorted(set))) break;
    }
    used.insert(sorted(set));
    items.push_back({std::move(set), {}, {}, std::nullopt, std::nullopt});
  }
  std::uniform_int_distribution<std::size_t> pick_source(0, base - 1);
  std::uniform_int_distribution<std::size_t> pick_slot(0, cfg.events_per_item - 1);
  for (std::size_t h = 0; h < hard; ++h) {
    std::size_t source = 0, slot = 0;
    std::vector<std::size_t> set;
    for (int attempt = 0; attempt < 64; ++attempt) {
      source = pick_source(rng);
      slot = pick_slot(rng);
      set = items[source].events;
      set[slot] = replacement_event(cfg, items[source].events, rng);
      if (!used.contains(sorted(set))) break;
    }
    used.insert(sorted(set));
    items.push_back({std::move(set), {}, {}, source, slot});
  }

  // Interleave hard negatives with the rest so any contiguous split sees both.
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> position(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) position[order[k]] = k;
  std::vector<SyntheticDataset::Item> shuffled(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    shuffled[k] = std::move(items[order[k]]);
    if (shuffled[k].cloned_from) shuffled[k].cloned_from = position[*shuffled[k].cloned_from];
  }
  return assemble(cfg, std::move(events), std::move(shuffled), rng);
}

HardNegativeTriple generate_hard_negative_triple(const SyntheticConfig& cfg) {
  cfg.validate();
  if (cfg.vocab_size < cfg.events_per_item + 2) {
    throw ConfigError("a hard-negative triple needs vocab_size >= events_per_item + 2");
  }
  std::mt19937_64 rng(cfg.seed);
  Matrix events = draw_events(cfg, rng);
  std::vector<std::size_t> positive = draw_event_set(cfg, rng);
  std::uniform_int_distribution<std::size_t> pick_slot(0, cfg.events_per_item - 1);
  const std::size_t slot = pick_slot(rng);

  std::vector<std::size_t> taken = positive;
  std::vector<SyntheticDataset::Item> items;
  items.push_back({positive, {}, {}, std::nullopt, std::nullopt});
  for (int n = 0; n < 2; ++n) {
    std::vector<std::size_t> negative = positive;
    negative[slot] = replacement_event(cfg, taken, rng);
    taken.push_back(negative[slot]);
    items.push_back({std::move(negative), {}, {}, std::size_t{0}, slot});
  }
  HardNegativeTriple out;
  out.swapped_slot = slot;
  out.swapped_event = positive[slot];
  out.data = assemble(cfg, std::move(events), std::move(items), rng);
  return out;
}

}  // namespace lgmm
