#pragma once

// Feature packs, dataset manifests and the synthetic event generator.
//
// Feature pack layout (little-endian):
//   "LGF1" | version u32 | record count u64 |
//   per record: id length u16 | id bytes (UTF-8) | rows u32 | dim u32 |
//               rows*dim float32, row-major
// Values are widened to double on load, so round trips are exact for
// float32-representable inputs.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lgmm/kernel.hpp"
#include "lgmm/matrix.hpp"

namespace lgmm {

inline constexpr std::array<char, 4> kPackMagic{'L', 'G', 'F', '1'};
inline constexpr std::array<char, 4> kCheckpointMagic{'L', 'G', 'C', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

using Bytes = std::vector<std::uint8_t>;

/// One named matrix inside a framed container.
struct NamedMatrix {
  std::string name;
  Matrix values;

  friend bool operator==(const NamedMatrix&, const NamedMatrix&) = default;
};

/// Width of every stored value. Packs hold float32; checkpoints keep the
/// full float64 training state.
enum class ValueWidth { kFloat32, kFloat64 };

/// Serialises `records` with the shared framing; `trailer` is appended verbatim.
Bytes encode_frame(const std::array<char, 4>& magic, std::span<const NamedMatrix> records,
                   std::span<const std::uint8_t> trailer = {},
                   ValueWidth width = ValueWidth::kFloat32);

struct DecodedFrame {
  std::vector<NamedMatrix> records;
  /// Byte offset at which each record starts.
  std::vector<std::uint64_t> offsets;
  /// Bytes after the last record.
  std::span<const std::uint8_t> trailer;
};

/// Parses the framing; throws FormatError with the failing byte offset.
DecodedFrame decode_frame(const std::array<char, 4>& magic, std::span<const std::uint8_t> bytes,
                          ValueWidth width = ValueWidth::kFloat32);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

struct PackRecord {
  std::string id;
  FeatureMatrix features;

  friend bool operator==(const PackRecord&, const PackRecord&) = default;
};

/// Ordered (id, features) records of one modality with unique ids and one dim.
class FeaturePack {
 public:
  FeaturePack() = default;
  /// Throws ValidationError on duplicate ids or mixed dims.
  explicit FeaturePack(std::vector<PackRecord> records);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  /// 0 for an empty pack.
  std::size_t dim() const noexcept;
  const std::vector<PackRecord>& records() const noexcept { return records_; }
  const PackRecord& operator[](std::size_t i) const { return records_[i]; }

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws LookupError for unknown ids.
  std::size_t index_of(std::string_view id) const;

  friend bool operator==(const FeaturePack& a, const FeaturePack& b) {
    return a.records_ == b.records_;
  }

 private:
  std::vector<PackRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

Bytes encode_pack(const FeaturePack& pack);
FeaturePack decode_pack(std::span<const std::uint8_t> bytes);
void write_pack(const std::filesystem::path& path, const FeaturePack& pack);
FeaturePack read_pack(const std::filesystem::path& path);

enum class Split { kTrain, kValid, kTest };
std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view name);

/// Textual manifest as written on disk (JSON).
struct Manifest {
  struct Pair {
    std::string audio_id;
    std::vector<std::string> caption_ids;
  };

  Split split = Split::kTest;
  std::string audio_pack;
  std::string text_pack;
  std::vector<Pair> pairs;
};

Manifest parse_manifest(std::string_view text);
std::string format_manifest(const Manifest& manifest);

/// Validated audio-caption ground truth over two packs.
class RetrievalDataset {
 public:
  struct Pair {
    std::size_t audio;                 // index into the audio pack
    std::vector<std::size_t> captions;  // indices into the text pack
  };

  struct Counts {
    std::size_t items = 0;
    std::size_t captions = 0;
    Split split = Split::kTest;
  };

  RetrievalDataset() = default;
  /// Throws ValidationError listing every dangling or reused id.
  RetrievalDataset(std::shared_ptr<const FeaturePack> audio,
                   std::shared_ptr<const FeaturePack> text, const Manifest& manifest);

  const FeaturePack& audio() const { return *audio_; }
  const FeaturePack& text() const { return *text_; }
  const std::vector<Pair>& pairs() const noexcept { return pairs_; }
  Split split() const noexcept { return split_; }
  Counts counts() const noexcept;

  /// The dataset restricted to the given pairs (packs are shared).
  RetrievalDataset subset(std::span<const std::size_t> pair_indices, Split split) const;
  Manifest to_manifest(std::string audio_pack, std::string text_pack) const;

 private:
  std::shared_ptr<const FeaturePack> audio_ = std::make_shared<FeaturePack>();
  std::shared_ptr<const FeaturePack> text_ = std::make_shared<FeaturePack>();
  std::vector<Pair> pairs_;
  Split split_ = Split::kTest;
};

/// Reads the manifest and the packs it names (resolved against its directory).
RetrievalDataset load_manifest(const std::filesystem::path& manifest_path);
RetrievalDataset load_manifest(std::string_view manifest_text, const FeaturePack& audio,
                               const FeaturePack& text);

struct SyntheticConfig {
  std::size_t vocab_size = 32;
  std::size_t dim = 16;
  std::size_t items = 64;
  std::size_t events_per_item = 3;
  std::size_t frames_per_event = 3;
  std::size_t words_per_event = 2;
  std::size_t captions_per_item = 1;
  double noise_sigma = 0.05;
  double hard_negative_fraction = 0.25;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Generated dataset plus the event alignment that produced it.
struct SyntheticDataset {
  struct Item {
    std::vector<std::size_t> events;
    /// Event index behind every audio row / every caption's word rows.
    std::vector<std::size_t> frame_events;
    std::vector<std::vector<std::size_t>> word_events;
    /// Set for hard negatives: the cloned item and the replaced slot.
    std::optional<std::size_t> cloned_from;
    std::optional<std::size_t> swapped_slot;
  };

  RetrievalDataset dataset;
  FeaturePack audio;
  FeaturePack text;
  Matrix event_vectors;  // vocab_size x dim, unit rows
  std::vector<Item> items;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Three items sharing all events but one slot: item 0 is the positive,
/// items 1 and 2 replace the event in `swapped_slot` with distinct others.
struct HardNegativeTriple {
  SyntheticDataset data;
  std::size_t swapped_slot = 0;
  std::size_t swapped_event = 0;
};

HardNegativeTriple generate_hard_negative_triple(const SyntheticConfig& cfg);

/// Splits off the last `holdout` pairs into a second dataset.
std::pair<RetrievalDataset, RetrievalDataset> split_holdout(const RetrievalDataset& dataset,
                                                            std::size_t holdout);

}  // namespace lgmm
