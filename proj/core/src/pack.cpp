#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"

namespace lgmm {

FormatError::FormatError(Kind kind, std::uint64_t offset, const std::string& what)
    : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + what),
      kind_(kind),
      offset_(offset) {}

const char* to_string(FormatError::Kind kind) noexcept {
  switch (kind) {
    case FormatError::Kind::kBadMagic: return "bad magic";
    case FormatError::Kind::kBadVersion: return "unsupported version";
    case FormatError::Kind::kTruncated: return "truncated";
    case FormatError::Kind::kDuplicateId: return "duplicate id";
    case FormatError::Kind::kDimMismatch: return "dim mismatch";
    case FormatError::Kind::kTrailingBytes: return "trailing bytes";
    case FormatError::Kind::kBadPayload: return "bad payload";
  }
  return "format error";
}

namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}

  template <typename U>
  void put(U value) {
    for (std::size_t k = 0; k < sizeof(U); ++k) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * k)));
    }
  }
  void put_bytes(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  void put_chars(std::string_view chars) { out_.insert(out_.end(), chars.begin(), chars.end()); }

 private:
  Bytes& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Kind::kTruncated, pos_,
                        std::string("need ") + std::to_string(n) + " byte(s) for " + what + ", " +
                            std::to_string(remaining()) + " left");
    }
  }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) {
      value |= static_cast<U>(static_cast<U>(bytes_[pos_ + k]) << (8 * k));
    }
    pos_ += sizeof(U);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Smallest possible record: u16 id length, u32 rows, u32 dim.
constexpr std::size_t kMinRecordBytes = 2 + 4 + 4;

}  // namespace

Bytes encode_frame(const std::array<char, 4>& magic, std::span<const NamedMatrix> records,
                   std::span<const std::uint8_t> trailer, ValueWidth width) {
  Bytes out;
  Writer w(out);
  w.put_chars(std::string_view(magic.data(), magic.size()));
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(records.size());
  for (const NamedMatrix& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ContractError("record name longer than 65535 bytes");
    }
    if (r.values.rows() > std::numeric_limits<std::uint32_t>::max() ||
        r.values.cols() > std::numeric_limits<std::uint32_t>::max()) {
      throw ContractError("record '" + r.name + "' is too large for the container");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.name.size()));
    w.put_chars(r.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.values.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.values.cols()));
    for (double v : r.values.values()) {
      if (width == ValueWidth::kFloat64) {
        w.put<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      } else {
        const float narrow = static_cast<float>(v);
        if (!std::isfinite(narrow)) {
          throw NumericError("record '" + r.name + "' holds a value outside float32 range");
        }
        w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(narrow));
      }
    }
  }
  w.put_bytes(trailer);
  return out;
}

DecodedFrame decode_frame(const std::array<char, 4>& magic, std::span<const std::uint8_t> bytes,
                          ValueWidth width) {
  const std::size_t value_bytes = width == ValueWidth::kFloat64 ? 8 : 4;
  Reader r(bytes);
  auto head = r.take(4, "magic");
  if (!std::equal(head.begin(), head.end(), magic.begin(),
                  [](std::uint8_t b, char c) { return b == static_cast<std::uint8_t>(c); })) {
    throw FormatError(FormatError::Kind::kBadMagic, 0,
                      "expected \"" + std::string(magic.data(), magic.size()) + "\"");
  }
  const std::uint64_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFormatVersion) {
    throw FormatError(FormatError::Kind::kBadVersion, version_at,
                      "version " + std::to_string(version) + ", expected " +
                          std::to_string(kFormatVersion));
  }
  const std::uint64_t count_at = r.offset();
  const auto count = r.get<std::uint64_t>("record count");
  if (count > r.remaining() / kMinRecordBytes) {
    throw FormatError(FormatError::Kind::kTruncated, count_at,
                      "record count " + std::to_string(count) + " exceeds what " +
                          std::to_string(r.remaining()) + " remaining byte(s) can hold");
  }

  DecodedFrame out;
  out.records.reserve(static_cast<std::size_t>(count));
  out.offsets.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t k = 0; k < count; ++k) {
    out.offsets.push_back(r.offset());
    const auto name_len = r.get<std::uint16_t>("id length");
    auto name = r.take(name_len, "id");
    const auto rows = r.get<std::uint32_t>("rows");
    const auto cols = r.get<std::uint32_t>("dim");
    const std::uint64_t payload_at = r.offset();
    const std::uint64_t cells = static_cast<std::uint64_t>(rows) * cols;
    if (cells > r.remaining() / value_bytes) {
      throw FormatError(FormatError::Kind::kTruncated, payload_at,
                        "payload of " + std::to_string(cells) + " value(s) runs past the end");
    }
    std::vector<double> values(static_cast<std::size_t>(cells));
    for (double& v : values) {
      const std::uint64_t at = r.offset();
      v = width == ValueWidth::kFloat64 ? std::bit_cast<double>(r.get<std::uint64_t>("value"))
                                        : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("value")));
      if (!std::isfinite(v)) {
        throw FormatError(FormatError::Kind::kBadPayload, at, "non-finite value");
      }
    }
    out.records.push_back({std::string(name.begin(), name.end()), Matrix(rows, cols, std::move(values))});
  }
  out.trailer = bytes.subspan(static_cast<std::size_t>(r.offset()));
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

FeaturePack::FeaturePack(std::vector<PackRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const PackRecord& r = records_[i];
    if (r.id.empty()) throw ValidationError("record " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(r.id, i).second) throw ValidationError("duplicate id '" + r.id + "'");
    if (r.features.dim() != records_.front().features.dim()) {
      throw ValidationError("record '" + r.id + "' has dim " + std::to_string(r.features.dim()) +
                            ", pack dim is " + std::to_string(records_.front().features.dim()));
    }
  }
}

std::size_t FeaturePack::dim() const noexcept {
  return records_.empty() ? 0 : records_.front().features.dim();
}

std::optional<std::size_t> FeaturePack::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeaturePack::index_of(std::string_view id) const {
  if (auto found = find(id)) return *found;
  throw LookupError("unknown id '" + std::string(id) + "'");
}

Bytes encode_pack(const FeaturePack& pack) {
  std::vector<NamedMatrix> named;
  named.reserve(pack.size());
  for (const PackRecord& r : pack.records()) named.push_back({r.id, r.features.matrix()});
  return encode_frame(kPackMagic, named);
}

FeaturePack decode_pack(std::span<const std::uint8_t> bytes) {
  DecodedFrame frame = decode_frame(kPackMagic, bytes);
  if (!frame.trailer.empty()) {
    throw FormatError(FormatError::Kind::kTrailingBytes, bytes.size() - frame.trailer.size(),
                      std::to_string(frame.trailer.size()) + " byte(s) after the last record");
  }
  std::vector<PackRecord> records;
  records.reserve(frame.records.size());
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t k = 0; k < frame.records.size(); ++k) {
    NamedMatrix& r = frame.records[k];
    const std::uint64_t at = frame.offsets[k];
    if (r.name.empty()) throw FormatError(FormatError::Kind::kBadPayload, at, "empty id");
    if (!seen.emplace(r.name, k).second) {
      throw FormatError(FormatError::Kind::kDuplicateId, at, "id '" + r.name + "' repeats");
    }
    if (!records.empty() && r.values.cols() != records.front().features.dim()) {
      throw FormatError(FormatError::Kind::kDimMismatch, at,
                        "record '" + r.name + "' has dim " + std::to_string(r.values.cols()) +
                            ", pack dim is " + std::to_string(records.front().features.dim()));
    }
    if (r.values.rows() == 0 || r.values.cols() == 0) {
      throw FormatError(FormatError::Kind::kBadPayload, at, "record '" + r.name + "' is empty");
    }
    records.push_back({std::move(r.name), FeatureMatrix(std::move(r.values))});
  }
  return FeaturePack(std::move(records));
}

void write_pack(const std::filesystem::path& path, const FeaturePack& pack) {
  write_file(path, encode_pack(pack));
}

FeaturePack read_pack(const std::filesystem::path& path) { return decode_pack(read_file(path)); }

}  // namespace lgmm
