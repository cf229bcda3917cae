#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lgmm/data.hpp"
#include "lgmm/error.hpp"

namespace lgmm {
namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += "'" + s + "'";
  }
  return out;
}

}  // namespace

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(name) + "' (expected train, valid, test)");
}

Manifest parse_manifest(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("manifest must be a JSON object");

  auto field = [&](const char* key, auto check, const char* kind) -> const json& {
    auto it = doc.find(key);
    if (it == doc.end()) throw ValidationError(std::string("manifest is missing '") + key + "'");
    if (!check(*it)) throw ValidationError(std::string("manifest field '") + key + "' must be " + kind);
    return *it;
  };
  auto is_string = [](const json& j) { return j.is_string(); };

  Manifest m;
  m.split = parse_split(field("split", is_string, "a string").get<std::string>());
  m.audio_pack = field("audio_pack", is_string, "a string").get<std::string>();
  m.text_pack = field("text_pack", is_string, "a string").get<std::string>();
  const json& pairs = field("pairs", [](const json& j) { return j.is_array(); }, "a list");
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const json& p = pairs[k];
    const std::string where = "pairs[" + std::to_string(k) + "]";
    if (!p.is_object() || !p.contains("audio_id") || !p["audio_id"].is_string() ||
        !p.contains("caption_ids") || !p["caption_ids"].is_array()) {
      throw ValidationError(where + " needs a string 'audio_id' and a list 'caption_ids'");
    }
    Manifest::Pair pair{p["audio_id"].get<std::string>(), {}};
    for (const json& c : p["caption_ids"]) {
      if (!c.is_string()) throw ValidationError(where + ".caption_ids holds a non-string entry");
      pair.caption_ids.push_back(c.get<std::string>());
    }
    m.pairs.push_back(std::move(pair));
  }
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  json pairs = json::array();
  for (const auto& p : manifest.pairs) {
    pairs.push_back({{"audio_id", p.audio_id}, {"caption_ids", p.caption_ids}});
  }
  json doc = {{"split", std::string(to_string(manifest.split))},
              {"audio_pack", manifest.audio_pack},
              {"text_pack", manifest.text_pack},
              {"pairs", std::move(pairs)}};
  return doc.dump(2) + "\n";
}

RetrievalDataset::RetrievalDataset(std::shared_ptr<const FeaturePack> audio,
                                   std::shared_ptr<const FeaturePack> text,
                                   const Manifest& manifest)
    : audio_(std::move(audio)), text_(std::move(text)), split_(manifest.split) {
  std::vector<std::string> missing_audio, missing_captions, reused_captions, reused_audio,
      captionless;
  std::set<std::string> seen_captions, seen_audio;
  for (const auto& p : manifest.pairs) {
    Pair pair{};
    auto audio_index = audio_->find(p.audio_id);
    if (!audio_index) missing_audio.push_back(p.audio_id);
    if (!seen_audio.insert(p.audio_id).second) reused_audio.push_back(p.audio_id);
    if (p.caption_ids.empty()) captionless.push_back(p.audio_id);
    for (const auto& c : p.caption_ids) {
      auto caption_index = text_->find(c);
      if (!caption_index) missing_captions.push_back(c);
      if (!seen_captions.insert(c).second) reused_captions.push_back(c);
      if (caption_index) pair.captions.push_back(*caption_index);
    }
    if (audio_index) pair.audio = *audio_index;
    pairs_.push_back(std::move(pair));
  }

  std::string problems;
  auto report = [&](const char* label, const std::vector<std::string>& ids) {
    if (ids.empty()) return;
    if (!problems.empty()) problems += "; ";
    problems += std::string(label) + ": " + join(ids);
  };
  report("unknown audio id(s)", missing_audio);
  report("unknown caption id(s)", missing_captions);
  report("caption id(s) assigned more than once", reused_captions);
  report("audio id(s) listed more than once", reused_audio);
  report("audio id(s) without captions", captionless);
  if (!problems.empty()) throw ValidationError("invalid manifest: " + problems);
  if (!pairs_.empty() && audio_->dim() == 0) throw ValidationError("audio pack is empty");
}

RetrievalDataset::Counts RetrievalDataset::counts() const noexcept {
  Counts c;
  c.items = pairs_.size();
  for (const auto& p : pairs_) c.captions += p.captions.size();
  c.split = split_;
  return c;
}

RetrievalDataset RetrievalDataset::subset(std::span<const std::size_t> pair_indices,
                                          Split split) const {
  RetrievalDataset out;
  out.audio_ = audio_;
  out.text_ = text_;
  out.split_ = split;
  for (std::size_t k : pair_indices) {
    if (k >= pairs_.size()) throw ContractError("subset: pair index out of range");
    out.pairs_.push_back(pairs_[k]);
  }
  return out;
}

Manifest RetrievalDataset::to_manifest(std::string audio_pack, std::string text_pack) const {
  Manifest m;
  m.split = split_;
  m.audio_pack = std::move(audio_pack);
  m.text_pack = std::move(text_pack);
  for (const auto& p : pairs_) {
    Manifest::Pair out{audio_->records()[p.audio].id, {}};
    for (std::size_t c : p.captions) out.caption_ids.push_back(text_->records()[c].id);
    m.pairs.push_back(std::move(out));
  }
  return m;
}

RetrievalDataset load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  Manifest m = parse_manifest(buffer.str());
  const auto base = manifest_path.parent_path();
  auto audio = std::make_shared<FeaturePack>(read_pack(base / m.audio_pack));
  auto text = std::make_shared<FeaturePack>(read_pack(base / m.text_pack));
  return RetrievalDataset(std::move(audio), std::move(text), m);
}

RetrievalDataset load_manifest(std::string_view manifest_text, const FeaturePack& audio,
                               const FeaturePack& text) {
  return RetrievalDataset(std::make_shared<FeaturePack>(audio), std::make_shared<FeaturePack>(text),
                          parse_manifest(manifest_text));
}

std::pair<RetrievalDataset, RetrievalDataset> split_holdout(const RetrievalDataset& dataset,
                                                            std::size_t holdout) {
  const std::size_t n = dataset.pairs().size();
  if (holdout > n) throw ConfigError("holdout larger than the dataset");
  std::vector<std::size_t> head(n - holdout), tail(holdout);
  for (std::size_t k = 0; k < head.size(); ++k) head[k] = k;
  for (std::size_t k = 0; k < tail.size(); ++k) tail[k] = head.size() + k;
  return {dataset.subset(head, Split::kTrain), dataset.subset(tail, Split::kValid)};
}

}  // namespace lgmm
