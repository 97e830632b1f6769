#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latseg/error.hpp"
#include "latseg/image.hpp"
#include "latseg/png_io.hpp"

namespace latseg {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// One observation of a latent shift: G(z) and G(z + h).
struct PairSample {
  std::string id;
  Image image;
  Image shifted;
  std::optional<Mask> gt_mask;

  void validate() const {
    if (!image.same_shape(shifted)) throw DataError("sample " + id + ": image/shifted dimension mismatch");
    if (gt_mask && !image.same_shape(*gt_mask)) throw DataError("sample " + id + ": mask dimension mismatch");
  }
};

struct ManifestEntry {
  std::string id;
  std::string image;    // paths relative to the dataset root
  std::string shifted;
  std::optional<std::string> mask;
};

struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::vector<ManifestEntry> samples;
  std::map<std::string, std::string> metadata;

  json to_json() const {
    json j;
    j["version"] = version;
    j["samples"] = json::array();
    for (const auto& s : samples) {
      json e;
      e["id"] = s.id;
      e["image"] = s.image;
      e["shifted"] = s.shifted;
      if (s.mask) e["mask"] = *s.mask;
      j["samples"].push_back(std::move(e));
    }
    j["metadata"] = json::object();
    for (const auto& [k, v] : metadata) j["metadata"][k] = v;
    return j;
  }
};

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline void check_sample_id(const std::string& id) {
  require(!id.empty(), "sample id must not be empty");
  for (char c : id) {
    require(c != '/' && c != '\\' && c != '\0', "sample id contains a path separator: " + id);
  }
  require(id != "." && id != "..", "invalid sample id: " + id);
}

// Writes img/<id>.png, shift/<id>.png and (when present) mask/<id>.png plus
// manifest.json. Masks written here override any gt_mask on the samples when
// `masks` is non-empty.
inline DatasetManifest save_pair_dataset(const std::vector<PairSample>& samples, const fs::path& dir,
                                         const std::map<std::string, std::string>& metadata = {},
                                         const std::vector<Mask>& masks = {}) {
  require(masks.empty() || masks.size() == samples.size(), "mask count must match sample count");
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "shift");
  const bool any_mask = !masks.empty() || std::any_of(samples.begin(), samples.end(),
                                                       [](const PairSample& s) { return s.gt_mask.has_value(); });
  if (any_mask) fs::create_directories(dir / "mask");

  DatasetManifest manifest;
  manifest.metadata = metadata;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    check_sample_id(s.id);
    require(ids.insert(s.id).second, "duplicate sample id: " + s.id);
    s.validate();
    ManifestEntry e{s.id, "img/" + s.id + ".png", "shift/" + s.id + ".png", std::nullopt};
    save_image(dir / e.image, s.image);
    save_image(dir / e.shifted, s.shifted);
    const Mask* m = !masks.empty() ? &masks[i] : (s.gt_mask ? &*s.gt_mask : nullptr);
    if (m) {
      if (!s.image.same_shape(*m)) throw DataError("sample " + s.id + ": mask dimension mismatch");
      e.mask = "mask/" + s.id + ".png";
      save_mask(dir / *e.mask, *m);
    }
    manifest.samples.push_back(std::move(e));
  }
  write_json_file(dir / "manifest.json", manifest.to_json());
  return manifest;
}

// Parsed manifest plus lazy per-sample loading.
class PairDataset {
 public:
  explicit PairDataset(const fs::path& path) {
    root_ = fs::is_directory(path) ? path : path.parent_path();
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    if (!fs::exists(manifest_path)) throw DataError("manifest not found: " + manifest_path.string());
    const json j = read_json_file(manifest_path);
    try {
      manifest_.version = j.at("version").get<int>();
      if (manifest_.version != DatasetManifest::kVersion) {
        throw DataError("unsupported manifest version " + std::to_string(manifest_.version));
      }
      std::set<std::string> ids;
      for (const auto& e : j.at("samples")) {
        ManifestEntry entry;
        entry.id = e.at("id").get<std::string>();
        check_sample_id(entry.id);
        if (!ids.insert(entry.id).second) throw DataError("duplicate sample id: " + entry.id);
        entry.image = e.at("image").get<std::string>();
        entry.shifted = e.at("shifted").get<std::string>();
        if (e.contains("mask") && !e["mask"].is_null()) entry.mask = e["mask"].get<std::string>();
        for (const auto* rel : {&entry.image, &entry.shifted}) {
          if (!fs::exists(root_ / *rel)) throw DataError("sample " + entry.id + ": missing file " + *rel);
        }
        if (entry.mask && !fs::exists(root_ / *entry.mask)) {
          throw DataError("sample " + entry.id + ": missing file " + *entry.mask);
        }
        manifest_.samples.push_back(std::move(entry));
      }
      if (j.contains("metadata")) {
        for (const auto& [k, v] : j["metadata"].items()) {
          manifest_.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      }
    } catch (const json::exception& e) {
      throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const fs::path& root() const noexcept { return root_; }
  std::size_t size() const noexcept { return manifest_.samples.size(); }
  const std::string& id(std::size_t i) const { return manifest_.samples.at(i).id; }
  bool has_masks() const {
    return std::all_of(manifest_.samples.begin(), manifest_.samples.end(),
                       [](const ManifestEntry& e) { return e.mask.has_value(); });
  }

  PairSample load(std::size_t i) const {
    const auto& e = manifest_.samples.at(i);
    try {
      PairSample s{e.id, load_image(root_ / e.image), load_image(root_ / e.shifted), std::nullopt};
      if (e.mask) s.gt_mask = load_mask(root_ / *e.mask);
      s.validate();
      return s;
    } catch (const DataError& err) {
      const std::string msg = err.what();
      if (msg.rfind("sample " + e.id, 0) == 0) throw;
      throw DataError("sample " + e.id + ": " + msg);
    }
  }

 private:
  fs::path root_;
  DatasetManifest manifest_;
};

inline PairDataset load_manifest(const fs::path& path) { return PairDataset(path); }

}  // namespace latseg
