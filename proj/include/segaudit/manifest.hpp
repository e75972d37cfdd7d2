#pragma once

// Dataset manifest: class table plus one record per image with paths to its
// annotation, probability map and optional extras. Paths are resolved
// against the manifest's directory.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "segaudit/errors.hpp"
#include "segaudit/io.hpp"
#include "segaudit/perturb.hpp"

namespace segaudit {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kSplitTrain = "train-meta";
inline constexpr const char* kSplitSearch = "search";

struct ManifestRecord {
  std::string image_id;
  std::optional<fs::path> rgb;
  std::optional<fs::path> gt_mask;
  std::optional<fs::path> polygons;
  std::optional<fs::path> probs;
  std::optional<fs::path> depth;
  std::optional<fs::path> background;
  std::optional<fs::path> clean_mask;
  std::string split;  // empty until assigned
};

struct Manifest {
  int schema_version = kManifestSchemaVersion;
  std::string dataset;
  ClassTable classes;
  std::set<ClassId> eligible_classes;
  std::vector<ClassId> smooth_classes;
  double depth_scale = 1.0;
  std::optional<fs::path> registry;
  std::vector<ManifestRecord> records;
  fs::path base_dir;

  [[nodiscard]] int num_classes() const { return classes.max_id(); }
  [[nodiscard]] fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
  [[nodiscard]] const ManifestRecord& record(const std::string& id) const {
    for (const auto& r : records) {
      if (r.image_id == id) return r;
    }
    throw InvalidInput("manifest: unknown image '" + id + "'");
  }
};

// File-name-safe form of an image id.
inline std::string safe_name(const std::string& id) {
  std::string out;
  for (unsigned char ch : id) out += (std::isalnum(ch) || ch == '-' || ch == '.') ? static_cast<char>(ch) : '_';
  return out.empty() ? "_" : out;
}

namespace detail {

inline ClassId class_ref(const nlohmann::json& j, const ClassTable& table) {
  if (j.is_string()) return table.id(j.get<std::string>());
  const auto id = j.get<int>();
  if (!table.entries().contains(static_cast<ClassId>(id))) throw InvalidInput("manifest: unknown class id " + std::to_string(id));
  return static_cast<ClassId>(id);
}

inline std::optional<fs::path> opt_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return fs::path(j.at(key).get<std::string>());
}

}  // namespace detail

inline Manifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  m.schema_version = j.value("schema_version", kManifestSchemaVersion);
  if (m.schema_version != kManifestSchemaVersion) {
    throw InvalidInput("manifest: unsupported schema_version " + std::to_string(m.schema_version));
  }
  m.dataset = j.value("dataset", "");
  for (const auto& c : j.at("classes")) {
    const int id = c.at("id").get<int>();
    if (id <= 0 || id > 65535) throw InvalidInput("manifest: class id must be in 1..65535");
    m.classes.add(static_cast<ClassId>(id), c.at("name").get<std::string>());
  }
  if (m.classes.entries().empty()) throw InvalidInput("manifest: empty class table");
  if (j.contains("eligible_classes")) {
    for (const auto& c : j.at("eligible_classes")) m.eligible_classes.insert(detail::class_ref(c, m.classes));
  }
  if (j.contains("smooth_classes")) {
    for (const auto& c : j.at("smooth_classes")) m.smooth_classes.push_back(detail::class_ref(c, m.classes));
  }
  m.depth_scale = j.value("depth_scale", 1.0);
  m.registry = detail::opt_path(j, "registry");
  for (const auto& r : j.at("records")) {
    ManifestRecord rec;
    rec.image_id = r.at("image").get<std::string>();
    rec.rgb = detail::opt_path(r, "rgb");
    rec.gt_mask = detail::opt_path(r, "gt_mask");
    rec.polygons = detail::opt_path(r, "polygons");
    rec.probs = detail::opt_path(r, "probs");
    rec.depth = detail::opt_path(r, "depth");
    rec.background = detail::opt_path(r, "background");
    rec.clean_mask = detail::opt_path(r, "clean_mask");
    rec.split = r.value("split", "");
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [id, name] : m.classes.entries()) classes.push_back({{"id", id}, {"name", name}});
  nlohmann::json j{{"schema_version", m.schema_version}, {"dataset", m.dataset}, {"classes", classes}};
  j["eligible_classes"] = std::vector<int>(m.eligible_classes.begin(), m.eligible_classes.end());
  if (!m.smooth_classes.empty()) j["smooth_classes"] = std::vector<int>(m.smooth_classes.begin(), m.smooth_classes.end());
  j["depth_scale"] = m.depth_scale;
  if (m.registry) j["registry"] = m.registry->generic_string();
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json o{{"image", r.image_id}};
    auto put = [&](const char* key, const std::optional<fs::path>& p) {
      if (p) o[key] = p->generic_string();
    };
    put("rgb", r.rgb);
    put("gt_mask", r.gt_mask);
    put("polygons", r.polygons);
    put("probs", r.probs);
    put("depth", r.depth);
    put("background", r.background);
    put("clean_mask", r.clean_mask);
    if (!r.split.empty()) o["split"] = r.split;
    records.push_back(std::move(o));
  }
  j["records"] = std::move(records);
  return j;
}

// Structural checks plus file existence. Splits are either all assigned or
// all empty.
inline void validate_manifest(const Manifest& m, bool require_probs = false) {
  if (m.records.empty()) throw InvalidInput("manifest: no records");
  std::set<std::string> ids, names;
  std::vector<std::string> missing;
  std::size_t with_split = 0;
  auto check = [&](const ManifestRecord& r, const std::optional<fs::path>& p, const char* what) {
    if (p && !fs::exists(m.resolve(*p))) missing.push_back(r.image_id + ": " + what + " " + m.resolve(*p).string());
  };
  for (const auto& r : m.records) {
    if (r.image_id.empty()) throw InvalidInput("manifest: record without image id");
    if (!ids.insert(r.image_id).second) throw InvalidInput("manifest: duplicate image id '" + r.image_id + "'");
    if (!names.insert(safe_name(r.image_id)).second) {
      throw InvalidInput("manifest: image id '" + r.image_id + "' collides with another after file-name escaping");
    }
    if (!r.gt_mask && !r.polygons) throw InvalidInput("manifest: '" + r.image_id + "' has neither gt_mask nor polygons");
    if (require_probs && !r.probs) throw InvalidInput("manifest: '" + r.image_id + "' has no probs");
    if (!r.split.empty()) {
      if (r.split != kSplitTrain && r.split != kSplitSearch) {
        throw InvalidInput("manifest: '" + r.image_id + "' has unknown split '" + r.split + "'");
      }
      ++with_split;
    }
    check(r, r.rgb, "rgb");
    check(r, r.gt_mask, "gt_mask");
    check(r, r.polygons, "polygons");
    check(r, r.probs, "probs");
    check(r, r.depth, "depth");
    check(r, r.background, "background");
    check(r, r.clean_mask, "clean_mask");
  }
  if (with_split != 0 && with_split != m.records.size()) {
    throw InvalidInput("manifest: splits must be assigned to all records or to none");
  }
  if (m.registry && !fs::exists(m.resolve(*m.registry))) missing.push_back("registry " + m.resolve(*m.registry).string());
  if (!missing.empty()) {
    std::string msg = "manifest: missing files:";
    for (const auto& s : missing) msg += "\n  " + s;
    throw IoError(msg);
  }
}

inline Manifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("manifest " + path.string() + ": " + e.what());
  }
  Manifest m = manifest_from_json(j, fs::absolute(path).parent_path());
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// Seed-deterministic split bookkeeping. Images are ordered by a keyed hash
// of their id; the first half (rounded down) trains the meta classifier in
// half mode, and folds are dealt round-robin in k-fold mode.

struct SplitMode {
  int folds = 0;  // 0 = half mode with train-meta / search

  [[nodiscard]] bool kfold() const { return folds > 0; }
  [[nodiscard]] std::string str() const { return kfold() ? "kfold:" + std::to_string(folds) : "half"; }
};

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "half") return {};
  if (s.rfind("kfold:", 0) == 0) {
    int k = 0;
    try {
      std::size_t used = 0;
      k = std::stoi(s.substr(6), &used);
      if (used != s.size() - 6) k = 0;
    } catch (const std::exception&) {
      k = 0;
    }
    if (k >= 2) return {k};
  }
  throw InvalidInput("split mode must be 'half' or 'kfold:K' with K >= 2, got '" + s + "'");
}

inline std::vector<std::string> hash_order(const Manifest& m, std::uint64_t seed) {
  std::vector<std::pair<double, std::string>> keyed;
  for (const auto& r : m.records) keyed.push_back({keyed_uniform(seed, r.image_id, 0x5EEDull), r.image_id});
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> out;
  for (auto& [_, id] : keyed) out.push_back(std::move(id));
  return out;
}

// Fills empty splits half/half; leaves explicit splits alone.
inline void assign_splits(Manifest& m, std::uint64_t seed) {
  if (std::all_of(m.records.begin(), m.records.end(), [](const auto& r) { return !r.split.empty(); })) return;
  const auto order = hash_order(m, seed);
  std::map<std::string, std::string> split;
  for (std::size_t i = 0; i < order.size(); ++i) split[order[i]] = i < order.size() / 2 ? kSplitTrain : kSplitSearch;
  for (auto& r : m.records) r.split = split.at(r.image_id);
}

// Fold index per image: in half mode 0 = train-meta, 1 = search.
inline std::map<std::string, int> fold_assignment(const Manifest& m, const SplitMode& mode, std::uint64_t seed) {
  std::map<std::string, int> out;
  if (!mode.kfold()) {
    Manifest copy = m;
    assign_splits(copy, seed);
    for (const auto& r : copy.records) out[r.image_id] = r.split == kSplitTrain ? 0 : 1;
    return out;
  }
  if (static_cast<int>(m.records.size()) < mode.folds) {
    throw InvalidInput("k-fold split: fewer images than folds");
  }
  const auto order = hash_order(m, seed);
  for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = static_cast<int>(i % mode.folds);
  return out;
}

}  // namespace segaudit
