#pragma once

// Top-n review bundle: the highest-scoring candidates per split (optionally
// per class group with percentage quotas) plus rendered crops.

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "segaudit/detect.hpp"
#include "segaudit/manifest.hpp"
#include "segaudit/pipeline.hpp"
#include "segaudit/render.hpp"

namespace segaudit {

inline constexpr int kBundleSchemaVersion = 1;

struct ClassGroup {
  std::string name;
  std::set<ClassId> classes;
  double quota = 100.0;  // percent of n
};

// "person,rider,car=75" -> group of three classes with a 75% quota. Class
// names or numeric ids.
inline ClassGroup parse_class_group(const std::string& spec, const ClassTable& table) {
  const auto eq = spec.rfind('=');
  if (eq == std::string::npos || eq == 0) throw InvalidInput("class group '" + spec + "': expected NAMES=PERCENT");
  ClassGroup g;
  g.name = spec.substr(0, eq);
  try {
    std::size_t used = 0;
    g.quota = std::stod(spec.substr(eq + 1), &used);
    if (used != spec.size() - eq - 1) throw InvalidInput("");
  } catch (const std::exception&) {
    throw InvalidInput("class group '" + spec + "': bad percentage");
  }
  if (!(g.quota > 0.0 && g.quota <= 100.0)) throw InvalidInput("class group '" + spec + "': percentage outside (0, 100]");
  std::string item;
  std::istringstream in(g.name);
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    if (table.contains(item)) {
      g.classes.insert(table.id(item));
    } else if (std::all_of(item.begin(), item.end(), [](unsigned char ch) { return std::isdigit(ch); }) &&
               table.entries().contains(static_cast<ClassId>(std::stoi(item)))) {
      g.classes.insert(static_cast<ClassId>(std::stoi(item)));
    } else {
      throw InvalidInput("class group '" + spec + "': unknown class '" + item + "'");
    }
  }
  if (g.classes.empty()) throw InvalidInput("class group '" + spec + "': no classes");
  return g;
}

// Largest-remainder split of n over the group percentages.
inline std::vector<std::size_t> group_quotas(const std::vector<ClassGroup>& groups, std::size_t n) {
  double total = 0.0;
  for (const auto& g : groups) total += g.quota;
  if (std::abs(total - 100.0) > 1e-9) throw InvalidInput("class group percentages must sum to 100");
  std::vector<std::size_t> q(groups.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double exact = n * groups[i].quota / 100.0;
    q[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += q[i];
    rem.push_back({-(exact - q[i]), i});
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t k = 0; used < n && k < rem.size(); ++k, ++used) ++q[rem[k].second];
  return q;
}

struct ExportOptions {
  std::size_t top_n = 100;
  std::vector<ClassGroup> groups;
  int threads = 0;
};

struct ExportedCandidate {
  Candidate candidate;
  std::size_t rank = 0;  // 1-based, over the whole bundle
  std::string split;
  std::string group;
  std::string crop_file;
};

struct ExportResult {
  std::vector<ExportedCandidate> entries;
  std::vector<std::string> warnings;
};

inline std::string crop_file_name(const std::string& image_id, int component_id) {
  return "crops/" + safe_name(image_id) + "__" + std::to_string(component_id) + ".png";
}

inline nlohmann::json exported_to_json(const ExportedCandidate& e) {
  auto j = candidate_to_json(e.candidate);
  j["rank"] = e.rank;
  j["split"] = e.split;
  j["group"] = e.group;
  j["crop_file"] = e.crop_file;
  return j;
}

inline ExportedCandidate exported_from_json(const nlohmann::json& j) {
  ExportedCandidate e;
  e.candidate = candidate_from_json(j);
  e.rank = j.at("rank").get<std::size_t>();
  e.split = j.value("split", "");
  e.group = j.value("group", "");
  e.crop_file = j.value("crop_file", crop_file_name(e.candidate.image_id, e.candidate.component.id));
  return e;
}

// Picks the bundle contents without touching the file system.
inline ExportResult select_topn(const Manifest& m, std::vector<Candidate> candidates, const ExportOptions& opts) {
  detail::require(opts.top_n >= 1, "export: n must be at least 1");
  rank_candidates(candidates);
  std::map<std::string, std::string> split_of;
  for (const auto& r : m.records) split_of[r.image_id] = r.split.empty() ? "all" : r.split;
  std::map<std::string, std::vector<const Candidate*>> by_split;
  for (const auto& c : candidates) {
    auto it = split_of.find(c.image_id);
    if (it == split_of.end()) throw InvalidInput("export: candidate image '" + c.image_id + "' is not in the manifest");
    by_split[it->second].push_back(&c);
  }
  std::set<ClassId> seen;
  for (const auto& g : opts.groups) {
    for (ClassId c : g.classes) {
      if (!seen.insert(c).second) throw InvalidInput("export: class " + std::to_string(c) + " is in two groups");
    }
  }

  ExportResult out;
  std::vector<ExportedCandidate> picked;
  for (const auto& [split, list] : by_split) {
    if (opts.groups.empty()) {
      if (list.size() < opts.top_n) {
        out.warnings.push_back("split '" + split + "': requested " + std::to_string(opts.top_n) + ", only " +
                               std::to_string(list.size()) + " available; exporting all");
      }
      for (std::size_t i = 0; i < std::min(list.size(), opts.top_n); ++i) picked.push_back({*list[i], 0, split, "", ""});
      continue;
    }
    const auto quotas = group_quotas(opts.groups, opts.top_n);
    for (std::size_t g = 0; g < opts.groups.size(); ++g) {
      std::size_t taken = 0;
      for (const Candidate* c : list) {
        if (taken == quotas[g]) break;
        if (!opts.groups[g].classes.contains(c->class_id)) continue;
        picked.push_back({*c, 0, split, opts.groups[g].name, ""});
        ++taken;
      }
      if (taken < quotas[g]) {
        out.warnings.push_back("split '" + split + "', group '" + opts.groups[g].name + "': requested " +
                               std::to_string(quotas[g]) + ", only " + std::to_string(taken) +
                               " available; exporting all");
      }
    }
  }
  std::stable_sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) {
    if (a.candidate.score != b.candidate.score) return a.candidate.score > b.candidate.score;
    if (a.candidate.image_id != b.candidate.image_id) return a.candidate.image_id < b.candidate.image_id;
    return a.candidate.component.id < b.candidate.component.id;
  });
  for (std::size_t i = 0; i < picked.size(); ++i) {
    picked[i].rank = i + 1;
    picked[i].crop_file = crop_file_name(picked[i].candidate.image_id, picked[i].candidate.component.id);
  }
  out.entries = std::move(picked);
  return out;
}

// Writes candidates.jsonl, crops/ and bundle.json into out_dir.
inline ExportResult cmd_export(const Manifest& m, const std::vector<Candidate>& candidates, const ExportOptions& opts,
                               const fs::path& out_dir) {
  ExportResult result = select_topn(m, candidates, opts);
  OutputGuard out(out_dir);

  std::map<std::string, std::vector<std::size_t>> by_image;
  for (std::size_t i = 0; i < result.entries.size(); ++i) by_image[result.entries[i].candidate.image_id].push_back(i);
  std::vector<std::string> ids;
  for (const auto& [id, _] : by_image) ids.push_back(id);
  detail::parallel_for(
      ids.size(), opts.threads,
      [&](std::size_t k) {
        const ManifestRecord& r = m.record(ids[k]);
        const SegMask gt = load_gt(m, r);
        const SegMask pred = argmax_mask(load_probs(m, r));
        std::optional<RgbImage> rgb;
        if (r.rgb) rgb = decode_rgb_png(read_file(m.resolve(*r.rgb)));
        for (std::size_t i : by_image.at(ids[k])) {
          const auto& e = result.entries[i];
          out.write(e.crop_file, render_crop_png(rgb ? &*rgb : nullptr, gt, pred, e.candidate));
        }
      },
      &ids);

  std::string lines;
  for (const auto& e : result.entries) lines += exported_to_json(e).dump() + "\n";
  out.write_text("candidates.jsonl", lines);
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [id, name] : m.classes.entries()) classes.push_back({{"id", id}, {"name", name}});
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : opts.groups) {
    groups.push_back({{"name", g.name}, {"classes", std::vector<int>(g.classes.begin(), g.classes.end())}, {"quota", g.quota}});
  }
  nlohmann::json bundle{{"schema_version", kBundleSchemaVersion},
                        {"dataset", m.dataset},
                        {"classes", classes},
                        {"top_n", opts.top_n},
                        {"groups", groups},
                        {"count", result.entries.size()},
                        {"warnings", result.warnings}};
  out.write_text("bundle.json", dump_json(bundle));
  out.commit();
  return result;
}

struct Bundle {
  fs::path dir;
  nlohmann::json meta;
  ClassTable classes;
  std::vector<ExportedCandidate> entries;
};

inline Bundle load_bundle(const fs::path& dir) {
  Bundle b;
  b.dir = dir;
  try {
    b.meta = nlohmann::json::parse(read_text(dir / "bundle.json"));
    if (b.meta.value("schema_version", 0) != kBundleSchemaVersion) throw InvalidInput("bundle: unsupported schema_version");
    for (const auto& c : b.meta.at("classes")) b.classes.add(c.at("id").get<ClassId>(), c.at("name").get<std::string>());
    std::istringstream in(read_text(dir / "candidates.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) b.entries.push_back(exported_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("bundle " + dir.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < b.entries.size(); ++i) {
    if (b.entries[i].rank != i + 1) throw InvalidInput("bundle: candidates.jsonl is not in rank order");
  }
  return b;
}

}  // namespace segaudit
