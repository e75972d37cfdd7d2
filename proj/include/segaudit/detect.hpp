#pragma once

// Label-error candidates: false-positive predicted components with no
// same-class ground-truth overlap, ranked by the meta classifier's estimate
// that the prediction is correct. Also the two review-everything baselines.

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segaudit/matching.hpp"
#include "segaudit/metaseg.hpp"
#include "segaudit/perturb.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

struct Candidate {
  std::string image_id;
  Component component;
  double score = 1.0;
  ClassId class_id = kVoid;
  std::int64_t size = 0;
  BBox crop;
};

struct ProposeOptions {
  int crop_padding = 32;
  std::int64_t min_size = 0;  // candidates smaller than this are dropped
};

// Score descending, then (image id, component id) ascending.
inline void rank_candidates(std::vector<Candidate>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.component.id < b.component.id;
  });
}

inline Candidate make_candidate(const std::string& image_id, const Component& comp, double score,
                                const ProposeOptions& opts) {
  return {image_id, comp, score, comp.class_id, comp.size,
          comp.bbox.padded(opts.crop_padding, comp.raster_height, comp.raster_width)};
}

// FP under tau and no pixel shared with a same-class ground-truth component.
inline bool is_error_candidate(const PredMatch& m) {
  return m.status == PredStatus::fp && m.matched_gt_ids.empty();
}

inline std::vector<Candidate> propose(const std::string& image_id, const ComponentMap& pred,
                                      const ProbMap& probs, const MetaModel& model,
                                      const MatchResult& match, const ProposeOptions& opts = {}) {
  if (match.pred.size() != pred.components.size()) {
    throw InvalidInput("propose: match result does not belong to this prediction");
  }
  std::vector<Candidate> out;
  for (const Component& k : pred.components) {
    if (!is_error_candidate(match.pred_match(k.id)) || k.size < opts.min_size) continue;
    out.push_back(make_candidate(image_id, k, score(model, featurize(k, probs, pred)), opts));
  }
  rank_candidates(out);
  return out;
}

inline std::vector<Candidate> propose(const std::string& image_id, const ComponentMap& gt,
                                      const ComponentMap& pred, const ProbMap& probs,
                                      const MetaModel& model, double tau, const ProposeOptions& opts = {}) {
  detail::require_same_dims(gt.height, gt.width, probs.height, probs.width, "propose");
  return propose(image_id, pred, probs, model, assign(gt, pred, tau), opts);
}

// Candidates with score >= t, order preserved.
inline std::vector<Candidate> select(const std::vector<Candidate>& candidates, double t) {
  std::vector<Candidate> out;
  std::copy_if(candidates.begin(), candidates.end(), std::back_inserter(out),
               [t](const Candidate& c) { return c.score >= t; });
  return out;
}

// Baseline 1: review every perturbed ground-truth component above min_size.
inline std::vector<Candidate> baseline1(const std::string& image_id, const ComponentMap& gt_perturbed,
                                        std::int64_t min_size = 250, const ProposeOptions& opts = {}) {
  std::vector<Candidate> out;
  for (const Component& k : gt_perturbed.components) {
    if (k.size > min_size) out.push_back(make_candidate(image_id, k, 1.0, opts));
  }
  return out;
}

// Baseline 2: every candidate the method would consider, unscored.
inline std::vector<Candidate> baseline2(const std::string& image_id, const ComponentMap& pred,
                                        const MatchResult& match, const ProposeOptions& opts = {}) {
  std::vector<Candidate> out;
  for (const Component& k : pred.components) {
    if (is_error_candidate(match.pred_match(k.id)) && k.size >= opts.min_size) {
      out.push_back(make_candidate(image_id, k, 1.0, opts));
    }
  }
  return out;
}

inline std::vector<Candidate> baseline2(const std::string& image_id, const ComponentMap& gt,
                                        const ComponentMap& pred, double tau, const ProposeOptions& opts = {}) {
  return baseline2(image_id, pred, assign(gt, pred, tau), opts);
}

// ---------------------------------------------------------------------------

inline nlohmann::json candidate_to_json(const Candidate& c) {
  return {{"image", c.image_id},
          {"component_id", c.component.id},
          {"class_id", c.class_id},
          {"size", c.size},
          {"bbox", bbox_to_json(c.component.bbox)},
          {"crop", bbox_to_json(c.crop)},
          {"height", c.component.raster_height},
          {"width", c.component.raster_width},
          {"score", c.score},
          {"pixels_rle", runs_to_json(c.component)}};
}

inline Candidate candidate_from_json(const nlohmann::json& j) {
  Candidate c;
  c.image_id = j.at("image").get<std::string>();
  c.class_id = j.at("class_id").get<ClassId>();
  c.size = j.at("size").get<std::int64_t>();
  c.score = j.at("score").get<double>();
  c.component.id = j.at("component_id").get<int>();
  c.component.class_id = c.class_id;
  c.component.origin = Origin::prediction;
  c.component.raster_height = j.value("height", 0);
  c.component.raster_width = j.value("width", 0);
  c.component.runs = runs_from_json(j.at("pixels_rle"));
  c.component.refresh();
  if (c.component.size != c.size) throw InvalidInput("candidate: size does not match pixels_rle");
  c.crop = j.contains("crop") ? bbox_from_json(j.at("crop")) : c.component.bbox;
  return c;
}

inline std::string candidates_to_jsonl(const std::vector<Candidate>& candidates) {
  std::string out;
  for (const auto& c : candidates) out += candidate_to_json(c).dump() + "\n";
  return out;
}

inline std::vector<Candidate> candidates_from_jsonl(const std::string& text) {
  std::vector<Candidate> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(candidate_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace segaudit
