#pragma once

// End-to-end commands: benchmark perturbation over a manifest and the
// detect-and-evaluate pipeline (extract, match, featurize, train on the
// meta split, propose on the search split, score against the registry).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "segaudit/detect.hpp"
#include "segaudit/evaluate.hpp"
#include "segaudit/io.hpp"
#include "segaudit/manifest.hpp"
#include "segaudit/matching.hpp"
#include "segaudit/metaseg.hpp"
#include "segaudit/perturb.hpp"

namespace segaudit {

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
// concurrency). Failures are collected per index and reported together.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn, const std::vector<std::string>* labels = nullptr) {
  std::vector<std::exception_ptr> errors(n);
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  std::vector<std::string> messages;
  bool io = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    const std::string who = labels ? (*labels)[i] : "#" + std::to_string(i);
    try {
      std::rethrow_exception(errors[i]);
    } catch (const IoError& e) {
      io = true;
      messages.push_back(who + ": " + e.what());
    } catch (const std::exception& e) {
      messages.push_back(who + ": " + e.what());
    }
  }
  if (messages.empty()) return;
  std::string msg = std::to_string(messages.size()) + " image(s) failed:";
  for (const auto& m : messages) msg += "\n  " + m;
  if (io) throw IoError(msg);
  throw InvalidInput(msg);
}

}  // namespace detail

// Tracks files written into an output directory and removes them again
// unless commit() is called.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)), existed_(fs::exists(dir_)) {
    fs::create_directories(dir_);
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (!existed_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (const auto& p : written_) fs::remove(dir_ / p, ec);
  }

  void write(const fs::path& rel, std::span<const std::uint8_t> bytes) {
    {
      std::lock_guard lock(mu_);
      written_.push_back(rel);
    }
    write_file(dir_ / rel, bytes);
  }
  void write_text(const fs::path& rel, const std::string& text) {
    write(rel, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  void commit() { committed_ = true; }
  [[nodiscard]] const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  bool existed_;
  bool committed_ = false;
  std::mutex mu_;
  std::vector<fs::path> written_;
};

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Loads the annotation of a record as a mask (rasterizing polygons).
inline SegMask load_gt(const Manifest& m, const ManifestRecord& r) {
  if (r.gt_mask) return read_mask_png(m.resolve(*r.gt_mask), m.num_classes());
  const auto ann = polygons_from_json(nlohmann::json::parse(read_text(m.resolve(*r.polygons))));
  std::vector<std::string> warnings;
  return rasterize(ann, m.classes, &warnings);
}

inline ProbMap load_probs(const Manifest& m, const ManifestRecord& r) {
  if (!r.probs) throw InvalidInput("no probability map for '" + r.image_id + "'");
  ProbMap p = read_probmap(m.resolve(*r.probs));
  if (p.classes != m.num_classes()) {
    throw InvalidInput("probability map of '" + r.image_id + "' has " + std::to_string(p.classes) +
                       " channels, class table has " + std::to_string(m.num_classes()));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------

struct PerturbOptions {
  PerturbConfig perturb;
  SmoothConfig smooth;
  int threads = 0;
};

struct PerturbSummary {
  std::size_t images = 0;
  std::size_t drops = 0;             // Bernoulli successes
  std::size_t registry_entries = 0;
  double expected_drops = 0.0;       // sum of drop probabilities
  double drop_variance = 0.0;
  ErrorRegistry registry;
  Manifest manifest;                 // the perturbed manifest
};

inline nlohmann::json perturb_config_json(const PerturbOptions& o) {
  return {{"p_hat", o.perturb.p_hat},
          {"size_min", o.perturb.size_min},
          {"size_max", o.perturb.size_max},
          {"eligible_classes", std::vector<int>(o.perturb.eligible_classes.begin(), o.perturb.eligible_classes.end())},
          {"seed", o.perturb.seed},
          {"smooth_intensity", o.smooth.intensity},
          {"smooth_sigma", o.smooth.sigma},
          {"smooth_threshold", o.smooth.threshold}};
}

// Writes masks/<id>.png (perturbed), clean/<id>.png, polygons/<id>.json for
// polygon records, registry.jsonl, manifest.json and perturb_report.json.
inline PerturbSummary cmd_perturb(const Manifest& input, const PerturbOptions& opts, const fs::path& out_dir) {
  opts.perturb.validate();
  validate_manifest(input);
  PerturbConfig cfg = opts.perturb;
  if (cfg.eligible_classes.empty()) cfg.eligible_classes = input.eligible_classes;

  OutputGuard out(out_dir);
  const fs::path out_abs = fs::absolute(out_dir);
  Manifest result = input;
  assign_splits(result, cfg.seed);
  result.base_dir = out_abs;
  result.registry = "registry.jsonl";

  struct PerImage {
    ErrorRegistry registry;
    std::size_t drops = 0;
    double expected = 0.0;
    double variance = 0.0;
    std::vector<std::string> warnings;
  };
  std::vector<PerImage> per(input.records.size());
  std::vector<std::string> labels;
  for (const auto& r : input.records) labels.push_back(r.image_id);

  auto rel = [&](const std::optional<fs::path>& p) -> std::optional<fs::path> {
    if (!p) return std::nullopt;
    return fs::relative(fs::absolute(input.resolve(*p)), out_abs);
  };

  detail::parallel_for(
      input.records.size(), opts.threads,
      [&](std::size_t i) {
        const ManifestRecord& r = input.records[i];
        ManifestRecord& o = result.records[i];
        PerImage& acc = per[i];
        const std::string name = safe_name(r.image_id);
        auto tally = [&](std::int64_t size, ClassId cls) {
          if (!cfg.eligible(cls)) return;
          const double p = drop_probability(size, cfg);
          acc.expected += p;
          acc.variance += p * (1 - p);
        };
        if (!r.gt_mask) {
          const auto ann = polygons_from_json(nlohmann::json::parse(read_text(input.resolve(*r.polygons))));
          auto pp = perturb_polygons(ann, input.classes, cfg, r.image_id, &acc.warnings);
          const auto owner = rasterize_owners(ann, nullptr);
          std::vector<std::int64_t> visible(ann.objects.size(), 0);
          for (int k : owner) {
            if (k >= 0) ++visible[k];
          }
          for (std::size_t k = 0; k < ann.objects.size(); ++k) tally(visible[k], input.classes.id(ann.objects[k].label));
          acc.drops = ann.objects.size() - pp.perturbed.objects.size();
          out.write("clean/" + name + ".png", encode_mask_png(pp.clean_mask));
          out.write("masks/" + name + ".png", encode_mask_png(pp.perturbed_mask));
          out.write_text("polygons/" + name + ".json", dump_json(polygons_to_json(pp.perturbed)));
          acc.registry = std::move(pp.registry);
          o.polygons = fs::path("polygons/" + name + ".json");
        } else {
          const fs::path src = input.resolve(*r.gt_mask);
          SegMask clean = read_mask_png(src, input.num_classes());
          bool smoothed = false;
          if (!input.smooth_classes.empty()) {
            if (!r.depth) throw InvalidInput("smoothing requested but no depth raster");
            const DepthMap depth = read_depth_png(input.resolve(*r.depth), input.depth_scale);
            clean = smooth_annotation(clean, &depth, input.smooth_classes, opts.smooth);
            smoothed = true;
          }
          std::optional<SegMask> background;
          if (r.background) background = read_mask_png(input.resolve(*r.background), input.num_classes());
          for (const auto& k : extract_components(clean).components) tally(k.size, k.class_id);
          auto rp = perturb_raster(clean, background ? &*background : nullptr, cfg, r.image_id);
          acc.drops = rp.registry.size();
          if (!smoothed && rp.registry.empty()) {
            const auto bytes = read_file(src);
            out.write("clean/" + name + ".png", bytes);
            out.write("masks/" + name + ".png", bytes);
          } else {
            out.write("clean/" + name + ".png", encode_mask_png(clean));
            out.write("masks/" + name + ".png", encode_mask_png(rp.perturbed));
          }
          acc.registry = std::move(rp.registry);
          o.polygons.reset();
        }
        o.gt_mask = fs::path("masks/" + name + ".png");
        o.clean_mask = fs::path("clean/" + name + ".png");
        o.rgb = rel(r.rgb);
        o.probs = rel(r.probs);
        o.depth = rel(r.depth);
        o.background = rel(r.background);
      },
      &labels);

  PerturbSummary summary;
  summary.images = input.records.size();
  nlohmann::json images = nlohmann::json::array();
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < per.size(); ++i) {
    summary.drops += per[i].drops;
    summary.expected_drops += per[i].expected;
    summary.drop_variance += per[i].variance;
    images.push_back({{"image", input.records[i].image_id},
                      {"drops", per[i].drops},
                      {"registry_entries", per[i].registry.size()},
                      {"expected_drops", per[i].expected}});
    for (auto& e : per[i].registry) summary.registry.push_back(std::move(e));
    for (auto& w : per[i].warnings) warnings.push_back(input.records[i].image_id + ": " + w);
  }
  summary.registry_entries = summary.registry.size();
  out.write_text("registry.jsonl", registry_to_jsonl(summary.registry));
  out.write_text("manifest.json", dump_json(manifest_to_json(result)));
  nlohmann::json report{{"config", perturb_config_json(opts)},
                        {"images", summary.images},
                        {"drops", summary.drops},
                        {"registry_entries", summary.registry_entries},
                        {"expected_drops", summary.expected_drops},
                        {"expected_drops_sd", std::sqrt(summary.drop_variance)},
                        {"per_image", images},
                        {"warnings", warnings}};
  out.write_text("perturb_report.json", dump_json(report));
  out.commit();
  summary.manifest = std::move(result);
  return summary;
}

// ---------------------------------------------------------------------------

struct PipelineConfig {
  double tau = 0.25;
  SplitMode split;
  std::uint64_t seed = 0;
  TrainConfig train;
  ProposeOptions propose;
  std::int64_t baseline1_min_size = 250;
  int reliability_bins = 10;
  int threads = 0;
};

inline nlohmann::json pipeline_config_json(const PipelineConfig& c) {
  return {{"tau", c.tau},
          {"split_mode", c.split.str()},
          {"seed", c.seed},
          {"epochs", c.train.epochs},
          {"learning_rate", c.train.learning_rate},
          {"l2", c.train.l2},
          {"train_seed", c.train.seed},
          {"balance_classes", c.train.balance_classes},
          {"crop_padding", c.propose.crop_padding},
          {"min_candidate_size", c.propose.min_size},
          {"baseline1_min_size", c.baseline1_min_size},
          {"reliability_bins", c.reliability_bins}};
}

// Everything later stages need from one image; the probability map itself
// is not kept.
struct ImageAnalysis {
  std::string image_id;
  int fold = 0;
  std::vector<Component> pred_components;
  std::vector<PredMatch> pred_matches;
  std::vector<std::vector<double>> features;
  std::vector<Candidate> baseline1;
  PixelConfusion confusion{0};
};

inline ImageAnalysis analyze_image(const Manifest& m, const ManifestRecord& r, const PipelineConfig& cfg) {
  const SegMask gt = load_gt(m, r);
  const ProbMap probs = load_probs(m, r);
  detail::require_same_dims(gt.height, gt.width, probs.height, probs.width, r.image_id.c_str());
  const SegMask pred_mask = argmax_mask(probs);
  const auto gtc = extract_components(gt);
  const auto pred = extract_components(pred_mask, true, Origin::prediction);
  const auto match = assign(gtc, pred, cfg.tau);

  ImageAnalysis a;
  a.image_id = r.image_id;
  a.pred_matches = match.pred;
  for (const Component& k : pred.components) a.features.push_back(featurize(k, probs, pred).values);
  a.pred_components = pred.components;
  // void counts as a class here: polygon drops leave void holes
  a.baseline1 = baseline1(r.image_id, extract_components(gt, false), cfg.baseline1_min_size, cfg.propose);
  const SegMask reference = r.clean_mask ? read_mask_png(m.resolve(*r.clean_mask), m.num_classes()) : gt;
  detail::require_same_dims(reference.height, reference.width, gt.height, gt.width, "clean mask");
  a.confusion = PixelConfusion(m.num_classes());
  a.confusion.add(reference, pred_mask);
  return a;
}

inline void append_rows(MetaDataset& data, const ImageAnalysis& a, double tau) {
  MetaDataset part;
  part.tau = tau;
  for (std::size_t j = 0; j < a.pred_components.size(); ++j) {
    part.rows.push_back(a.features[j]);
    part.targets.push_back(a.pred_matches[j].status == PredStatus::fp ? 0 : 1);
    part.provenance.push_back({a.image_id, a.pred_components[j].id});
  }
  data.append(part);
}

struct EvaluationSummary {
  DetectionOutcome method;
  double ap = 0.0;
  ClassReport per_class;
  DetectionOutcome baseline1;
  DetectionOutcome baseline2;
  std::size_t registry_entries = 0;
};

struct PipelineResult {
  std::vector<Candidate> candidates;
  std::vector<Candidate> baseline2;
  std::vector<MetaModel> models;
  MetaDataset dataset;
  std::optional<EvaluationSummary> evaluation;
  std::optional<double> miou;
  nlohmann::json report;
  std::string table;
};

inline nlohmann::json class_report_json(const ClassReport& r, const ClassTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.classes) {
    auto j = outcome_to_json(row.outcome);
    j["class_id"] = row.class_id;
    j["class"] = table.name(row.class_id);
    rows.push_back(std::move(j));
  }
  return {{"classes", rows}, {"overall", outcome_to_json(r.overall)}};
}

// Writes candidates.jsonl, meta_dataset.csv, meta_model*.json, report.json
// and report.txt into out_dir.
inline PipelineResult cmd_pipeline(const Manifest& m, const PipelineConfig& cfg, const fs::path& out_dir) {
  validate_manifest(m, true);
  detail::require(cfg.tau >= 0.0 && cfg.tau < 1.0, "pipeline: tau must lie in [0, 1)");
  const auto folds = fold_assignment(m, cfg.split, cfg.seed);
  const int num_folds = cfg.split.kfold() ? cfg.split.folds : 2;
  if (!cfg.split.kfold()) {
    std::set<int> used;
    for (const auto& [_, f] : folds) used.insert(f);
    if (!used.contains(0)) throw InvalidInput("pipeline: the train-meta split is empty");
    if (!used.contains(1)) throw InvalidInput("pipeline: the search split is empty");
  }

  OutputGuard out(out_dir);
  std::vector<ImageAnalysis> images(m.records.size());
  std::vector<std::string> labels;
  for (const auto& r : m.records) labels.push_back(r.image_id);
  detail::parallel_for(
      m.records.size(), cfg.threads,
      [&](std::size_t i) {
        images[i] = analyze_image(m, m.records[i], cfg);
        images[i].fold = folds.at(m.records[i].image_id);
      },
      &labels);

  PipelineResult result;
  result.dataset.tau = cfg.tau;
  for (const auto& a : images) append_rows(result.dataset, a, cfg.tau);

  // (train folds, search fold) pairs
  std::vector<std::pair<std::set<int>, int>> plan;
  if (cfg.split.kfold()) {
    for (int f = 0; f < num_folds; ++f) {
      std::set<int> train;
      for (int g = 0; g < num_folds; ++g) {
        if (g != f) train.insert(g);
      }
      plan.push_back({train, f});
    }
  } else {
    plan.push_back({{0}, 1});
  }

  std::vector<double> held_out_scores;
  std::vector<int> held_out_targets;
  for (const auto& [train_folds, search_fold] : plan) {
    MetaDataset train;
    train.tau = cfg.tau;
    for (const auto& a : images) {
      if (train_folds.contains(a.fold)) append_rows(train, a, cfg.tau);
    }
    const MetaModel model = train_meta(train, cfg.train);
    for (const auto& a : images) {
      if (a.fold != search_fold) continue;
      for (std::size_t j = 0; j < a.pred_components.size(); ++j) {
        const double s = score(model, a.features[j]);
        held_out_scores.push_back(s);
        held_out_targets.push_back(a.pred_matches[j].status == PredStatus::fp ? 0 : 1);
        const Component& k = a.pred_components[j];
        if (!is_error_candidate(a.pred_matches[j]) || k.size < cfg.propose.min_size) continue;
        result.candidates.push_back(make_candidate(a.image_id, k, s, cfg.propose));
        result.baseline2.push_back(make_candidate(a.image_id, k, 1.0, cfg.propose));
      }
    }
    result.models.push_back(model);
  }
  rank_candidates(result.candidates);
  rank_candidates(result.baseline2);

  std::set<std::string> search_images;
  PixelConfusion confusion(m.num_classes());
  std::vector<Candidate> b1;
  for (const auto& a : images) {
    if (cfg.split.kfold() || a.fold == 1) {
      search_images.insert(a.image_id);
      confusion += a.confusion;
      b1.insert(b1.end(), a.baseline1.begin(), a.baseline1.end());
    }
  }
  result.miou = miou(confusion).mean;

  nlohmann::json report{{"config", pipeline_config_json(cfg)},
                        {"dataset", m.dataset},
                        {"images", m.records.size()},
                        {"search_images", search_images.size()},
                        {"meta_rows", result.dataset.size()},
                        {"candidates", result.candidates.size()},
                        {"baseline2_candidates", result.baseline2.size()},
                        {"baseline1_candidates", b1.size()},
                        {"miou", *result.miou}};
  nlohmann::json split_json = nlohmann::json::object();
  for (const auto& a : images) {
    split_json[a.image_id] = cfg.split.kfold() ? nlohmann::json(a.fold) : nlohmann::json(a.fold == 0 ? kSplitTrain : kSplitSearch);
  }
  report["splits"] = split_json;
  nlohmann::json calib = nlohmann::json::array();
  if (held_out_scores.size() >= 1) {
    for (const auto& b : reliability_from_scores(held_out_scores, held_out_targets, cfg.reliability_bins)) {
      calib.push_back({{"lower", b.lower}, {"upper", b.upper}, {"mean_score", b.mean_score},
                       {"accuracy", b.accuracy}, {"count", b.count}});
    }
  }
  report["calibration"] = calib;

  std::vector<ReportRow> rows;
  if (m.registry) {
    ErrorRegistry registry;
    for (auto& e : registry_from_jsonl(read_text(m.resolve(*m.registry)))) {
      if (!folds.contains(e.image_id)) throw InvalidInput("registry image '" + e.image_id + "' is not in the manifest");
      if (search_images.contains(e.image_id)) registry.push_back(std::move(e));
    }
    EvaluationSummary ev;
    ev.registry_entries = registry.size();
    ev.method = result.candidates.empty()
                    ? make_outcome(1.0, 0, 0, static_cast<std::int64_t>(registry.size()))
                    : best_f1_threshold(result.candidates, registry, cfg.tau);
    ev.ap = average_precision(result.candidates, registry, cfg.tau).ap;
    ev.per_class = per_class_report(result.candidates, registry, ev.method.t, cfg.tau);
    ev.baseline2 = evaluate_detection(result.baseline2, registry, 0.0, cfg.tau, &search_images);
    ev.baseline1 = evaluate_review_all(b1, registry);
    report["evaluation"] = {{"registry_entries", ev.registry_entries},
                            {"method", outcome_to_json(ev.method)},
                            {"ap", ev.ap},
                            {"per_class", class_report_json(ev.per_class, m.classes)},
                            {"baseline1", outcome_to_json(ev.baseline1)},
                            {"baseline2", outcome_to_json(ev.baseline2)}};
    rows.push_back({"method", result.miou, ev.method, ev.ap});
    rows.push_back({"baseline 1", result.miou, ev.baseline1, std::nullopt});
    rows.push_back({"baseline 2", result.miou, ev.baseline2, std::nullopt});
    result.evaluation = ev;
  }
  result.report = report;

  std::ostringstream txt;
  txt << "dataset: " << (m.dataset.empty() ? "-" : m.dataset) << "\n";
  for (const auto& [k, v] : report["config"].items()) txt << k << ": " << v.dump() << "\n";
  txt << "images: " << m.records.size() << " (search " << search_images.size() << ")\n";
  txt << "candidates: " << result.candidates.size() << "\n\n";
  if (!rows.empty()) {
    txt << format_table(rows);
    txt << "\nper class at t = " << result.evaluation->method.t << "\n";
    std::vector<ReportRow> class_rows;
    for (const auto& r : result.evaluation->per_class.classes) {
      class_rows.push_back({m.classes.name(r.class_id), std::nullopt, r.outcome, std::nullopt});
    }
    class_rows.push_back({"overall", std::nullopt, result.evaluation->per_class.overall, std::nullopt});
    txt << format_table(class_rows);
  }
  result.table = txt.str();

  out.write_text("candidates.jsonl", candidates_to_jsonl(result.candidates));
  out.write_text("meta_dataset.csv", dataset_to_csv(result.dataset));
  if (result.models.size() == 1) {
    out.write_text("meta_model.json", dump_json(model_to_json(result.models[0])));
  } else {
    for (std::size_t f = 0; f < result.models.size(); ++f) {
      out.write_text("meta_model_fold" + std::to_string(f) + ".json", dump_json(model_to_json(result.models[f])));
    }
  }
  out.write_text("report.json", dump_json(report));
  out.write_text("report.txt", result.table);
  out.commit();
  return result;
}

// ---------------------------------------------------------------------------

struct EvalResult {
  DetectionOutcome outcome;
  double ap = 0.0;
  ClassReport per_class;
  nlohmann::json report;
  std::string table;
};

// Scores a candidate file against a registry, at threshold t or at the
// F1-maximizing threshold when t is absent.
inline EvalResult cmd_eval(const std::vector<Candidate>& candidates, const ErrorRegistry& registry, double tau,
                           std::optional<double> t, const ClassTable* classes = nullptr) {
  EvalResult r;
  if (t) {
    r.outcome = evaluate_detection(candidates, registry, *t, tau);
  } else if (candidates.empty()) {
    r.outcome = make_outcome(1.0, 0, 0, static_cast<std::int64_t>(registry.size()));
  } else {
    r.outcome = best_f1_threshold(candidates, registry, tau);
  }
  r.ap = average_precision(candidates, registry, tau).ap;
  r.per_class = per_class_report(candidates, registry, r.outcome.t, tau);
  const ClassTable empty;
  const ClassTable& names = classes ? *classes : empty;
  r.report = {{"tau", tau},
              {"threshold_mode", t ? "fixed" : "best_f1"},
              {"outcome", outcome_to_json(r.outcome)},
              {"ap", r.ap},
              {"per_class", class_report_json(r.per_class, names)}};
  std::vector<ReportRow> rows{{"method", std::nullopt, r.outcome, r.ap}};
  for (const auto& c : r.per_class.classes) rows.push_back({names.name(c.class_id), std::nullopt, c.outcome, std::nullopt});
  r.table = format_table(rows);
  return r;
}

}  // namespace segaudit
