#pragma once

// Component-level meta classification: hand-crafted morphology and softmax
// uncertainty features per predicted component, and a logistic model fit by
// full-batch gradient descent that estimates P(TP) for each component.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "segaudit/errors.hpp"
#include "segaudit/matching.hpp"
#include "segaudit/raster.hpp"

namespace segaudit {

inline constexpr std::array<std::string_view, 19> kFeatureNames = {
    "size",            "boundary_size",   "interior_size",  "rel_boundary",  "rel_interior",
    "entropy_mean",    "margin_mean",     "entropy_mean_in", "entropy_var_in", "entropy_mean_bd",
    "entropy_var_bd",  "margin_mean_in",  "margin_var_in",  "margin_mean_bd", "margin_var_bd",
    "max_prob_mean",   "centroid_row",    "centroid_col",   "class_id"};
inline constexpr std::size_t kNumFeatures = kFeatureNames.size();

namespace feature {
enum : std::size_t {
  size,
  boundary_size,
  interior_size,
  rel_boundary,
  rel_interior,
  entropy_mean,
  margin_mean,
  entropy_mean_in,
  entropy_var_in,
  entropy_mean_bd,
  entropy_var_bd,
  margin_mean_in,
  margin_var_in,
  margin_mean_bd,
  margin_var_bd,
  max_prob_mean,
  centroid_row,
  centroid_col,
  class_id,
};
}  // namespace feature

struct FeatureVector {
  std::vector<double> values;

  [[nodiscard]] double operator[](std::size_t i) const { return values[i]; }
};

namespace detail {

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  Moments& operator+=(const Moments& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    n += o.n;
    return *this;
  }
  [[nodiscard]] double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
  [[nodiscard]] double variance() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::max(0.0, sum_sq / static_cast<double>(n) - m * m);
  }
};

struct PixelUncertainty {
  double entropy = 0.0;  // normalized by ln c
  double margin = 0.0;   // top-1 minus top-2
  double max_prob = 0.0;
};

inline PixelUncertainty pixel_uncertainty(std::span<const float> p) {
  PixelUncertainty u;
  double h = 0.0;
  double first = -1.0;
  double second = 0.0;
  for (float f : p) {
    const double v = f;
    if (v > 0.0) h -= v * std::log(v);
    if (v > first) {
      second = std::max(first, 0.0);
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  u.entropy = p.size() > 1 ? h / std::log(static_cast<double>(p.size())) : 0.0;
  u.margin = p.size() > 1 ? first - second : 1.0;
  u.max_prob = first;
  return u;
}

}  // namespace detail

// A pixel is boundary when any 8-neighbor lies outside the component; pixels
// on the raster edge count as boundary.
inline FeatureVector featurize(const Component& k_hat, const ProbMap& probs, const ComponentMap& pred) {
  if (k_hat.size <= 0) throw InvalidInput("featurize: empty component");
  detail::require_same_dims(probs.height, probs.width, pred.height, pred.width, "featurize");
  detail::require_same_dims(k_hat.raster_height, k_hat.raster_width, pred.height, pred.width,
                            "featurize");
  detail::Moments ent_in, ent_bd, mar_in, mar_bd, maxp;
  double row_sum = 0.0;
  double col_sum = 0.0;
  std::int64_t boundary = 0;
  k_hat.for_each_pixel([&](int r, int c) {
    bool on_boundary = false;
    for (int dr = -1; dr <= 1 && !on_boundary; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr;
        const int cc = c + dc;
        if (rr < 0 || cc < 0 || rr >= pred.height || cc >= pred.width ||
            pred.label_at(rr, cc) != k_hat.id) {
          on_boundary = true;
          break;
        }
      }
    }
    const auto u = detail::pixel_uncertainty(probs.pixel(r, c));
    if (on_boundary) {
      ++boundary;
      ent_bd.add(u.entropy);
      mar_bd.add(u.margin);
    } else {
      ent_in.add(u.entropy);
      mar_in.add(u.margin);
    }
    maxp.add(u.max_prob);
    row_sum += r;
    col_sum += c;
  });

  detail::Moments ent_all = ent_in;
  ent_all += ent_bd;
  detail::Moments mar_all = mar_in;
  mar_all += mar_bd;
  if (ent_in.n == 0) {
    ent_in = ent_bd;
    mar_in = mar_bd;
  }

  const double n = static_cast<double>(k_hat.size);
  FeatureVector f;
  f.values.resize(kNumFeatures);
  f.values[feature::size] = n;
  f.values[feature::boundary_size] = static_cast<double>(boundary);
  f.values[feature::interior_size] = n - static_cast<double>(boundary);
  f.values[feature::rel_boundary] = static_cast<double>(boundary) / n;
  f.values[feature::rel_interior] = (n - static_cast<double>(boundary)) / n;
  f.values[feature::entropy_mean] = ent_all.mean();
  f.values[feature::margin_mean] = mar_all.mean();
  f.values[feature::entropy_mean_in] = ent_in.mean();
  f.values[feature::entropy_var_in] = ent_in.variance();
  f.values[feature::entropy_mean_bd] = ent_bd.mean();
  f.values[feature::entropy_var_bd] = ent_bd.variance();
  f.values[feature::margin_mean_in] = mar_in.mean();
  f.values[feature::margin_var_in] = mar_in.variance();
  f.values[feature::margin_mean_bd] = mar_bd.mean();
  f.values[feature::margin_var_bd] = mar_bd.variance();
  f.values[feature::max_prob_mean] = maxp.mean();
  f.values[feature::centroid_row] = row_sum / n / std::max(1, probs.height);
  f.values[feature::centroid_col] = col_sum / n / std::max(1, probs.width);
  f.values[feature::class_id] = k_hat.class_id;
  return f;
}

// ---------------------------------------------------------------------------

struct RowRef {
  std::string image_id;
  int component_id = 0;
  friend bool operator==(const RowRef&, const RowRef&) = default;
};

struct MetaDataset {
  std::vector<std::vector<double>> rows;
  std::vector<int> targets;  // 1 = TP, 0 = FP
  std::vector<RowRef> provenance;
  std::optional<double> tau;

  [[nodiscard]] std::size_t size() const { return rows.size(); }
  [[nodiscard]] bool empty() const { return rows.empty(); }

  void append(const MetaDataset& other) {
    if (other.tau && tau && *other.tau != *tau) throw InvalidInput("MetaDataset: inconsistent tau");
    if (!tau) tau = other.tau;
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    targets.insert(targets.end(), other.targets.begin(), other.targets.end());
    provenance.insert(provenance.end(), other.provenance.begin(), other.provenance.end());
  }
};

struct ImageEvidence {
  std::string image_id;
  const ProbMap& probs;
  const ComponentMap& pred;
  const MatchResult& match;
};

// One row per predicted component of the image; target 1 unless FP.
inline void append_image(MetaDataset& data, const ImageEvidence& img) {
  if (data.tau && *data.tau != img.match.tau) {
    throw InvalidInput("build_dataset: inconsistent tau across images");
  }
  data.tau = img.match.tau;
  if (img.match.pred.size() != img.pred.components.size()) {
    throw InvalidInput("build_dataset: match result does not belong to this prediction");
  }
  for (const Component& k : img.pred.components) {
    data.rows.push_back(featurize(k, img.probs, img.pred).values);
    data.targets.push_back(img.match.pred_match(k.id).status == PredStatus::fp ? 0 : 1);
    data.provenance.push_back({img.image_id, k.id});
  }
}

inline MetaDataset build_dataset(std::span<const ImageEvidence> images) {
  MetaDataset data;
  for (const auto& img : images) append_image(data, img);
  return data;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string dataset_to_csv(const MetaDataset& data) {
  std::ostringstream out;
  for (auto name : kFeatureNames) out << name << ',';
  out << "target,image,component_id\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.rows[i]) out << detail::format_double(v) << ',';
    out << data.targets[i] << ',' << detail::csv_field(data.provenance[i].image_id) << ','
        << data.provenance[i].component_id << '\n';
  }
  return out.str();
}

inline MetaDataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("meta dataset CSV: missing header");
  const auto header = detail::csv_split(line);
  if (header.size() != kNumFeatures + 3) throw InvalidInput("meta dataset CSV: header schema mismatch");
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    if (header[i] != kFeatureNames[i]) throw InvalidInput("meta dataset CSV: unexpected column " + header[i]);
  }
  MetaDataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::csv_split(line);
    if (fields.size() != header.size()) throw InvalidInput("meta dataset CSV: ragged row");
    std::vector<double> row(kNumFeatures);
    for (std::size_t i = 0; i < kNumFeatures; ++i) row[i] = std::stod(fields[i]);
    data.rows.push_back(std::move(row));
    data.targets.push_back(std::stoi(fields[kNumFeatures]));
    data.provenance.push_back({fields[kNumFeatures + 1], std::stoi(fields[kNumFeatures + 2])});
  }
  return data;
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 2000;
  double learning_rate = 0.1;  // decayed as lr / sqrt(epoch)
  double l2 = 1e-3;
  std::uint64_t seed = 42;
  bool balance_classes = false;  // inverse-frequency row weights
};

inline constexpr int kMetaModelSchemaVersion = 1;

struct MetaModel {
  std::vector<std::string> feature_names;
  std::vector<double> weights;  // n_f + 1, bias last
  std::vector<double> means;
  std::vector<double> stds;
  TrainConfig config;

  [[nodiscard]] std::size_t num_features() const { return means.size(); }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Mean weighted cross-entropy plus (l2/2)·|w|² (bias excluded), and its
// gradient, over already standardized rows.
struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

inline LossGradient logistic_loss(std::span<const double> weights,
                                  const std::vector<std::vector<double>>& x, std::span<const int> y,
                                  std::span<const double> row_weights, double l2) {
  const std::size_t nf = weights.size() - 1;
  LossGradient out;
  out.gradient.assign(weights.size(), 0.0);
  double total_weight = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = row_weights.empty() ? 1.0 : row_weights[i];
    double z = weights[nf];
    for (std::size_t f = 0; f < nf; ++f) z += weights[f] * x[i][f];
    // log(1 + e^z) - y z, evaluated without overflow
    out.loss += s * (std::max(z, 0.0) - y[i] * z + std::log1p(std::exp(-std::abs(z))));
    const double residual = s * (sigmoid(z) - y[i]);
    for (std::size_t f = 0; f < nf; ++f) out.gradient[f] += residual * x[i][f];
    out.gradient[nf] += residual;
    total_weight += s;
  }
  const double inv = total_weight > 0 ? 1.0 / total_weight : 0.0;
  out.loss *= inv;
  for (double& g : out.gradient) g *= inv;
  for (std::size_t f = 0; f < nf; ++f) {
    out.loss += 0.5 * l2 * weights[f] * weights[f];
    out.gradient[f] += l2 * weights[f];
  }
  return out;
}

inline std::vector<std::vector<double>> standardize(const MetaModel& model,
                                                    const std::vector<std::vector<double>>& rows) {
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(model.num_features()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t f = 0; f < model.num_features(); ++f) {
      out[i][f] = (rows[i][f] - model.means[f]) / model.stds[f];
    }
  }
  return out;
}

inline MetaModel train_meta(const MetaDataset& data, const TrainConfig& config = {},
                            std::vector<double>* loss_history = nullptr) {
  if (data.empty()) throw InvalidInput("train_meta: empty dataset");
  const std::size_t nf = data.rows.front().size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.rows[i].size() != nf) throw InvalidInput("train_meta: ragged feature rows");
    for (double v : data.rows[i]) {
      if (!std::isfinite(v)) throw InvalidInput("train_meta: non-finite feature value");
    }
    positives += data.targets[i] != 0;
  }
  if (positives == 0 || positives == data.size()) {
    throw InvalidInput("train_meta: dataset contains a single class");
  }
  detail::require(config.epochs >= 1 && config.learning_rate > 0 && config.l2 >= 0,
                  "train_meta: bad configuration");

  MetaModel model;
  model.config = config;
  model.feature_names.assign(kFeatureNames.begin(), kFeatureNames.end());
  if (nf != kNumFeatures) {
    model.feature_names.clear();
    for (std::size_t f = 0; f < nf; ++f) model.feature_names.push_back("f" + std::to_string(f));
  }
  model.means.assign(nf, 0.0);
  model.stds.assign(nf, 0.0);
  const double n = static_cast<double>(data.size());
  for (const auto& row : data.rows) {
    for (std::size_t f = 0; f < nf; ++f) model.means[f] += row[f];
  }
  for (double& m : model.means) m /= n;
  for (const auto& row : data.rows) {
    for (std::size_t f = 0; f < nf; ++f) {
      const double d = row[f] - model.means[f];
      model.stds[f] += d * d;
    }
  }
  std::vector<bool> pinned(nf, false);
  for (std::size_t f = 0; f < nf; ++f) {
    model.stds[f] = std::sqrt(model.stds[f] / n);
    if (!(model.stds[f] > 1e-12)) {
      model.stds[f] = 1.0;
      pinned[f] = true;
    }
  }
  const auto x = standardize(model, data.rows);

  std::vector<double> row_weights;
  if (config.balance_classes) {
    const double w_pos = n / (2.0 * static_cast<double>(positives));
    const double w_neg = n / (2.0 * static_cast<double>(data.size() - positives));
    for (int t : data.targets) row_weights.push_back(t ? w_pos : w_neg);
  }

  // Small seeded start; mt19937_64 output is fully specified, so the draw is
  // portable unlike std:: distributions.
  std::mt19937_64 rng(config.seed);
  model.weights.assign(nf + 1, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    if (pinned[f]) continue;
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    model.weights[f] = (u - 0.5) * 0.02;
  }

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto lg = logistic_loss(model.weights, x, data.targets, row_weights, config.l2);
    if (loss_history) loss_history->push_back(lg.loss);
    const double lr = config.learning_rate / std::sqrt(static_cast<double>(epoch));
    for (std::size_t f = 0; f <= nf; ++f) {
      if (f < nf && pinned[f]) continue;
      model.weights[f] -= lr * lg.gradient[f];
    }
  }
  if (loss_history) {
    loss_history->push_back(logistic_loss(model.weights, x, data.targets, row_weights, config.l2).loss);
  }
  return model;
}

inline double score(const MetaModel& model, std::span<const double> row) {
  if (row.size() != model.num_features() || model.weights.size() != row.size() + 1) {
    throw InvalidInput("score: feature schema mismatch (" + std::to_string(row.size()) + " vs " +
                       std::to_string(model.num_features()) + ")");
  }
  double z = model.weights.back();
  for (std::size_t f = 0; f < row.size(); ++f) {
    z += model.weights[f] * (row[f] - model.means[f]) / model.stds[f];
  }
  return sigmoid(z);
}

inline double score(const MetaModel& model, const FeatureVector& row) { return score(model, row.values); }

// ---------------------------------------------------------------------------

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_score = 0.0;
  double accuracy = 0.0;
  std::int64_t count = 0;
};

// Equal-width bins over [0,1]; a score of exactly 1 lands in the last bin.
inline std::vector<ReliabilityBin> reliability_from_scores(std::span<const double> scores,
                                                           std::span<const int> targets, int bins) {
  detail::require(bins >= 2, "reliability: need at least 2 bins");
  if (scores.empty()) throw InvalidInput("reliability: empty data");
  detail::require(scores.size() == targets.size(), "reliability: score/target length mismatch");
  std::vector<ReliabilityBin> out(bins);
  std::vector<double> hits(bins, 0.0);
  for (int b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / bins;
    out[b].upper = static_cast<double>(b + 1) / bins;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int b = std::clamp(static_cast<int>(scores[i] * bins), 0, bins - 1);
    out[b].mean_score += scores[i];
    hits[b] += targets[i] != 0;
    ++out[b].count;
  }
  for (int b = 0; b < bins; ++b) {
    if (out[b].count == 0) continue;
    out[b].mean_score /= static_cast<double>(out[b].count);
    out[b].accuracy = hits[b] / static_cast<double>(out[b].count);
  }
  return out;
}

inline std::vector<ReliabilityBin> reliability(const MetaModel& model, const MetaDataset& data, int bins) {
  if (data.empty()) throw InvalidInput("reliability: empty data");
  std::vector<double> scores;
  scores.reserve(data.size());
  for (const auto& row : data.rows) scores.push_back(score(model, row));
  return reliability_from_scores(scores, data.targets, bins);
}

// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const MetaModel& m) {
  return {{"schema_version", kMetaModelSchemaVersion},
          {"feature_names", m.feature_names},
          {"weights", m.weights},
          {"means", m.means},
          {"stds", m.stds},
          {"config",
           {{"epochs", m.config.epochs},
            {"learning_rate", m.config.learning_rate},
            {"l2", m.config.l2},
            {"seed", m.config.seed},
            {"balance_classes", m.config.balance_classes}}}};
}

inline MetaModel model_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kMetaModelSchemaVersion) {
    throw InvalidInput("meta model: unsupported schema version");
  }
  MetaModel m;
  j.at("feature_names").get_to(m.feature_names);
  j.at("weights").get_to(m.weights);
  j.at("means").get_to(m.means);
  j.at("stds").get_to(m.stds);
  const auto& c = j.at("config");
  m.config.epochs = c.at("epochs").get<int>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.l2 = c.at("l2").get<double>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.config.balance_classes = c.value("balance_classes", false);
  if (m.means.size() != m.stds.size() || m.weights.size() != m.means.size() + 1 ||
      m.feature_names.size() != m.means.size()) {
    throw InvalidInput("meta model: inconsistent vector lengths");
  }
  return m;
}

}  // namespace segaudit
