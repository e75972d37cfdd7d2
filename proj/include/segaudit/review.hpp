#pragma once

// Review service over an exported bundle. Verdicts are appended to a
// JSON-lines log; the latest verdict per (reviewer, candidate) counts.

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "segaudit/export.hpp"

namespace segaudit {

enum class Decision { confirmed, rejected, unsure };

inline std::string decision_name(Decision d) {
  switch (d) {
    case Decision::confirmed: return "confirmed";
    case Decision::rejected: return "rejected";
    case Decision::unsure: return "unsure";
  }
  return "unsure";
}

inline std::optional<Decision> parse_decision(const std::string& s) {
  if (s == "confirmed") return Decision::confirmed;
  if (s == "rejected") return Decision::rejected;
  if (s == "unsure") return Decision::unsure;
  return std::nullopt;
}

struct Verdict {
  std::string image_id;
  int component_id = 0;
  Decision decision = Decision::unsure;
  std::string reviewer;
  std::string timestamp;
};

class MalformedVerdict : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class UnknownCandidate : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

inline nlohmann::json verdict_to_json(const Verdict& v) {
  return {{"image", v.image_id},
          {"component_id", v.component_id},
          {"decision", decision_name(v.decision)},
          {"reviewer", v.reviewer},
          {"timestamp", v.timestamp}};
}

// Reviewer and timestamp may be omitted; the caller fills them in.
inline Verdict verdict_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw MalformedVerdict("verdict must be a JSON object");
  Verdict v;
  try {
    v.image_id = j.at("image").get<std::string>();
    v.component_id = j.at("component_id").get<int>();
    const auto d = parse_decision(j.at("decision").get<std::string>());
    if (!d) throw MalformedVerdict("decision must be confirmed, rejected or unsure");
    v.decision = *d;
    v.reviewer = j.value("reviewer", "");
    v.timestamp = j.value("timestamp", "");
  } catch (const nlohmann::json::exception& e) {
    throw MalformedVerdict(std::string("malformed verdict: ") + e.what());
  }
  return v;
}

struct ReviewStats {
  std::int64_t confirmed = 0;
  std::int64_t rejected = 0;
  std::int64_t unsure = 0;

  [[nodiscard]] std::int64_t reviewed() const { return confirmed + rejected + unsure; }
  [[nodiscard]] std::optional<double> precision() const {
    if (reviewed() == 0) return std::nullopt;
    return static_cast<double>(confirmed) / static_cast<double>(reviewed());
  }
  [[nodiscard]] std::optional<double> precision_excluding_unsure() const {
    if (confirmed + rejected == 0) return std::nullopt;
    return static_cast<double>(confirmed) / static_cast<double>(confirmed + rejected);
  }
  bool operator==(const ReviewStats&) const = default;
};

inline nlohmann::json stats_to_json(const ReviewStats& s) {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"confirmed", s.confirmed},
          {"rejected", s.rejected},
          {"unsure", s.unsure},
          {"reviewed", s.reviewed()},
          {"precision", opt(s.precision())},
          {"precision_excluding_unsure", opt(s.precision_excluding_unsure())}};
}

using VerdictKey = std::tuple<std::string, std::string, int>;  // reviewer, image, component

inline std::map<VerdictKey, Verdict> latest_verdicts(const std::vector<Verdict>& log) {
  std::map<VerdictKey, Verdict> latest;
  for (const auto& v : log) latest[{v.reviewer, v.image_id, v.component_id}] = v;
  return latest;
}

inline ReviewStats replay_stats(const std::vector<Verdict>& log) {
  ReviewStats s;
  for (const auto& [_, v] : latest_verdicts(log)) {
    if (v.decision == Decision::confirmed) ++s.confirmed;
    if (v.decision == Decision::rejected) ++s.rejected;
    if (v.decision == Decision::unsure) ++s.unsure;
  }
  return s;
}

inline std::vector<Verdict> verdicts_from_jsonl(const std::string& text) {
  std::vector<Verdict> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(verdict_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("verdict log: ") + e.what());
    }
  }
  return out;
}

// Verdicts from an /api/export document.
inline std::vector<Verdict> verdicts_from_export(const nlohmann::json& j) {
  std::vector<Verdict> out;
  for (const auto& v : j.at("verdicts")) out.push_back(verdict_from_json(v));
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class ReviewStore {
 public:
  ReviewStore(Bundle bundle, fs::path log_path, std::string default_reviewer = "reviewer")
      : bundle_(std::move(bundle)), log_path_(std::move(log_path)), default_reviewer_(std::move(default_reviewer)) {
    for (std::size_t i = 0; i < bundle_.entries.size(); ++i) {
      const auto& c = bundle_.entries[i].candidate;
      index_[{c.image_id, c.component.id}] = i;
    }
    if (fs::exists(log_path_)) log_ = verdicts_from_jsonl(read_text(log_path_));
    for (const auto& v : log_) {
      if (!find(v.image_id, v.component_id)) throw InvalidInput("verdict log references an unknown candidate");
    }
  }

  [[nodiscard]] const Bundle& bundle() const { return bundle_; }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& image, int component) const {
    auto it = index_.find({image, component});
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Verdict record(Verdict v) {
    if (!find(v.image_id, v.component_id)) {
      throw UnknownCandidate("unknown candidate " + v.image_id + "/" + std::to_string(v.component_id));
    }
    if (v.reviewer.empty()) v.reviewer = default_reviewer_;
    if (v.timestamp.empty()) v.timestamp = utc_timestamp();
    std::unique_lock lock(mu_);
    std::ofstream out(log_path_, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to " + log_path_.string());
    out << verdict_to_json(v).dump() << "\n";
    out.flush();
    if (!out) throw IoError("write failed: " + log_path_.string());
    log_.push_back(v);
    return v;
  }

  [[nodiscard]] ReviewStats stats() const {
    std::shared_lock lock(mu_);
    return replay_stats(log_);
  }

  [[nodiscard]] nlohmann::json candidates_json() const {
    std::shared_lock lock(mu_);
    std::map<std::pair<std::string, int>, nlohmann::json> decided;
    for (const auto& [key, v] : latest_verdicts(log_)) {
      decided[{std::get<1>(key), std::get<2>(key)}][std::get<0>(key)] = decision_name(v.decision);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : bundle_.entries) {
      const auto& c = e.candidate;
      auto it = decided.find({c.image_id, c.component.id});
      out.push_back({{"rank", e.rank},
                     {"image", c.image_id},
                     {"component_id", c.component.id},
                     {"class_id", c.class_id},
                     {"class", bundle_.classes.name(c.class_id)},
                     {"score", c.score},
                     {"size", c.size},
                     {"split", e.split},
                     {"group", e.group},
                     {"crop", bbox_to_json(c.crop)},
                     {"crop_url", "/api/crop/" + c.image_id + "/" + std::to_string(c.component.id)},
                     {"verdicts", it == decided.end() ? nlohmann::json::object() : it->second}});
    }
    return out;
  }

  [[nodiscard]] nlohmann::json export_json() const {
    std::shared_lock lock(mu_);
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : log_) verdicts.push_back(verdict_to_json(v));
    return {{"dataset", bundle_.meta.value("dataset", "")},
            {"verdicts", verdicts},
            {"stats", stats_to_json(replay_stats(log_))}};
  }

  [[nodiscard]] std::optional<std::vector<std::uint8_t>> crop(const std::string& image, int component) const {
    const auto i = find(image, component);
    if (!i) return std::nullopt;
    const fs::path p = bundle_.dir / bundle_.entries[*i].crop_file;
    if (!fs::exists(p)) return std::nullopt;
    return read_file(p);
  }

 private:
  Bundle bundle_;
  fs::path log_path_;
  std::string default_reviewer_;
  std::map<std::pair<std::string, int>, std::size_t> index_;
  std::vector<Verdict> log_;
  mutable std::shared_mutex mu_;
};

// Binds 127.0.0.1 unless told otherwise.
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store) : store_(store) { routes(); }
  ~ReviewServer() { stop(); }

  // Returns the bound port (port 0 picks a free one).
  int bind(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }
  void run() { server_.listen_after_bind(); }
  void start() {
    thread_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, {{"error", msg}}, status);
  }

  void routes() {
    server_.Get("/api/candidates", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, store_.candidates_json());
    });
    server_.Get(R"(/api/crop/(.+)/(-?\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto png = store_.crop(req.matches[1], std::stoi(req.matches[2]));
      if (!png) return send_error(res, 404, "unknown candidate");
      res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
    });
    server_.Post("/api/verdict", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded()) throw MalformedVerdict("body is not JSON");
        const Verdict v = store_.record(verdict_from_json(body));
        send_json(res, {{"verdict", verdict_to_json(v)}, {"stats", stats_to_json(store_.stats())}});
      } catch (const MalformedVerdict& e) {
        send_error(res, 409, e.what());
      } catch (const UnknownCandidate& e) {
        send_error(res, 404, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    });
    server_.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, stats_to_json(store_.stats()));
    });
    server_.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, store_.export_json());
    });
  }

  ReviewStore& store_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace segaudit
