// segaudit command line: synth, perturb, pipeline, export, serve, eval.
// Options may also come from an INI/TOML file given with --config; command
// line flags win over the file, the file over built-in defaults.

#include <pthread.h>

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segaudit/export.hpp"
#include "segaudit/pipeline.hpp"
#include "segaudit/review.hpp"
#include "segaudit/synthetic.hpp"

using namespace segaudit;

namespace {

struct Args {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;

  SynthConfig synth;
  PerturbOptions perturb;
  std::vector<int> eligible;

  PipelineConfig pipeline;
  std::string split_mode = "half";

  std::string candidates;
  std::size_t top_n = 100;
  std::vector<std::string> groups;

  std::string bundle;
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string reviewer = "reviewer";
  std::string verdicts;

  std::string registry;
  double tau = 0.25;
  std::optional<double> t;
};

int run_synth(const Args& a) {
  SynthConfig c = a.synth;
  c.seed = a.seed;
  const Manifest m = write_synthetic_dataset(c, a.out);
  std::cout << "wrote " << m.records.size() << " scenes to " << a.out << "\n";
  return 0;
}

int run_perturb(Args a) {
  const Manifest m = load_manifest(a.manifest);
  a.perturb.perturb.seed = a.seed;
  a.perturb.threads = a.threads;
  a.perturb.perturb.eligible_classes.insert(a.eligible.begin(), a.eligible.end());
  const auto s = cmd_perturb(m, a.perturb, a.out);
  std::cout << "images " << s.images << ", drops " << s.drops << " (expected " << s.expected_drops << " +- "
            << std::sqrt(s.drop_variance) << "), registry entries " << s.registry_entries << "\n";
  return 0;
}

int run_pipeline(Args a) {
  const Manifest m = load_manifest(a.manifest);
  a.pipeline.split = parse_split_mode(a.split_mode);
  a.pipeline.seed = a.seed;
  a.pipeline.tau = a.tau;
  a.pipeline.threads = a.threads;
  const auto r = cmd_pipeline(m, a.pipeline, a.out);
  std::cout << r.table;
  return 0;
}

int run_export(const Args& a) {
  const Manifest m = load_manifest(a.manifest);
  const auto cands = candidates_from_jsonl(read_text(a.candidates));
  ExportOptions o;
  o.top_n = a.top_n;
  o.threads = a.threads;
  for (const auto& g : a.groups) o.groups.push_back(parse_class_group(g, m.classes));
  const auto r = cmd_export(m, cands, o, a.out);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "exported " << r.entries.size() << " candidates to " << a.out << "\n";
  return 0;
}

int run_serve(const Args& a) {
  // SIGINT/SIGTERM are taken by a waiter thread instead of a handler
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
  Bundle b = load_bundle(a.bundle);
  const fs::path log = a.verdicts.empty() ? fs::path(a.bundle) / "verdicts.jsonl" : fs::path(a.verdicts);
  ReviewStore store(std::move(b), log, a.reviewer);
  ReviewServer server(store);
  const int port = server.bind(a.host, a.port);
  std::cout << "serving " << store.bundle().entries.size() << " candidates on http://" << a.host << ":" << port
            << "/api/candidates" << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.stop();
  });
  server.run();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  return 0;
}

int run_eval(const Args& a) {
  const auto cands = candidates_from_jsonl(read_text(a.candidates));
  const auto reg = registry_from_jsonl(read_text(a.registry));
  std::optional<Manifest> m;
  if (!a.manifest.empty()) m = load_manifest(a.manifest);
  auto r = cmd_eval(cands, reg, a.tau, a.t, m ? &m->classes : nullptr);
  if (!a.out.empty()) write_text(a.out, dump_json(r.report));
  std::cout << r.table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segaudit: label error detection for semantic segmentation"};
  app.set_config("--config", "", "INI/TOML file with option defaults (per-command sections)");
  app.require_subcommand(1);
  Args a;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark dataset");
  synth->add_option("--out", a.out, "Output directory")->required();
  synth->add_option("--scenes", a.synth.scenes, "Number of scenes")->capture_default_str();
  synth->add_option("--height", a.synth.height)->capture_default_str();
  synth->add_option("--width", a.synth.width)->capture_default_str();
  synth->add_option("--seed", a.seed, "Generator seed")->capture_default_str();
  synth->add_flag("!--no-rgb", a.synth.rgb, "Skip the RGB images");

  auto* perturb = app.add_subcommand("perturb", "Drop annotated components to build a benchmark");
  perturb->add_option("--manifest", a.manifest)->required()->check(CLI::ExistingFile);
  perturb->add_option("--out", a.out)->required();
  perturb->add_option("--p-hat", a.perturb.perturb.p_hat, "Peak drop probability")->capture_default_str();
  perturb->add_option("--size-min", a.perturb.perturb.size_min)->capture_default_str();
  perturb->add_option("--size-max", a.perturb.perturb.size_max)->capture_default_str();
  perturb->add_option("--eligible", a.eligible, "Eligible class ids (default: manifest setting)");
  perturb->add_option("--seed", a.seed)->capture_default_str();
  perturb->add_option("--smooth-intensity", a.perturb.smooth.intensity)->capture_default_str();
  perturb->add_option("--smooth-sigma", a.perturb.smooth.sigma)->capture_default_str();
  perturb->add_option("--smooth-threshold", a.perturb.smooth.threshold)->capture_default_str();
  perturb->add_option("--threads", a.threads, "Worker threads (0 = all cores)")->capture_default_str();

  auto* pipeline = app.add_subcommand("pipeline", "Train the meta classifier and propose label errors");
  pipeline->add_option("--manifest", a.manifest)->required()->check(CLI::ExistingFile);
  pipeline->add_option("--out", a.out)->required();
  pipeline->add_option("--tau", a.tau, "sIoU / coverage threshold")->capture_default_str();
  pipeline->add_option("--seed", a.seed, "Split seed")->capture_default_str();
  pipeline->add_option("--split-mode", a.split_mode, "half or kfold:K")->capture_default_str();
  pipeline->add_option("--epochs", a.pipeline.train.epochs)->capture_default_str();
  pipeline->add_option("--learning-rate", a.pipeline.train.learning_rate)->capture_default_str();
  pipeline->add_option("--l2", a.pipeline.train.l2)->capture_default_str();
  pipeline->add_option("--train-seed", a.pipeline.train.seed)->capture_default_str();
  pipeline->add_flag("--balance-classes", a.pipeline.train.balance_classes);
  pipeline->add_option("--crop-padding", a.pipeline.propose.crop_padding)->capture_default_str();
  pipeline->add_option("--min-size", a.pipeline.propose.min_size, "Smallest candidate kept")->capture_default_str();
  pipeline->add_option("--baseline1-min-size", a.pipeline.baseline1_min_size)->capture_default_str();
  pipeline->add_option("--reliability-bins", a.pipeline.reliability_bins)->capture_default_str();
  pipeline->add_option("--threads", a.threads)->capture_default_str();

  auto* exp = app.add_subcommand("export", "Write the top-n review bundle");
  exp->add_option("--manifest", a.manifest)->required()->check(CLI::ExistingFile);
  exp->add_option("--candidates", a.candidates)->required()->check(CLI::ExistingFile);
  exp->add_option("--out", a.out)->required();
  exp->add_option("--top-n", a.top_n, "Candidates per split")->capture_default_str();
  exp->add_option("--group", a.groups, "Class group with quota, e.g. person,car=75 (repeatable)");
  exp->add_option("--threads", a.threads)->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Serve a review bundle over HTTP");
  serve->add_option("--bundle", a.bundle)->required()->check(CLI::ExistingDirectory);
  serve->add_option("--host", a.host)->capture_default_str();
  serve->add_option("--port", a.port, "0 picks a free port")->capture_default_str();
  serve->add_option("--reviewer", a.reviewer, "Reviewer id for verdicts without one")->capture_default_str();
  serve->add_option("--verdicts", a.verdicts, "Verdict log (default: <bundle>/verdicts.jsonl)");

  auto* eval = app.add_subcommand("eval", "Score a candidate file against an error registry");
  eval->add_option("--candidates", a.candidates)->required()->check(CLI::ExistingFile);
  eval->add_option("--registry", a.registry)->required()->check(CLI::ExistingFile);
  eval->add_option("--tau", a.tau)->capture_default_str();
  eval->add_option("--t", a.t, "Fixed score threshold (default: F1-maximizing)");
  eval->add_option("--manifest", a.manifest, "Manifest for class names")->check(CLI::ExistingFile);
  eval->add_option("--out", a.out, "Write the JSON report here");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return run_synth(a);
    if (*perturb) return run_perturb(a);
    if (*pipeline) return run_pipeline(a);
    if (*exp) return run_export(a);
    if (*serve) return run_serve(a);
    if (*eval) return run_eval(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
