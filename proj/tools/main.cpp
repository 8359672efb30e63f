// cccdfsl command-line tool: synthetic episode generation, per-episode
// training, evaluation, interpretability traces, and seeded benchmarks.
//
// Exit codes: 0 success, 2 usage, 3 divergence, 4 input format, 5 I/O.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cccdfsl/metrics.hpp"
#include "cccdfsl/presets.hpp"
#include "cccdfsl/trainer.hpp"
#include "json.hpp"

namespace {

using namespace cccdfsl;

constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitFormat = 4;
constexpr int kExitIo = 5;

struct ConfigFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// flat key=value config; values already set on the command line win
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoFailure("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigFileError(path + ":" + std::to_string(lineno) +
                            ": expected key=value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    auto* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw ConfigFileError(path + ":" + std::to_string(lineno) +
                            ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

struct CycleFlags {
  double lambda1 = 3.0;
  double lambda2 = 2.0;
  uint32_t k = 10;
  double tau_ce = 0.01;
  double tau_soft = 0.07;
  std::string retrieval = "cross_view";
  std::string tit_mode = "soft";
  std::string dataset;
};

void add_cycle_flags(CLI::App* cmd, CycleFlags& f) {
  cmd->add_option("--lambda1", f.lambda1, "text-cycle loss weight");
  cmd->add_option("--lambda2", f.lambda2, "image-cycle loss weight");
  cmd->add_option("--k", f.k, "anchor budget per image-view and class")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tau", f.tau_ce, "cross-entropy temperature")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tau-soft", f.tau_soft, "text-cycle softmax temperature")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--retrieval", f.retrieval, "cross_view | intra_image | all_images")
      ->check(CLI::IsMember({"cross_view", "intra_image", "all_images"}));
  cmd->add_option("--tit-mode", f.tit_mode, "soft | hard_metric_only")
      ->check(CLI::IsMember({"soft", "hard_metric_only"}));
  cmd->add_option("--dataset", f.dataset,
                  "lambda preset: chestx | isic | eurosat | cropdiseases")
      ->check(CLI::IsMember({"chestx", "isic", "eurosat", "cropdiseases"}));
}

CycleConfig make_cycle(const CLI::App* cmd, const CycleFlags& f) {
  CycleConfig cfg;
  cfg.lambda1 = f.lambda1;
  cfg.lambda2 = f.lambda2;
  if (!f.dataset.empty()) {
    const auto* preset = find_preset(f.dataset);
    // explicit flags still win over the preset
    if (cmd->count("--lambda1") == 0) cfg.lambda1 = preset->lambda1;
    if (cmd->count("--lambda2") == 0) cfg.lambda2 = preset->lambda2;
    std::cerr << "dataset preset '" << f.dataset << "': lambda1=" << cfg.lambda1
              << " lambda2=" << cfg.lambda2 << "\n";
  }
  cfg.k = f.k;
  cfg.tau_ce = f.tau_ce;
  cfg.tau_soft = f.tau_soft;
  cfg.retrieval = retrieval_mode_from_string(f.retrieval);
  cfg.tit_mode = tit_mode_from_string(f.tit_mode);
  return cfg;
}

void echo_config(const CycleConfig& c, const TrainConfig& t) {
  std::cerr << "config: lambda1=" << c.lambda1 << " lambda2=" << c.lambda2
            << " k=" << c.k << " tau=" << c.tau_ce << " tau_soft=" << c.tau_soft
            << " retrieval=" << to_string(c.retrieval)
            << " tit_mode=" << to_string(c.tit_mode) << " epochs=" << t.epochs
            << " lr=" << t.lr << " momentum=" << t.momentum << " seed=" << t.seed
            << "\n";
}

struct SynthFlags {
  SynthSpec spec;
  void add(CLI::App* cmd) {
    cmd->add_option("--C", spec.C, "classes")->check(CLI::PositiveNumber);
    cmd->add_option("--d", spec.d, "embedding dim")->check(CLI::PositiveNumber);
    cmd->add_option("--M", spec.M, "patches per view")->check(CLI::PositiveNumber);
    cmd->add_option("--A", spec.A, "augmented views per image");
    cmd->add_option("--shots", spec.shots, "support samples per class")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--queries", spec.queries, "query samples per class");
    cmd->add_option("--signal-patches", spec.signal_patches,
                    "planted signal patches per image");
    cmd->add_option("--signal-strength", spec.signal_strength,
                    "planted signal strength in (0,1]");
    cmd->add_option("--noise-sigma", spec.noise_sigma,
                    "per-coordinate noise inside signal patches");
    cmd->add_option("--overlap", spec.distractor_overlap,
                    "pairwise cosine between class text directions");
    cmd->add_option("--jitter", spec.view_jitter_sigma,
                    "per-coordinate jitter of augmented views");
    cmd->add_option("--seed", spec.seed, "generator seed");
  }
};

int run_gen_synth(const SynthSpec& spec, const std::string& out) {
  const auto bundle = gen_synthetic(spec);
  save_bundle(bundle, out);
  std::cerr << "wrote " << out << ": C=" << bundle.C << " d=" << bundle.d
            << " M=" << bundle.M << " A=" << bundle.A
            << " support=" << bundle.support.size()
            << " query=" << bundle.query.size() << "; planted "
            << spec.signal_patches << " signal patches per image\n";
  return 0;
}

struct TrainFlags {
  std::string bundle;
  std::string ckpt;
  std::string history;
  TrainConfig cfg;
  CycleFlags cycle;
};

int run_train(const CLI::App* cmd, TrainFlags& f) {
  f.cfg.cycle = make_cycle(cmd, f.cycle);
  echo_config(f.cfg.cycle, f.cfg);
  const auto bundle = load_bundle(f.bundle);
  const auto result = train_episode(bundle, f.cfg);
  if (!f.ckpt.empty()) save_params(result.params, f.ckpt);
  if (!f.history.empty()) write_history_csv(result.history, f.history);
  const auto& last = result.history.epochs.back();
  std::cerr << "trained " << f.cfg.epochs << " epochs: total=" << last.loss.total
            << " ce=" << last.loss.ce << " hard_rate=" << last.loss.hard_cycle_rate
            << " A_l_transformed=" << last.A_l_transformed << "\n";
  return 0;
}

struct EvalFlags {
  std::string bundle;
  std::string ckpt;
  bool prototype = false;
  CycleFlags cycle;
};

int run_eval(const CLI::App* cmd, EvalFlags& f) {
  const auto cfg = make_cycle(cmd, f.cycle);
  const auto bundle = load_bundle(f.bundle);
  const ModelParams params = f.ckpt.empty()
                                 ? init_params(bundle.d, bundle.d, 0)
                                 : load_params(f.ckpt);
  const auto align = alignment_scores(bundle, params);
  nlohmann::json out;
  out["accuracy"] = episode_accuracy(bundle, params, cfg);
  out["A_g"] = align.A_g;
  out["A_l"] = align.A_l;
  out["A_l_transformed"] = align.A_l_transformed;
  if (f.prototype) out["prototype_accuracy"] = prototype_accuracy(bundle, params);
  std::cout << out.dump() << "\n";
  return 0;
}

struct TraceFlags {
  std::string bundle;
  std::string ckpt;
  std::string out_dir;
  bool no_pgm = false;
  CycleFlags cycle;
};

int run_trace(const CLI::App* cmd, TraceFlags& f) {
  const auto cfg = make_cycle(cmd, f.cycle);
  const auto bundle = load_bundle(f.bundle);
  const ModelParams params = f.ckpt.empty()
                                 ? init_params(bundle.d, bundle.d, 0)
                                 : load_params(f.ckpt);
  std::filesystem::create_directories(f.out_dir);
  const auto trace = full_trace(bundle, params, cfg);
  {
    std::ofstream tf(std::filesystem::path(f.out_dir) / "trace.json",
                     std::ios::trunc);
    if (!tf) throw IoFailure("cannot write trace.json");
    tf << trace_to_json(trace).dump(2) << "\n";
  }
  write_simmaps(f.out_dir, bundle, params, !f.no_pgm);
  write_anchor_overlay(
      (std::filesystem::path(f.out_dir) / "anchors.csv").string(), bundle, params,
      cfg);
  std::cerr << "wrote trace.json, " << bundle.C * bundle.support.size()
            << " simmaps, anchors.csv to " << f.out_dir << "\n";
  return 0;
}

struct BenchFlags {
  std::string bundles_dir;
  std::string csv;
  uint32_t episodes = 100;
  bool compare = false;
  uint32_t anchor_eval_k = 1;
  uint32_t threads = 0;
  SynthFlags synth;
  TrainFlags train;
};

int run_bench(const CLI::App* cmd, BenchFlags& f) {
  f.train.cfg.cycle = make_cycle(cmd, f.train.cycle);
  echo_config(f.train.cfg.cycle, f.train.cfg);

  BenchmarkSummary summary;
  if (!f.bundles_dir.empty()) {
    std::vector<std::string> paths;
    for (const auto& e : std::filesystem::directory_iterator(f.bundles_dir))
      if (e.path().extension() == ".ccfb") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw IoFailure("no .ccfb bundles in " + f.bundles_dir);
    summary = run_benchmark(paths, f.train.cfg, f.compare, f.anchor_eval_k,
                            f.threads);
  } else {
    summary = run_benchmark(f.synth.spec, f.train.cfg, f.episodes, f.compare,
                            f.anchor_eval_k, f.threads);
  }

  std::ostringstream csv;
  write_benchmark_csv(summary, csv);
  char line[256];
  std::snprintf(line, sizeof(line), "# mean_acc_full,%.17g,ci95,%.17g\n",
                summary.mean_acc_full, summary.ci95_full);
  csv << line;
  if (summary.compared) {
    std::snprintf(line, sizeof(line), "# mean_acc_base,%.17g,ci95,%.17g\n",
                  summary.mean_acc_base, summary.ci95_base);
    csv << line;
    std::snprintf(line, sizeof(line), "# mean_delta,%.17g,ci95,%.17g\n",
                  summary.mean_delta, summary.ci95_delta);
    csv << line;
  }
  if (f.csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(f.csv, std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + f.csv);
    out << csv.str();
  }

  std::cerr << "episodes: " << summary.episodes.size() << "\n";
  std::cerr << "accuracy (full):    " << summary.mean_acc_full << " +- "
            << summary.ci95_full << " (95% CI)\n";
  if (summary.compared) {
    std::cerr << "accuracy (ce-only): " << summary.mean_acc_base << " +- "
              << summary.ci95_base << " (95% CI)\n";
    std::cerr << "paired delta:       " << summary.mean_delta << " +- "
              << summary.ci95_delta << " (95% CI)\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-consistency regularization on precomputed episode embeddings"};
  app.require_subcommand(1);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic episode bundle");
  std::string gen_config;
  gen->add_option("--config", gen_config, "key=value config file");
  SynthFlags gen_flags;
  gen_flags.add(gen);
  std::string gen_out;
  gen->add_option("--out", gen_out, "output bundle path")->required();

  // train
  auto* train = app.add_subcommand("train", "train one episode");
  std::string train_config;
  train->add_option("--config", train_config, "key=value config file");
  TrainFlags train_flags;
  train->add_option("--bundle", train_flags.bundle, "CCFB episode bundle")->required();
  train->add_option("--ckpt", train_flags.ckpt, "write CCPM checkpoint here");
  train->add_option("--history", train_flags.history, "write history CSV here");
  train->add_option("--epochs", train_flags.cfg.epochs, "training epochs");
  train->add_option("--lr", train_flags.cfg.lr, "learning rate");
  train->add_option("--momentum", train_flags.cfg.momentum, "momentum in [0,1)");
  train->add_option("--seed", train_flags.cfg.seed, "parameter init seed");
  train->add_option("--hidden", train_flags.cfg.hidden, "MLP width (0 = d)");
  train->add_option("--expected-A", train_flags.cfg.expected_A,
                    "require this augmentation count (-1 disables)");
  train->add_option("--log-every", train_flags.cfg.log_every,
                    "progress cadence (0 = silent)");
  add_cycle_flags(train, train_flags.cycle);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a bundle");
  std::string eval_config;
  eval->add_option("--config", eval_config, "key=value config file");
  EvalFlags eval_flags;
  eval->add_option("--bundle", eval_flags.bundle, "CCFB episode bundle")->required();
  eval->add_option("--ckpt", eval_flags.ckpt, "CCPM checkpoint (default: fresh init)");
  eval->add_flag("--prototype", eval_flags.prototype, "also report prototype accuracy");
  add_cycle_flags(eval, eval_flags.cycle);

  // trace
  auto* trace = app.add_subcommand("trace", "export cycle traces and similarity maps");
  std::string trace_config;
  trace->add_option("--config", trace_config, "key=value config file");
  TraceFlags trace_flags;
  trace->add_option("--bundle", trace_flags.bundle, "CCFB episode bundle")->required();
  trace->add_option("--ckpt", trace_flags.ckpt, "CCPM checkpoint (default: fresh init)");
  trace->add_option("--out", trace_flags.out_dir, "output directory")->required();
  trace->add_flag("--no-pgm", trace_flags.no_pgm, "skip PGM rasters");
  add_cycle_flags(trace, trace_flags.cycle);

  // bench
  auto* bench = app.add_subcommand("bench", "seeded multi-episode benchmark");
  std::string bench_config;
  bench->add_option("--spec,--config", bench_config,
                    "synth family / run config file (key=value)");
  BenchFlags bench_flags;
  bench_flags.synth.add(bench);
  bench->add_option("--bundles", bench_flags.bundles_dir,
                    "directory of .ccfb bundles (instead of synthesis)");
  bench->add_option("--episodes", bench_flags.episodes, "episode count")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--compare", bench_flags.compare,
                  "also train a CE-only baseline per episode");
  bench->add_option("--csv", bench_flags.csv, "write CSV here instead of stdout");
  bench->add_option("--anchor-eval-k", bench_flags.anchor_eval_k,
                    "anchor budget for planted-precision diagnostics");
  bench->add_option("--threads", bench_flags.threads, "worker threads (0 = auto)");
  bench->add_option("--epochs", bench_flags.train.cfg.epochs, "training epochs");
  bench->add_option("--lr", bench_flags.train.cfg.lr, "learning rate");
  bench->add_option("--momentum", bench_flags.train.cfg.momentum, "momentum");
  bench->add_option("--hidden", bench_flags.train.cfg.hidden, "MLP width (0 = d)");
  add_cycle_flags(bench, bench_flags.train.cycle);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      if (!gen_config.empty()) apply_config_file(gen, gen_config);
      return run_gen_synth(gen_flags.spec, gen_out);
    }
    if (train->parsed()) {
      if (!train_config.empty()) apply_config_file(train, train_config);
      return run_train(train, train_flags);
    }
    if (eval->parsed()) {
      if (!eval_config.empty()) apply_config_file(eval, eval_config);
      return run_eval(eval, eval_flags);
    }
    if (trace->parsed()) {
      if (!trace_config.empty()) apply_config_file(trace, trace_config);
      return run_trace(trace, trace_flags);
    }
    if (bench->parsed()) {
      if (!bench_config.empty()) apply_config_file(bench, bench_config);
      return run_bench(bench, bench_flags);
    }
  } catch (const ConfigFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceDetected& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const SpecInfeasible& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    // remaining library errors are malformed/invalid input data
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  }
  return 0;
}
