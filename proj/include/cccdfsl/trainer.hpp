#ifndef CCCDFSL_TRAINER_HPP
#define CCCDFSL_TRAINER_HPP

#include <optional>
#include <ostream>
#include <string>

#include "cccdfsl/cycle.hpp"
#include "cccdfsl/synth.hpp"

// Per-episode full-batch gradient descent on the model parameters, plus a
// seeded multi-episode benchmark harness.

namespace cccdfsl {

struct TrainConfig {
  uint32_t epochs = 100;
  double lr = 0.05;
  double momentum = 0.9;
  CycleConfig cycle;
  int expected_A = -1;  // when >= 0, reject bundles whose A differs
  uint64_t seed = 0;    // parameter init
  uint32_t hidden = 0;  // MLP width; 0 means h = d
  uint32_t log_every = 0;  // stderr progress cadence; 0 silences it
};

struct EpochStats {
  LossBreakdown loss;
  double A_g = 0.0;
  double A_l_transformed = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;  // stats at the start of each epoch
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

// Thrown when any loss component turns non-finite; carries what completed.
struct DivergenceDetected : Error {
  TrainHistory history;
  explicit DivergenceDetected(std::string msg, TrainHistory h)
      : Error(std::move(msg)), history(std::move(h)) {}
};

TrainResult train_episode(const EpisodeBundle& b, const TrainConfig& cfg);

// columns: epoch,ce,cyc_txt,cyc_img,total,hard_rate,A_g,A_l_transformed
void write_history_csv(const TrainHistory& h, std::ostream& out);
void write_history_csv(const TrainHistory& h, const std::string& path);

struct EpisodeOutcome {
  uint64_t seed = 0;
  double acc_full = 0.0;
  double alT_full = 0.0;             // transformed local alignment
  double anchor_precision = -1.0;    // planted precision at anchor_eval_k
  LossBreakdown final_full;
  // baseline arm (lambda1 = lambda2 = 0); populated when compared
  double acc_base = 0.0;
  double alT_base = 0.0;
};

struct BenchmarkSummary {
  std::vector<EpisodeOutcome> episodes;
  bool compared = false;
  double mean_acc_full = 0.0, ci95_full = 0.0;
  double mean_acc_base = 0.0, ci95_base = 0.0;
  double mean_delta = 0.0, ci95_delta = 0.0;  // paired, full - base
};

// Per-episode seeds derive from family.seed + the episode index; each episode
// generates its bundle, trains, and evaluates independently (thread-safe).
BenchmarkSummary run_benchmark(const SynthSpec& family, const TrainConfig& cfg,
                               uint32_t episodes, bool compare,
                               uint32_t anchor_eval_k = 1, uint32_t threads = 0);

// Same harness over pre-generated bundle files.
BenchmarkSummary run_benchmark(const std::vector<std::string>& bundle_paths,
                               const TrainConfig& cfg, bool compare,
                               uint32_t anchor_eval_k = 1, uint32_t threads = 0);

// columns: episode,seed,acc_full,acc_base,delta,alT_full,alT_base,anchor_precision
void write_benchmark_csv(const BenchmarkSummary& s, std::ostream& out);

} // namespace cccdfsl

#endif
