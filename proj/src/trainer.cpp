#include "cccdfsl/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <thread>

#include "cccdfsl/detail/episode_eval.hpp"
#include "cccdfsl/metrics.hpp"
#include "cccdfsl/rng.hpp"

namespace cccdfsl {

namespace {

bool finite_breakdown(const LossBreakdown& l) {
  return std::isfinite(l.ce) && std::isfinite(l.cyc_txt) &&
         std::isfinite(l.cyc_img) && std::isfinite(l.total);
}

void axpy_update(Matrix& vel, Matrix& w, const Matrix& grad, double lr,
                 double momentum) {
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    vel.data[i] = momentum * vel.data[i] - lr * grad.data[i];
    w.data[i] += vel.data[i];
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct MeanCi {
  double mean = 0.0;
  double ci95 = 0.0;
};

MeanCi mean_ci(const std::vector<double>& xs) {
  MeanCi r;
  const auto n = static_cast<double>(xs.size());
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= n;
  if (xs.size() < 2) return r;
  double var = 0.0;
  for (double x : xs) var += (x - r.mean) * (x - r.mean);
  var /= (n - 1.0);
  r.ci95 = 1.96 * std::sqrt(var / n);
  return r;
}

} // namespace

TrainResult train_episode(const EpisodeBundle& b, const TrainConfig& cfg) {
  if (cfg.expected_A >= 0 && b.A != static_cast<uint32_t>(cfg.expected_A))
    throw DimensionMismatch("train_episode: bundle A=" + std::to_string(b.A) +
                            ", expected " + std::to_string(cfg.expected_A));
  const uint32_t h = cfg.hidden ? cfg.hidden : b.d;

  TrainResult r;
  r.params = init_params(b.d, h, cfg.seed);
  GradBundle vel{Matrix(b.d, h), Matrix(h, b.d), Matrix(b.d, b.d)};

  for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpisodeEval ev;
    try {
      ev = detail::evaluate_episode(b, r.params, cfg.cycle);
    } catch (const NonFiniteValue&) {
      throw DivergenceDetected("train_episode: parameters overflowed at epoch " +
                                   std::to_string(epoch),
                               std::move(r.history));
    }
    if (!finite_breakdown(ev.loss))
      throw DivergenceDetected("train_episode: non-finite loss at epoch " +
                                   std::to_string(epoch),
                               std::move(r.history));

    EpochStats st;
    st.loss = ev.loss;
    double ag = 0.0, alt = 0.0;
    for (std::size_t i = 0; i < b.support.size(); ++i) {
      const auto t = b.text.row(b.support[i].label);
      ag += dot(ev.adapted.row(i), t);
      for (uint32_t m = 0; m < b.M; ++m) {
        const auto flat = ev.corpus.layout.flat({static_cast<uint32_t>(i), 0, m});
        alt += dot(ev.mlp.rows.row(flat), t);
      }
    }
    const double S = static_cast<double>(b.support.size());
    st.A_g = ag / S;
    st.A_l_transformed = alt / (S * static_cast<double>(b.M));
    r.history.epochs.push_back(st);

    if (cfg.log_every && epoch % cfg.log_every == 0)
      std::cerr << "epoch " << epoch << " total=" << ev.loss.total
                << " ce=" << ev.loss.ce << " hard_rate=" << ev.loss.hard_cycle_rate
                << "\n";

    const auto grads = detail::backward(ev, b, r.params, cfg.cycle);
    axpy_update(vel.dW1, r.params.W1, grads.dW1, cfg.lr, cfg.momentum);
    axpy_update(vel.dW2, r.params.W2, grads.dW2, cfg.lr, cfg.momentum);
    axpy_update(vel.dWa, r.params.Wa, grads.dWa, cfg.lr, cfg.momentum);
  }
  return r;
}

void write_history_csv(const TrainHistory& h, std::ostream& out) {
  out << "epoch,ce,cyc_txt,cyc_img,total,hard_rate,A_g,A_l_transformed\n";
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    const auto& st = h.epochs[e];
    out << e << ',' << fmt(st.loss.ce) << ',' << fmt(st.loss.cyc_txt) << ','
        << fmt(st.loss.cyc_img) << ',' << fmt(st.loss.total) << ','
        << fmt(st.loss.hard_cycle_rate) << ',' << fmt(st.A_g) << ','
        << fmt(st.A_l_transformed) << '\n';
  }
}

void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoFailure("cannot write history: " + path);
  write_history_csv(h, f);
}

namespace {

EpisodeOutcome run_one(const EpisodeBundle& bundle, const TrainConfig& cfg,
                       uint64_t seed, bool compare, uint32_t anchor_eval_k) {
  EpisodeOutcome out;
  out.seed = seed;

  TrainConfig tc = cfg;
  tc.seed = seed;
  tc.log_every = 0;

  const auto full = train_episode(bundle, tc);
  out.acc_full = episode_accuracy(bundle, full.params, cfg.cycle);
  out.alT_full = alignment_scores(bundle, full.params).A_l_transformed;
  out.anchor_precision = anchor_planted_precision(bundle, full.params, anchor_eval_k);
  out.final_full = total_loss(bundle, full.params, cfg.cycle);

  if (compare) {
    TrainConfig base = tc;
    base.cycle.lambda1 = 0.0;
    base.cycle.lambda2 = 0.0;
    const auto ce_only = train_episode(bundle, base);
    out.acc_base = episode_accuracy(bundle, ce_only.params, cfg.cycle);
    out.alT_base = alignment_scores(bundle, ce_only.params).A_l_transformed;
  }
  return out;
}

BenchmarkSummary summarize(std::vector<EpisodeOutcome> episodes, bool compared) {
  BenchmarkSummary s;
  s.episodes = std::move(episodes);
  s.compared = compared;
  std::vector<double> accf, accb, delta;
  for (const auto& e : s.episodes) {
    accf.push_back(e.acc_full);
    if (compared) {
      accb.push_back(e.acc_base);
      delta.push_back(e.acc_full - e.acc_base);
    }
  }
  const auto f = mean_ci(accf);
  s.mean_acc_full = f.mean;
  s.ci95_full = f.ci95;
  if (compared) {
    const auto b = mean_ci(accb);
    s.mean_acc_base = b.mean;
    s.ci95_base = b.ci95;
    const auto d = mean_ci(delta);
    s.mean_delta = d.mean;
    s.ci95_delta = d.ci95;
  }
  return s;
}

// Runs `make_outcome(i)` for i in [0, n) on a small pool; results land in
// index order so the summary is schedule-independent.
std::vector<EpisodeOutcome> parallel_episodes(
    uint32_t n, uint32_t threads,
    const std::function<EpisodeOutcome(uint32_t)>& make_outcome) {
  std::vector<EpisodeOutcome> out(n);
  const uint32_t workers =
      std::max(1u, threads ? threads : std::thread::hardware_concurrency());
  std::atomic<uint32_t> next{0};
  auto drain = [&]() {
    for (uint32_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
      out[i] = make_outcome(i);
  };
  std::vector<std::future<void>> futs;
  for (uint32_t w = 1; w < workers; ++w)
    futs.push_back(std::async(std::launch::async, drain));
  drain();
  for (auto& f : futs) f.get();  // rethrows worker exceptions
  return out;
}

} // namespace

BenchmarkSummary run_benchmark(const SynthSpec& family, const TrainConfig& cfg,
                               uint32_t episodes, bool compare,
                               uint32_t anchor_eval_k, uint32_t threads) {
  if (episodes == 0) throw Error("run_benchmark: episodes must be >= 1");
  auto outcomes = parallel_episodes(episodes, threads, [&](uint32_t i) {
    SynthSpec sp = family;
    sp.seed = derive_seed(family.seed, i);
    const auto bundle = gen_synthetic(sp);
    return run_one(bundle, cfg, sp.seed, compare, anchor_eval_k);
  });
  return summarize(std::move(outcomes), compare);
}

BenchmarkSummary run_benchmark(const std::vector<std::string>& bundle_paths,
                               const TrainConfig& cfg, bool compare,
                               uint32_t anchor_eval_k, uint32_t threads) {
  if (bundle_paths.empty()) throw Error("run_benchmark: no bundles");
  auto outcomes = parallel_episodes(
      static_cast<uint32_t>(bundle_paths.size()), threads, [&](uint32_t i) {
        const auto bundle = load_bundle(bundle_paths[i]);
        return run_one(bundle, cfg, derive_seed(cfg.seed, i), compare,
                       anchor_eval_k);
      });
  return summarize(std::move(outcomes), compare);
}

void write_benchmark_csv(const BenchmarkSummary& s, std::ostream& out) {
  out << "episode,seed,acc_full,acc_base,delta,alT_full,alT_base,anchor_precision\n";
  for (std::size_t i = 0; i < s.episodes.size(); ++i) {
    const auto& e = s.episodes[i];
    out << i << ',' << e.seed << ',' << fmt(e.acc_full) << ','
        << (s.compared ? fmt(e.acc_base) : "") << ','
        << (s.compared ? fmt(e.acc_full - e.acc_base) : "") << ','
        << fmt(e.alT_full) << ',' << (s.compared ? fmt(e.alT_base) : "") << ','
        << fmt(e.anchor_precision) << '\n';
  }
}

} // namespace cccdfsl
