#ifndef CCCDFSL_METRICS_HPP
#define CCCDFSL_METRICS_HPP

#include <string>
#include <vector>

#include "cccdfsl/cycle.hpp"
#include "json.hpp"

// Alignment scores, classification metrics, and interpretability traces.

namespace cccdfsl {

struct AlignmentReport {
  double A_g = 0.0;              // adapted globals vs true-class text
  double A_l = 0.0;              // raw view-0 patches vs true-class text
  double A_l_transformed = 0.0;  // transformed view-0 patches vs true-class text
  std::vector<double> per_class_A_g;
  std::vector<double> per_class_A_l;
};

AlignmentReport alignment_scores(const EpisodeBundle& b, const ModelParams& p);

// Nearest text row to the adapted query global; lowest index on ties.
uint32_t classify(std::span<const double> query_global, const ModelParams& p,
                  const Matrix& text, double tau_ce);

// Fraction of queries classified correctly. Throws EmptyQuerySet.
double episode_accuracy(const EpisodeBundle& b, const ModelParams& p,
                        const CycleConfig& cfg);

// Nearest-prototype accuracy over normalized per-class means of the adapted
// support globals. Throws MissingClassSupport / EmptyQuerySet.
double prototype_accuracy(const EpisodeBundle& b, const ModelParams& p);

struct TitTraceEntry {
  uint32_t cls = 0;
  PatchLoc patch;
  double sim = 0.0;          // text . selected patch
  uint32_t recon_class = 0;  // argmax text of the selected patch
  double recon_sim = 0.0;    // text_cls . text_recon (the loss term)
};

struct ItiTraceEntry {
  PatchLoc anchor;
  uint32_t mid_class = 0;
  PatchLoc retrieved;
  double sim = 0.0;  // anchor . retrieved
};

struct CycleTrace {
  std::vector<TitTraceEntry> tit;
  std::vector<ItiTraceEntry> iti;
};

CycleTrace tit_trace(const EpisodeBundle& b, const ModelParams& p,
                     const CycleConfig& cfg);
CycleTrace iti_trace(const EpisodeBundle& b, const ModelParams& p,
                     const CycleConfig& cfg);
CycleTrace full_trace(const EpisodeBundle& b, const ModelParams& p,
                      const CycleConfig& cfg);

nlohmann::json trace_to_json(const CycleTrace& t);

// Per (class, support sample): text/patch similarities of the M original-view
// patches after the transform. CSV is one comma-separated line; PGM is a P5
// raster mapping similarity s to round(255*(s+1)/2).
void write_simmaps(const std::string& dir, const EpisodeBundle& b,
                   const ModelParams& p, bool pgm = true);

// One row per anchor: sample,view,patch,flat
void write_anchor_overlay(const std::string& path, const EpisodeBundle& b,
                          const ModelParams& p, const CycleConfig& cfg);

// Fraction of selected anchors sitting on planted signal positions, measured
// at anchor budget k_eval. Returns -1 when the bundle has no planted metadata.
double anchor_planted_precision(const EpisodeBundle& b, const ModelParams& p,
                                uint32_t k_eval);

} // namespace cccdfsl

#endif
