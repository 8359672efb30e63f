#ifndef CCCDFSL_SYNTH_HPP
#define CCCDFSL_SYNTH_HPP

#include <cstdint>
#include <vector>

#include "cccdfsl/episode.hpp"

// Synthetic episode bundles with planted class-signal patches, so anchor
// recall and cycle-training effects are measurable at desk scale.

namespace cccdfsl {

struct SynthSpec {
  uint32_t C = 5;
  uint32_t d = 64;
  uint32_t M = 16;
  uint32_t A = 1;
  uint32_t shots = 5;    // support samples per class
  uint32_t queries = 15; // query samples per class

  uint32_t signal_patches = 2;      // s < M planted patches per image
  double signal_strength = 1.0;     // in (0, 1]
  double noise_sigma = 0.0;         // per-coordinate sigma mixed into signal patches
  double distractor_overlap = 0.0;  // pairwise cosine between class text directions
  double view_jitter_sigma = 0.1;   // per-coordinate sigma of augmented-view jitter
  uint64_t seed = 0;
};

// Deterministic per (spec, seed). Text rows have exact pairwise cosine
// `distractor_overlap`; each image carries `signal_patches` planted rows
// normalize(strength * t_class + noise) at seeded positions (identical
// across views), the rest isotropic-noise rows; globals are normalized
// patch means. Planted positions land in metadata under "planted".
EpisodeBundle gen_synthetic(const SynthSpec& spec);

// Planted patch positions recorded by gen_synthetic, indexed
// [sample][0..s). Empty when the bundle has no "planted" metadata.
std::vector<std::vector<uint32_t>> planted_support_positions(const EpisodeBundle& b);
std::vector<std::vector<uint32_t>> planted_query_positions(const EpisodeBundle& b);

} // namespace cccdfsl

#endif
