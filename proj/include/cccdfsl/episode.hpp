#ifndef CCCDFSL_EPISODE_HPP
#define CCCDFSL_EPISODE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cccdfsl/linalg.hpp"

// K-way N-shot episode bundles of precomputed embeddings, their binary file
// format (CCFB), and flattening into the patch corpus.

namespace cccdfsl {

// One support image: global feature plus (A+1) views of M patch features
// each. views[0] is always the original image.
struct SampleEmbedding {
  uint32_t label = 0;
  Vec global;                 // d
  std::vector<Matrix> views;  // A+1 matrices, each M x d
};

// Queries carry only the original view.
struct QuerySample {
  uint32_t label = 0;
  Vec global;      // d
  Matrix patches;  // M x d
};

struct EpisodeBundle {
  uint32_t C = 0;  // classes (= K of the K-way task)
  uint32_t d = 0;  // embedding dim
  uint32_t M = 0;  // patches per view
  uint32_t A = 0;  // augmented views per image
  Matrix text;     // C x d, row-normalized
  std::vector<SampleEmbedding> support;
  std::vector<QuerySample> query;
  std::string metadata;  // UTF-8 JSON (class names, provenance, ...)

  std::size_t corpus_size() const {
    return support.size() * (std::size_t{A} + 1) * M;
  }
  std::vector<std::string> class_names() const;  // empty if not in metadata
};

struct PatchLoc {
  uint32_t sample = 0;
  uint32_t view = 0;
  uint32_t patch = 0;
  bool operator==(const PatchLoc&) const = default;
};

// Canonical corpus ordering: sample-major, then view (original first), then
// patch. flat() / loc() are inverse bijections over [0, size()).
struct CorpusLayout {
  uint32_t n_samples = 0;
  uint32_t n_views = 0;    // A + 1
  uint32_t n_patches = 0;  // M

  std::size_t size() const {
    return std::size_t{n_samples} * n_views * n_patches;
  }
  std::size_t block_count() const { return std::size_t{n_samples} * n_views; }

  std::size_t flat(const PatchLoc& l) const {
    return (std::size_t{l.sample} * n_views + l.view) * n_patches + l.patch;
  }
  PatchLoc loc(std::size_t flat) const {
    PatchLoc l;
    l.patch = static_cast<uint32_t>(flat % n_patches);
    const std::size_t b = flat / n_patches;
    l.view = static_cast<uint32_t>(b % n_views);
    l.sample = static_cast<uint32_t>(b / n_views);
    return l;
  }
  std::size_t block_of(std::size_t flat) const { return flat / n_patches; }
  uint32_t sample_of_block(std::size_t block) const {
    return static_cast<uint32_t>(block / n_views);
  }
};

// The flattened H x d support-patch matrix.
struct PatchCorpus {
  Matrix raw;  // H x d
  CorpusLayout layout;
};

PatchCorpus flatten_support(const EpisodeBundle& b);

// Unit-normalizes every feature row in place; the ingestion point for raw
// embeddings. Throws NonFiniteValue / NearZeroNorm.
void normalize_bundle(EpisodeBundle& b);

// Shape/label/finiteness validation (does not touch values).
void validate_bundle(const EpisodeBundle& b);

// CCFB binary format, little-endian, 32-bit float payloads. Rows already
// within float-rounding distance of unit norm pass through load bit-exactly
// so save/load/save round-trips are byte-identical; rows further out are
// renormalized on load.
std::vector<uint8_t> encode_bundle(const EpisodeBundle& b);
EpisodeBundle decode_bundle(const std::vector<uint8_t>& bytes);
void save_bundle(const EpisodeBundle& b, const std::string& path);
EpisodeBundle load_bundle(const std::string& path);

} // namespace cccdfsl

#endif
