#ifndef CCCDFSL_CYCLE_HPP
#define CCCDFSL_CYCLE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "cccdfsl/episode.hpp"
#include "cccdfsl/transform.hpp"

// The method core: text->image->text cycle, anchor augment/shrink selection,
// image->text->image cycle with three retrieval scopes, cross-entropy on the
// adapted globals, and the combined objective.

namespace cccdfsl {

enum class RetrievalMode { cross_view, intra_image, all_images };
enum class TitMode { soft, hard_metric_only };

const char* to_string(RetrievalMode m);
const char* to_string(TitMode m);
RetrievalMode retrieval_mode_from_string(const std::string& s);
TitMode tit_mode_from_string(const std::string& s);

struct CycleConfig {
  double lambda1 = 3.0;  // weight of the text-cycle loss
  double lambda2 = 2.0;  // weight of the image-cycle loss
  uint32_t k = 10;       // per image-view, per class anchor budget
  double tau_ce = 0.01;
  double tau_soft = 0.07;
  RetrievalMode retrieval = RetrievalMode::cross_view;
  TitMode tit_mode = TitMode::soft;
};

// Deduplicated flat corpus indices surviving the shrinking phase, with the
// (image-view block, class) pairs whose top-k lists contained each index.
struct AnchorSet {
  std::vector<std::size_t> indices;  // strictly increasing
  std::vector<std::vector<std::pair<uint32_t, uint32_t>>> provenance;
  std::size_t V() const { return indices.size(); }
};

struct LossBreakdown {
  double ce = 0.0;
  double cyc_txt = 0.0;  // value of the configured tit mode
  double cyc_img = 0.0;
  double total = 0.0;
  double hard_cycle_rate = 0.0;
  std::size_t V = 0;
};

// D[j][i] = text_j . corpus_i for row-normalized inputs (C x H).
Matrix tit_similarity(const Matrix& text, const Matrix& corpus);

// Per class, the corpus-wide argmax column of D; lowest index on ties.
std::vector<std::size_t> tit_select(const Matrix& D);

struct TitLoss {
  double loss = 0.0;
  double hard_rate = 0.0;
};

// lstar rows are the corpus rows chosen by tit_select. Soft mode scores the
// softmax-weighted text reconstruction; hard mode scores the argmax text.
TitLoss tit_loss(const Matrix& text, const Matrix& lstar, const CycleConfig& cfg);

// Top-k columns per (image-view block, class) within that block's patches,
// merged and deduplicated into global flat indices.
AnchorSet anchor_select(const Matrix& D, const CorpusLayout& layout, uint32_t k);

// One image->text->image hop for anchor row n: nearest text, then nearest
// patch to that text within the mode's scope. Returns the retrieved flat index.
std::size_t iti_retrieve(std::size_t anchor, const Matrix& text, const Matrix& corpus,
                         const CorpusLayout& layout, RetrievalMode mode);

// 1 - mean anchor/retrieval cosine. Throws EmptyAnchorSet.
double iti_loss(const AnchorSet& anchors, const Matrix& corpus, const Matrix& text,
                const CorpusLayout& layout, RetrievalMode mode);

// Single-sample cross-entropy of temperature-scaled cosine logits.
double ce_loss(std::span<const double> adapted, const Matrix& text, uint32_t label,
               double tau_ce);

// Full pipeline over the support set; ce is averaged over support samples.
LossBreakdown total_loss(const EpisodeBundle& b, const ModelParams& p,
                         const CycleConfig& cfg);

// Reverse-mode gradient of the differentiable total objective w.r.t. W1, W2,
// Wa. Selection indices (argmax, top-k, anchor membership) are held constant;
// gradients flow through the similarity values of the selected pairs.
std::pair<LossBreakdown, GradBundle> grad_total(const EpisodeBundle& b,
                                                const ModelParams& p,
                                                const CycleConfig& cfg);

} // namespace cccdfsl

#endif
