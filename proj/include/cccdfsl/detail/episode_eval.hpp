#ifndef CCCDFSL_DETAIL_EPISODE_EVAL_HPP
#define CCCDFSL_DETAIL_EPISODE_EVAL_HPP

#include "cccdfsl/cycle.hpp"

// Single forward pass over one episode with every intermediate kept, so the
// loss, the backward pass, the traces, and the per-epoch diagnostics all see
// exactly the same numbers.

namespace cccdfsl::detail {

struct EpisodeEval {
  PatchCorpus corpus;           // raw rows (constant w.r.t. params)
  Matrix hidden;                // H x h, post-ReLU
  Vec z_norm;                   // H, pre-normalization output norms
  MlpResult mlp;                // transformed corpus L
  Matrix D;                     // C x H text/patch similarities
  std::vector<std::size_t> tit_sel;  // C
  Matrix E;                     // C x C reverse similarities
  TitLoss tit;                  // loss per configured mode + hard rate
  double tit_hard_loss = 0.0;   // argmax-text variant, always computed

  // soft-mode reconstruction intermediates (empty in hard mode)
  Matrix soft_w;                // C x C softmax weights
  Matrix rec;                   // C x d normalized reconstructions
  Vec rec_norm;                 // C
  std::vector<uint8_t> rec_pass;  // reconstructions that collapsed pre-normalization

  AnchorSet anchors;
  std::vector<uint32_t> anchor_mid;     // intermediary class per anchor
  std::vector<std::size_t> anchor_ret;  // retrieved flat index per anchor
  Vec anchor_sim;                       // anchor . retrieved
  double iti = 0.0;

  Matrix adapted;      // |S| x d adapted globals
  Vec adapt_norm;      // |S|, pre-normalization norms
  Matrix ce_probs;     // |S| x C softmax probabilities
  double ce = 0.0;

  LossBreakdown loss;
};

EpisodeEval evaluate_episode(const EpisodeBundle& b, const ModelParams& p,
                             const CycleConfig& cfg);

GradBundle backward(const EpisodeEval& ev, const EpisodeBundle& b,
                    const ModelParams& p, const CycleConfig& cfg);

} // namespace cccdfsl::detail

#endif
