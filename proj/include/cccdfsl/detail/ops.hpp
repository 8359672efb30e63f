#ifndef CCCDFSL_DETAIL_OPS_HPP
#define CCCDFSL_DETAIL_OPS_HPP

#include "cccdfsl/cycle.hpp"

// Variants of the public operations that also expose the intermediates the
// backward pass needs. The public functions delegate here, so both paths
// compute bit-identical values.

namespace cccdfsl::detail {

MlpResult mlp_forward_full(const Matrix& raw, const ModelParams& p,
                           Matrix& hidden, Vec& z_norm);

Vec adapt_global_full(std::span<const double> g, const ModelParams& p,
                      Vec& pre_norm, double& norm_out);

double ce_loss_full(std::span<const double> adapted, const Matrix& text,
                    uint32_t label, double tau_ce, Vec& probs);

struct TitFull {
  Matrix E;          // C x C reverse similarities
  TitLoss result;    // per configured mode
  double hard_loss = 0.0;
  Matrix soft_w;     // soft mode only
  Matrix rec;
  Vec rec_norm;
  std::vector<uint8_t> rec_pass;
};

TitFull tit_loss_full(const Matrix& text, const Matrix& lstar, const CycleConfig& cfg);

struct ItiPick {
  uint32_t mid = 0;       // intermediary class
  std::size_t ret = 0;    // retrieved flat index
};

ItiPick iti_retrieve_full(std::size_t anchor, const Matrix& text, const Matrix& corpus,
                          const CorpusLayout& layout, RetrievalMode mode);

} // namespace cccdfsl::detail

#endif
