#include "cccdfsl/cycle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cccdfsl/detail/episode_eval.hpp"
#include "cccdfsl/detail/ops.hpp"

namespace cccdfsl {

const char* to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::cross_view: return "cross_view";
    case RetrievalMode::intra_image: return "intra_image";
    case RetrievalMode::all_images: return "all_images";
  }
  return "?";
}

const char* to_string(TitMode m) {
  return m == TitMode::soft ? "soft" : "hard_metric_only";
}

RetrievalMode retrieval_mode_from_string(const std::string& s) {
  if (s == "cross_view") return RetrievalMode::cross_view;
  if (s == "intra_image") return RetrievalMode::intra_image;
  if (s == "all_images") return RetrievalMode::all_images;
  throw Error("unknown retrieval mode: " + s);
}

TitMode tit_mode_from_string(const std::string& s) {
  if (s == "soft") return TitMode::soft;
  if (s == "hard_metric_only") return TitMode::hard_metric_only;
  throw Error("unknown tit mode: " + s);
}

Matrix tit_similarity(const Matrix& text, const Matrix& corpus) {
  return cosine_sim_matrix(text, corpus);
}

std::vector<std::size_t> tit_select(const Matrix& D) { return row_argmax(D); }

detail::TitFull detail::tit_loss_full(const Matrix& text, const Matrix& lstar,
                                      const CycleConfig& cfg) {
  if (lstar.rows != text.rows || lstar.cols != text.cols)
    throw DimensionMismatch("tit_loss: lstar shape");
  const std::size_t C = text.rows;
  TitFull out;
  out.E = cosine_sim_matrix(lstar, text);

  std::size_t hits = 0;
  double hard_sum = 0.0;
  for (std::size_t j = 0; j < C; ++j) {
    const std::size_t back = argmax(out.E.row(j));
    if (back == j) ++hits;
    hard_sum += dot(text.row(j), text.row(back));
  }
  // max() absorbs the one-ulp negative when every term is a unit self-similarity
  out.hard_loss = std::max(0.0, 1.0 - hard_sum / static_cast<double>(C));
  out.result.hard_rate = static_cast<double>(hits) / static_cast<double>(C);

  if (cfg.tit_mode == TitMode::hard_metric_only) {
    out.result.loss = out.hard_loss;
    return out;
  }

  // softmax-weighted reconstruction; collapsed sums skip normalization so the
  // loss stays defined for degenerate text banks
  out.soft_w = Matrix(C, C);
  out.rec = Matrix(C, text.cols);
  out.rec_norm.assign(C, 0.0);
  out.rec_pass.assign(C, 0);
  double soft_sum = 0.0;
  for (std::size_t j = 0; j < C; ++j) {
    const Vec w = softmax(out.E.row(j), cfg.tau_soft);
    std::copy(w.begin(), w.end(), out.soft_w.row(j).begin());
    auto rec = out.rec.row(j);
    for (std::size_t k = 0; k < C; ++k) {
      const auto t = text.row(k);
      for (std::size_t i = 0; i < rec.size(); ++i) rec[i] += w[k] * t[i];
    }
    const double n = norm2(rec);
    out.rec_norm[j] = n;
    if (n < kNormEps) {
      out.rec_pass[j] = 1;
    } else {
      for (double& x : rec) x /= n;
    }
    soft_sum += dot(text.row(j), rec);
  }
  out.result.loss = std::max(0.0, 1.0 - soft_sum / static_cast<double>(C));
  return out;
}

TitLoss tit_loss(const Matrix& text, const Matrix& lstar, const CycleConfig& cfg) {
  return detail::tit_loss_full(text, lstar, cfg).result;
}

AnchorSet anchor_select(const Matrix& D, const CorpusLayout& layout, uint32_t k) {
  if (k == 0) throw DimensionMismatch("anchor_select: k must be >= 1");
  if (D.cols != layout.size())
    throw DimensionMismatch("anchor_select: D columns vs corpus size");
  const std::size_t M = layout.n_patches;
  std::map<std::size_t, std::vector<std::pair<uint32_t, uint32_t>>> hits;
  for (std::size_t blk = 0; blk < layout.block_count(); ++blk) {
    const std::size_t base = blk * M;
    for (std::size_t j = 0; j < D.rows; ++j) {
      const auto block = D.row(j).subspan(base, M);
      for (std::size_t local : row_topk(block, k))
        hits[base + local].emplace_back(static_cast<uint32_t>(blk),
                                        static_cast<uint32_t>(j));
    }
  }
  AnchorSet out;
  out.indices.reserve(hits.size());
  out.provenance.reserve(hits.size());
  for (auto& [idx, prov] : hits) {
    out.indices.push_back(idx);
    out.provenance.push_back(std::move(prov));
  }
  return out;
}

detail::ItiPick detail::iti_retrieve_full(std::size_t anchor, const Matrix& text,
                                          const Matrix& corpus,
                                          const CorpusLayout& layout,
                                          RetrievalMode mode) {
  if (anchor >= corpus.rows) throw DimensionMismatch("iti_retrieve: anchor index");
  const auto x = corpus.row(anchor);

  ItiPick pick;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < text.rows; ++j) {
    const double s = dot(x, text.row(j));
    if (s > best) {
      best = s;
      pick.mid = static_cast<uint32_t>(j);
    }
  }
  const auto t = text.row(pick.mid);

  std::size_t lo = 0, hi = corpus.rows;
  const std::size_t per_sample = std::size_t{layout.n_views} * layout.n_patches;
  switch (mode) {
    case RetrievalMode::cross_view:
      lo = layout.loc(anchor).sample * per_sample;
      hi = lo + per_sample;
      break;
    case RetrievalMode::intra_image:
      lo = layout.loc(anchor).sample * per_sample;
      hi = lo + layout.n_patches;  // view 0 only
      break;
    case RetrievalMode::all_images:
      break;
  }
  pick.ret = lo;
  best = dot(t, corpus.row(lo));
  for (std::size_t m = lo + 1; m < hi; ++m) {
    const double s = dot(t, corpus.row(m));
    if (s > best) {
      best = s;
      pick.ret = m;
    }
  }
  return pick;
}

std::size_t iti_retrieve(std::size_t anchor, const Matrix& text, const Matrix& corpus,
                         const CorpusLayout& layout, RetrievalMode mode) {
  return detail::iti_retrieve_full(anchor, text, corpus, layout, mode).ret;
}

double iti_loss(const AnchorSet& anchors, const Matrix& corpus, const Matrix& text,
                const CorpusLayout& layout, RetrievalMode mode) {
  if (anchors.V() == 0) throw EmptyAnchorSet("iti_loss: no anchors");
  double sum = 0.0;
  for (std::size_t n : anchors.indices) {
    const auto pick = detail::iti_retrieve_full(n, text, corpus, layout, mode);
    sum += dot(corpus.row(n), corpus.row(pick.ret));
  }
  return std::max(0.0, 1.0 - sum / static_cast<double>(anchors.V()));
}

double detail::ce_loss_full(std::span<const double> adapted, const Matrix& text,
                            uint32_t label, double tau_ce, Vec& probs) {
  if (label >= text.rows) throw DimensionMismatch("ce_loss: label >= C");
  if (!(tau_ce > 0.0)) throw NonPositiveTemperature("ce_loss: tau_ce");
  Vec scaled(text.rows);
  for (std::size_t j = 0; j < text.rows; ++j)
    scaled[j] = dot(adapted, text.row(j)) / tau_ce;
  const double m = *std::max_element(scaled.begin(), scaled.end());
  double sum = 0.0;
  probs.assign(text.rows, 0.0);
  for (std::size_t j = 0; j < text.rows; ++j) {
    probs[j] = std::exp(scaled[j] - m);
    sum += probs[j];
  }
  for (double& x : probs) x /= sum;
  // log-sum-exp form keeps the loss finite even when probs underflow
  return std::log(sum) - (scaled[label] - m);
}

double ce_loss(std::span<const double> adapted, const Matrix& text, uint32_t label,
               double tau_ce) {
  Vec probs;
  return detail::ce_loss_full(adapted, text, label, tau_ce, probs);
}

LossBreakdown total_loss(const EpisodeBundle& b, const ModelParams& p,
                         const CycleConfig& cfg) {
  return detail::evaluate_episode(b, p, cfg).loss;
}

std::pair<LossBreakdown, GradBundle> grad_total(const EpisodeBundle& b,
                                                const ModelParams& p,
                                                const CycleConfig& cfg) {
  const auto ev = detail::evaluate_episode(b, p, cfg);
  return {ev.loss, detail::backward(ev, b, p, cfg)};
}

} // namespace cccdfsl
