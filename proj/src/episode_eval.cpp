#include "cccdfsl/detail/episode_eval.hpp"

#include <cmath>

#include "cccdfsl/detail/ops.hpp"

namespace cccdfsl::detail {

EpisodeEval evaluate_episode(const EpisodeBundle& b, const ModelParams& p,
                             const CycleConfig& cfg) {
  if (b.d != p.d) throw DimensionMismatch("evaluate_episode: bundle d vs params d");
  EpisodeEval ev;
  ev.corpus = flatten_support(b);
  ev.mlp = mlp_forward_full(ev.corpus.raw, p, ev.hidden, ev.z_norm);
  const Matrix& L = ev.mlp.rows;
  // selections compare rows pairwise, so NaNs must be rejected before any of
  // them run; overflowing parameters surface here first
  if (!all_finite(L.data))
    throw NonFiniteValue("evaluate_episode: non-finite transformed corpus");

  // text -> image -> text
  ev.D = tit_similarity(b.text, L);
  ev.tit_sel = tit_select(ev.D);
  Matrix lstar(b.C, b.d);
  for (std::size_t j = 0; j < b.C; ++j)
    std::copy(L.row(ev.tit_sel[j]).begin(), L.row(ev.tit_sel[j]).end(),
              lstar.row(j).begin());
  auto tf = tit_loss_full(b.text, lstar, cfg);
  ev.E = std::move(tf.E);
  ev.tit = tf.result;
  ev.tit_hard_loss = tf.hard_loss;
  ev.soft_w = std::move(tf.soft_w);
  ev.rec = std::move(tf.rec);
  ev.rec_norm = std::move(tf.rec_norm);
  ev.rec_pass = std::move(tf.rec_pass);

  // shrink, then image -> text -> image
  ev.anchors = anchor_select(ev.D, ev.corpus.layout, cfg.k);
  const std::size_t V = ev.anchors.V();
  ev.anchor_mid.resize(V);
  ev.anchor_ret.resize(V);
  ev.anchor_sim.resize(V);
  double iti_sum = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    const std::size_t n = ev.anchors.indices[i];
    const auto pick = iti_retrieve_full(n, b.text, L, ev.corpus.layout, cfg.retrieval);
    ev.anchor_mid[i] = pick.mid;
    ev.anchor_ret[i] = pick.ret;
    ev.anchor_sim[i] = dot(L.row(n), L.row(pick.ret));
    iti_sum += ev.anchor_sim[i];
  }
  ev.iti = std::max(0.0, 1.0 - iti_sum / static_cast<double>(V));

  // cross-entropy over adapted support globals
  const std::size_t S = b.support.size();
  ev.adapted = Matrix(S, b.d);
  ev.adapt_norm.assign(S, 0.0);
  ev.ce_probs = Matrix(S, b.C);
  double ce_sum = 0.0;
  Vec pre, probs;
  for (std::size_t i = 0; i < S; ++i) {
    const Vec u = adapt_global_full(b.support[i].global, p, pre, ev.adapt_norm[i]);
    std::copy(u.begin(), u.end(), ev.adapted.row(i).begin());
    ce_sum += ce_loss_full(u, b.text, b.support[i].label, cfg.tau_ce, probs);
    std::copy(probs.begin(), probs.end(), ev.ce_probs.row(i).begin());
  }
  ev.ce = ce_sum / static_cast<double>(S);

  ev.loss.ce = ev.ce;
  ev.loss.cyc_txt = ev.tit.loss;
  ev.loss.cyc_img = ev.iti;
  ev.loss.total = ev.ce + cfg.lambda1 * ev.tit.loss + cfg.lambda2 * ev.iti;
  ev.loss.hard_cycle_rate = ev.tit.hard_rate;
  ev.loss.V = V;
  return ev;
}

namespace {

// d/dz of z/||z|| applied to an upstream row gradient
void normalize_backward(std::span<const double> unit, double norm,
                        std::span<const double> dunit, std::span<double> dz) {
  const double proj = dot(dunit, unit);
  for (std::size_t i = 0; i < dz.size(); ++i)
    dz[i] = (dunit[i] - proj * unit[i]) / norm;
}

} // namespace

GradBundle backward(const EpisodeEval& ev, const EpisodeBundle& b,
                    const ModelParams& p, const CycleConfig& cfg) {
  GradBundle g;
  g.dW1 = Matrix(p.d, p.h);
  g.dW2 = Matrix(p.h, p.d);
  g.dWa = Matrix(p.d, p.d);

  const Matrix& L = ev.mlp.rows;
  const std::size_t H = L.rows;
  const std::size_t C = b.C;

  // ---- cross-entropy -> dWa ----
  const std::size_t S = b.support.size();
  Vec du(b.d), dv(b.d);
  for (std::size_t i = 0; i < S; ++i) {
    const auto u = ev.adapted.row(i);
    const auto probs = ev.ce_probs.row(i);
    std::fill(du.begin(), du.end(), 0.0);
    for (std::size_t j = 0; j < C; ++j) {
      const double dlogit =
          (probs[j] - (j == b.support[i].label ? 1.0 : 0.0)) /
          (cfg.tau_ce * static_cast<double>(S));
      const auto t = b.text.row(j);
      for (std::size_t x = 0; x < b.d; ++x) du[x] += dlogit * t[x];
    }
    normalize_backward(u, ev.adapt_norm[i], du, dv);
    const auto& gvec = b.support[i].global;
    for (std::size_t l = 0; l < b.d; ++l)
      for (std::size_t x = 0; x < b.d; ++x) g.dWa.at(l, x) += gvec[l] * dv[x];
  }

  // ---- corpus-row gradient accumulation ----
  Matrix dL(H, b.d);
  std::vector<uint8_t> touched(H, 0);

  // text cycle (soft surrogate only; the hard variant is piecewise constant)
  if (cfg.tit_mode == TitMode::soft && cfg.lambda1 != 0.0) {
    const double fscale = -cfg.lambda1 / static_cast<double>(C);
    Vec drec(b.d), drho(b.d), q(C), de(C), dlstar(b.d);
    for (std::size_t j = 0; j < C; ++j) {
      const auto tj = b.text.row(j);
      for (std::size_t x = 0; x < b.d; ++x) drec[x] = fscale * tj[x];
      if (ev.rec_pass[j]) {
        drho = drec;  // reconstruction skipped normalization
      } else {
        normalize_backward(ev.rec.row(j), ev.rec_norm[j], drec, drho);
      }
      const auto w = ev.soft_w.row(j);
      double mix = 0.0;
      for (std::size_t k = 0; k < C; ++k) {
        q[k] = dot(drho, b.text.row(k));
        mix += w[k] * q[k];
      }
      for (std::size_t k = 0; k < C; ++k) de[k] = w[k] * (q[k] - mix);
      std::fill(dlstar.begin(), dlstar.end(), 0.0);
      for (std::size_t k = 0; k < C; ++k) {
        const double dE = de[k] / cfg.tau_soft;
        const auto tk = b.text.row(k);
        for (std::size_t x = 0; x < b.d; ++x) dlstar[x] += dE * tk[x];
      }
      const std::size_t row = ev.tit_sel[j];
      auto acc = dL.row(row);
      for (std::size_t x = 0; x < b.d; ++x) acc[x] += dlstar[x];
      touched[row] = 1;
    }
  }

  // image cycle: both endpoints move
  if (cfg.lambda2 != 0.0) {
    const std::size_t V = ev.anchors.V();
    const double scale = -cfg.lambda2 / static_cast<double>(V);
    for (std::size_t i = 0; i < V; ++i) {
      const std::size_t n = ev.anchors.indices[i];
      const std::size_t m = ev.anchor_ret[i];
      auto dn = dL.row(n);
      const auto lm = L.row(m);
      for (std::size_t x = 0; x < b.d; ++x) dn[x] += scale * lm[x];
      auto dm = dL.row(m);
      const auto ln = L.row(n);
      for (std::size_t x = 0; x < b.d; ++x) dm[x] += scale * ln[x];
      touched[n] = 1;
      touched[m] = 1;
    }
  }

  // ---- MLP backward over touched rows ----
  Vec dz(b.d), dhid(p.h);
  for (std::size_t r = 0; r < H; ++r) {
    if (!touched[r] || ev.mlp.pass_through[r]) continue;  // pass-through rows are constant
    normalize_backward(L.row(r), ev.z_norm[r], dL.row(r), dz);
    const auto hid = ev.hidden.row(r);
    for (uint32_t a = 0; a < p.h; ++a) {
      if (hid[a] > 0.0) {
        double s = 0.0;
        for (uint32_t x = 0; x < p.d; ++x) {
          g.dW2.at(a, x) += hid[a] * dz[x];
          s += p.W2.at(a, x) * dz[x];
        }
        dhid[a] = s;
      } else {
        dhid[a] = 0.0;
      }
    }
    const auto raw = ev.corpus.raw.row(r);
    for (uint32_t l = 0; l < p.d; ++l) {
      if (raw[l] == 0.0) continue;
      for (uint32_t a = 0; a < p.h; ++a)
        if (hid[a] > 0.0) g.dW1.at(l, a) += raw[l] * dhid[a];
    }
  }

  return g;
}

} // namespace cccdfsl::detail
