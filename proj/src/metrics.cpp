#include "cccdfsl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cccdfsl/detail/episode_eval.hpp"
#include "cccdfsl/synth.hpp"

namespace cccdfsl {

namespace {

// transformed rows of one support sample's view 0
Matrix view0_transformed(const EpisodeBundle& b, const ModelParams& p,
                         std::size_t sample) {
  const auto corpus = flatten_support(b);
  const auto mlp = mlp_forward(corpus.raw, p);
  Matrix out(b.M, b.d);
  for (uint32_t m = 0; m < b.M; ++m) {
    const auto flat = corpus.layout.flat({static_cast<uint32_t>(sample), 0, m});
    std::copy(mlp.rows.row(flat).begin(), mlp.rows.row(flat).end(), out.row(m).begin());
  }
  return out;
}

void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

} // namespace

AlignmentReport alignment_scores(const EpisodeBundle& b, const ModelParams& p) {
  AlignmentReport r;
  r.per_class_A_g.assign(b.C, 0.0);
  r.per_class_A_l.assign(b.C, 0.0);
  std::vector<std::size_t> class_count(b.C, 0);

  const auto corpus = flatten_support(b);
  const auto mlp = mlp_forward(corpus.raw, p);

  double sum_g = 0.0, sum_l = 0.0, sum_lt = 0.0;
  for (std::size_t i = 0; i < b.support.size(); ++i) {
    const auto& s = b.support[i];
    const auto t = b.text.row(s.label);
    const Vec u = adapt_global(s.global, p);
    const double ag = dot(u, t);
    sum_g += ag;
    r.per_class_A_g[s.label] += ag;
    ++class_count[s.label];
    for (uint32_t m = 0; m < b.M; ++m) {
      const double al = dot(s.views[0].row(m), t);
      sum_l += al;
      r.per_class_A_l[s.label] += al;
      const auto flat = corpus.layout.flat({static_cast<uint32_t>(i), 0, m});
      sum_lt += dot(mlp.rows.row(flat), t);
    }
  }
  const double S = static_cast<double>(b.support.size());
  const double M = static_cast<double>(b.M);
  r.A_g = sum_g / S;
  r.A_l = sum_l / (S * M);
  r.A_l_transformed = sum_lt / (S * M);
  for (std::size_t c = 0; c < b.C; ++c) {
    if (class_count[c] == 0) continue;
    r.per_class_A_g[c] /= static_cast<double>(class_count[c]);
    r.per_class_A_l[c] /= static_cast<double>(class_count[c]) * M;
  }
  return r;
}

uint32_t classify(std::span<const double> query_global, const ModelParams& p,
                  const Matrix& text, double tau_ce) {
  (void)tau_ce;  // softmax temperature does not move the argmax
  const Vec u = adapt_global(query_global, p);
  std::size_t best = 0;
  double best_s = dot(u, text.row(0));
  for (std::size_t j = 1; j < text.rows; ++j) {
    const double s = dot(u, text.row(j));
    if (s > best_s) {
      best_s = s;
      best = j;
    }
  }
  return static_cast<uint32_t>(best);
}

double episode_accuracy(const EpisodeBundle& b, const ModelParams& p,
                        const CycleConfig& cfg) {
  if (b.query.empty()) throw EmptyQuerySet("episode_accuracy: no queries");
  std::size_t hits = 0;
  for (const auto& q : b.query)
    if (classify(q.global, p, b.text, cfg.tau_ce) == q.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(b.query.size());
}

double prototype_accuracy(const EpisodeBundle& b, const ModelParams& p) {
  if (b.query.empty()) throw EmptyQuerySet("prototype_accuracy: no queries");
  Matrix proto(b.C, b.d);
  std::vector<std::size_t> count(b.C, 0);
  for (const auto& s : b.support) {
    const Vec u = adapt_global(s.global, p);
    auto row = proto.row(s.label);
    for (std::size_t i = 0; i < b.d; ++i) row[i] += u[i];
    ++count[s.label];
  }
  for (std::size_t c = 0; c < b.C; ++c) {
    if (count[c] == 0)
      throw MissingClassSupport("prototype_accuracy: class " + std::to_string(c));
    auto row = proto.row(c);
    for (double& x : row) x /= static_cast<double>(count[c]);
    l2_normalize_in_place(row);
  }
  std::size_t hits = 0;
  for (const auto& q : b.query) {
    const Vec u = adapt_global(q.global, p);
    std::size_t best = 0;
    double best_s = dot(u, proto.row(0));
    for (std::size_t c = 1; c < b.C; ++c) {
      const double s = dot(u, proto.row(c));
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    if (best == q.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b.query.size());
}

namespace {

CycleTrace trace_impl(const EpisodeBundle& b, const ModelParams& p,
                      const CycleConfig& cfg, bool want_tit, bool want_iti) {
  const auto ev = detail::evaluate_episode(b, p, cfg);
  CycleTrace tr;
  if (want_tit) {
    for (std::size_t j = 0; j < b.C; ++j) {
      TitTraceEntry e;
      e.cls = static_cast<uint32_t>(j);
      const std::size_t sel = ev.tit_sel[j];
      e.patch = ev.corpus.layout.loc(sel);
      e.sim = ev.D.at(j, sel);
      e.recon_class = static_cast<uint32_t>(argmax(ev.E.row(j)));
      e.recon_sim = dot(b.text.row(j), b.text.row(e.recon_class));
      tr.tit.push_back(e);
    }
  }
  if (want_iti) {
    for (std::size_t i = 0; i < ev.anchors.V(); ++i) {
      ItiTraceEntry e;
      e.anchor = ev.corpus.layout.loc(ev.anchors.indices[i]);
      e.mid_class = ev.anchor_mid[i];
      e.retrieved = ev.corpus.layout.loc(ev.anchor_ret[i]);
      e.sim = ev.anchor_sim[i];
      tr.iti.push_back(e);
    }
  }
  return tr;
}

nlohmann::json loc_json(const PatchLoc& l) {
  return {{"sample", l.sample}, {"view", l.view}, {"idx", l.patch}};
}

} // namespace

CycleTrace tit_trace(const EpisodeBundle& b, const ModelParams& p,
                     const CycleConfig& cfg) {
  return trace_impl(b, p, cfg, true, false);
}

CycleTrace iti_trace(const EpisodeBundle& b, const ModelParams& p,
                     const CycleConfig& cfg) {
  return trace_impl(b, p, cfg, false, true);
}

CycleTrace full_trace(const EpisodeBundle& b, const ModelParams& p,
                      const CycleConfig& cfg) {
  return trace_impl(b, p, cfg, true, true);
}

nlohmann::json trace_to_json(const CycleTrace& t) {
  nlohmann::json j;
  j["tit"] = nlohmann::json::array();
  for (const auto& e : t.tit)
    j["tit"].push_back({{"class", e.cls},
                        {"patch", loc_json(e.patch)},
                        {"sim", e.sim},
                        {"recon_class", e.recon_class},
                        {"recon_sim", e.recon_sim}});
  j["iti"] = nlohmann::json::array();
  for (const auto& e : t.iti)
    j["iti"].push_back({{"anchor", loc_json(e.anchor)},
                        {"mid_class", e.mid_class},
                        {"retrieved", loc_json(e.retrieved)},
                        {"sim", e.sim}});
  return j;
}

void write_simmaps(const std::string& dir, const EpisodeBundle& b,
                   const ModelParams& p, bool pgm) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t s = 0; s < b.support.size(); ++s) {
    const Matrix rows = view0_transformed(b, p, s);
    for (std::size_t c = 0; c < b.C; ++c) {
      Vec sims(b.M);
      for (uint32_t m = 0; m < b.M; ++m) sims[m] = dot(b.text.row(c), rows.row(m));

      const std::string stem =
          "simmap_c" + std::to_string(c) + "_s" + std::to_string(s);
      std::string csv;
      for (uint32_t m = 0; m < b.M; ++m) {
        if (m) csv += ',';
        format_double(csv, sims[m]);
      }
      csv += '\n';
      std::ofstream fc(fs::path(dir) / (stem + ".csv"), std::ios::trunc);
      if (!fc) throw IoFailure("write_simmaps: cannot write CSV");
      fc << csv;

      if (!pgm) continue;
      // square raster when M allows it, single row otherwise
      uint32_t w = b.M, h = 1;
      const auto side = static_cast<uint32_t>(std::lround(std::sqrt(double(b.M))));
      if (side * side == b.M) w = h = side;
      std::ofstream fp(fs::path(dir) / (stem + ".pgm"),
                       std::ios::binary | std::ios::trunc);
      if (!fp) throw IoFailure("write_simmaps: cannot write PGM");
      fp << "P5\n" << w << " " << h << "\n255\n";
      for (uint32_t m = 0; m < b.M; ++m) {
        const double v = std::lround(255.0 * (sims[m] + 1.0) / 2.0);
        fp.put(static_cast<char>(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
}

void write_anchor_overlay(const std::string& path, const EpisodeBundle& b,
                          const ModelParams& p, const CycleConfig& cfg) {
  const auto corpus = flatten_support(b);
  const auto mlp = mlp_forward(corpus.raw, p);
  const auto D = tit_similarity(b.text, mlp.rows);
  const auto anchors = anchor_select(D, corpus.layout, cfg.k);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoFailure("write_anchor_overlay: cannot write " + path);
  f << "sample,view,patch,flat\n";
  for (std::size_t idx : anchors.indices) {
    const auto l = corpus.layout.loc(idx);
    f << l.sample << ',' << l.view << ',' << l.patch << ',' << idx << '\n';
  }
}

double anchor_planted_precision(const EpisodeBundle& b, const ModelParams& p,
                                uint32_t k_eval) {
  const auto planted = planted_support_positions(b);
  if (planted.empty()) return -1.0;
  const auto corpus = flatten_support(b);
  const auto mlp = mlp_forward(corpus.raw, p);
  const auto D = tit_similarity(b.text, mlp.rows);
  const auto anchors = anchor_select(D, corpus.layout, k_eval);
  std::size_t hit = 0;
  for (std::size_t idx : anchors.indices) {
    const auto l = corpus.layout.loc(idx);
    const auto& pos = planted[l.sample];
    if (std::find(pos.begin(), pos.end(), l.patch) != pos.end()) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(anchors.V());
}

} // namespace cccdfsl
