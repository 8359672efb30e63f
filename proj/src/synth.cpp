#include "cccdfsl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cccdfsl/rng.hpp"
#include "json.hpp"

namespace cccdfsl {

namespace {

void validate_spec(const SynthSpec& s) {
  if (s.C == 0 || s.d == 0 || s.M == 0 || s.shots == 0)
    throw SpecInfeasible("synth: C, d, M, shots must be positive");
  if (s.C > s.d)
    throw SpecInfeasible("synth: C > d, orthogonal class directions not constructible");
  if (s.signal_patches >= s.M)
    throw SpecInfeasible("synth: signal_patches must be < M");
  if (!(s.signal_strength > 0.0 && s.signal_strength <= 1.0))
    throw SpecInfeasible("synth: signal_strength outside (0, 1]");
  if (s.noise_sigma < 0.0 || s.view_jitter_sigma < 0.0)
    throw SpecInfeasible("synth: negative sigma");
  if (!(s.distractor_overlap >= 0.0 && s.distractor_overlap < 1.0))
    throw SpecInfeasible("synth: distractor_overlap outside [0, 1)");
}

// C unit rows with exact pairwise cosine rho: t_j = a*e_j + b*u with u the
// normalized all-classes direction; a = sqrt(1-rho) and b solves the unit
// constraint.
Matrix class_directions(uint32_t C, uint32_t d, double rho) {
  const double a = std::sqrt(1.0 - rho);
  const double invsq = 1.0 / std::sqrt(static_cast<double>(C));
  const double b = -a * invsq + std::sqrt((1.0 - rho) / C + rho);
  Matrix text(C, d);
  for (uint32_t j = 0; j < C; ++j) {
    auto row = text.row(j);
    for (uint32_t i = 0; i < C; ++i) row[i] = b * invsq;
    row[j] += a;
  }
  return text;
}

Vec gaussian_vec(Rng& rng, uint32_t d, double sigma) {
  Vec v(d);
  for (auto& x : v) x = sigma * rng.gaussian();
  return v;
}

std::vector<uint32_t> pick_positions(Rng& rng, uint32_t M, uint32_t s) {
  std::vector<uint32_t> idx(M);
  std::iota(idx.begin(), idx.end(), 0u);
  for (uint32_t i = 0; i < s; ++i) {
    const auto j = i + static_cast<uint32_t>(rng.next_u64() % (M - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(s);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// original-view patches for one image of class `cls`
Matrix make_patches(Rng& rng, const SynthSpec& sp, const Matrix& text,
                    uint32_t cls, const std::vector<uint32_t>& planted) {
  Matrix m(sp.M, sp.d);
  for (uint32_t p = 0; p < sp.M; ++p) {
    Vec v;
    if (std::find(planted.begin(), planted.end(), p) != planted.end()) {
      v = gaussian_vec(rng, sp.d, sp.noise_sigma);
      const auto t = text.row(cls);
      for (uint32_t i = 0; i < sp.d; ++i) v[i] += sp.signal_strength * t[i];
    } else {
      v = gaussian_vec(rng, sp.d, 1.0);
    }
    l2_normalize_in_place(v);
    std::copy(v.begin(), v.end(), m.row(p).begin());
  }
  return m;
}

Matrix jitter_view(Rng& rng, const Matrix& orig, double sigma) {
  Matrix m(orig.rows, orig.cols);
  for (std::size_t p = 0; p < orig.rows; ++p) {
    Vec v(orig.row(p).begin(), orig.row(p).end());
    for (auto& x : v) x += sigma * rng.gaussian();
    l2_normalize_in_place(v);
    std::copy(v.begin(), v.end(), m.row(p).begin());
  }
  return m;
}

Vec patch_mean_global(const Matrix& patches) {
  Vec g(patches.cols, 0.0);
  for (std::size_t p = 0; p < patches.rows; ++p) {
    const auto row = patches.row(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += row[i];
  }
  for (auto& x : g) x /= static_cast<double>(patches.rows);
  l2_normalize_in_place(g);
  return g;
}

std::vector<std::vector<uint32_t>> planted_from_meta(const EpisodeBundle& b,
                                                     const char* key) {
  if (b.metadata.empty()) return {};
  auto j = nlohmann::json::parse(b.metadata, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || !j.contains("planted") || !j["planted"].contains(key))
    return {};
  return j["planted"][key].get<std::vector<std::vector<uint32_t>>>();
}

} // namespace

EpisodeBundle gen_synthetic(const SynthSpec& sp) {
  validate_spec(sp);
  Rng rng(sp.seed);

  EpisodeBundle b;
  b.C = sp.C;
  b.d = sp.d;
  b.M = sp.M;
  b.A = sp.A;
  b.text = class_directions(sp.C, sp.d, sp.distractor_overlap);

  std::vector<std::vector<uint32_t>> planted_support, planted_query;

  for (uint32_t cls = 0; cls < sp.C; ++cls)
    for (uint32_t n = 0; n < sp.shots; ++n) {
      SampleEmbedding s;
      s.label = cls;
      const auto planted = pick_positions(rng, sp.M, sp.signal_patches);
      planted_support.push_back(planted);
      s.views.push_back(make_patches(rng, sp, b.text, cls, planted));
      for (uint32_t a = 0; a < sp.A; ++a)
        s.views.push_back(jitter_view(rng, s.views[0], sp.view_jitter_sigma));
      s.global = patch_mean_global(s.views[0]);
      b.support.push_back(std::move(s));
    }

  for (uint32_t cls = 0; cls < sp.C; ++cls)
    for (uint32_t n = 0; n < sp.queries; ++n) {
      QuerySample q;
      q.label = cls;
      const auto planted = pick_positions(rng, sp.M, sp.signal_patches);
      planted_query.push_back(planted);
      q.patches = make_patches(rng, sp, b.text, cls, planted);
      q.global = patch_mean_global(q.patches);
      b.query.push_back(std::move(q));
    }

  nlohmann::json meta;
  std::vector<std::string> names;
  for (uint32_t c = 0; c < sp.C; ++c) names.push_back("class_" + std::to_string(c));
  meta["class_names"] = names;
  meta["planted"] = {{"support", planted_support}, {"query", planted_query}};
  meta["synth_spec"] = {{"C", sp.C},
                        {"d", sp.d},
                        {"M", sp.M},
                        {"A", sp.A},
                        {"shots", sp.shots},
                        {"queries", sp.queries},
                        {"signal_patches", sp.signal_patches},
                        {"signal_strength", sp.signal_strength},
                        {"noise_sigma", sp.noise_sigma},
                        {"distractor_overlap", sp.distractor_overlap},
                        {"view_jitter_sigma", sp.view_jitter_sigma},
                        {"seed", sp.seed}};
  b.metadata = meta.dump();

  validate_bundle(b);
  return b;
}

std::vector<std::vector<uint32_t>> planted_support_positions(const EpisodeBundle& b) {
  return planted_from_meta(b, "support");
}

std::vector<std::vector<uint32_t>> planted_query_positions(const EpisodeBundle& b) {
  return planted_from_meta(b, "query");
}

} // namespace cccdfsl
