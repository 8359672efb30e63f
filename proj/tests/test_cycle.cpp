#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cccdfsl/cycle.hpp"
#include "cccdfsl/synth.hpp"
#include "reference.hpp"

using namespace cccdfsl;

namespace {

// the C=2, H=3 worked instance used across several ops
const Matrix kText = Matrix::from_rows({{1, 0}, {0, 1}});
const Matrix kCorpus = Matrix::from_rows({{0.8, 0.6}, {0.6, 0.8}, {1, 0}});

ModelParams identity_params(uint32_t d) {
  ModelParams p;
  p.d = d;
  p.h = d;
  p.W1 = Matrix(d, d);
  p.W2 = Matrix(d, d);
  p.Wa = Matrix(d, d);
  for (uint32_t i = 0; i < d; ++i) p.W1.at(i, i) = p.W2.at(i, i) = 1.0;
  return p;
}

} // namespace

TEST_CASE("tit_similarity worked instance") {
  const Matrix D = tit_similarity(kText, kCorpus);
  const double expect[2][3] = {{0.8, 0.6, 1.0}, {0.6, 0.8, 0.0}};
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) CHECK(D.at(j, i) == expect[j][i]);

  // orthonormal text embedded in the corpus lights up exactly
  const Matrix t2 = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix c2 = Matrix::from_rows({{0, 1}, {1, 0}});
  const Matrix d2 = tit_similarity(t2, c2);
  CHECK(d2.at(0, 1) == 1.0);
  CHECK(d2.at(1, 0) == 1.0);

  // scale applied before normalization is absorbed
  Matrix scaled = kCorpus;
  for (auto& x : scaled.data) x *= 5.0;
  for (std::size_t r = 0; r < scaled.rows; ++r) l2_normalize_in_place(scaled.row(r));
  const Matrix Ds = tit_similarity(kText, scaled);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(Ds.at(j, i) - D.at(j, i)) <= 1e-15);
}

TEST_CASE("tit_select") {
  const Matrix D = tit_similarity(kText, kCorpus);
  CHECK(tit_select(D) == std::vector<std::size_t>{2, 1});

  const Matrix ident = Matrix::from_rows({{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}});
  CHECK(tit_select(ident) == std::vector<std::size_t>{0, 0});

  CHECK(tit_select(Matrix::from_rows({{0.3}})) == std::vector<std::size_t>{0});
}

TEST_CASE("tit_loss hard fixed point") {
  // lstar = rows 2 and 1 -> E = [[1,0],[0.6,0.8]], both argmaxes diagonal
  const Matrix lstar = Matrix::from_rows({{1, 0}, {0.6, 0.8}});
  CycleConfig cfg;
  cfg.tit_mode = TitMode::hard_metric_only;
  const auto r = tit_loss(kText, lstar, cfg);
  CHECK(r.loss == 0.0);
  CHECK(r.hard_rate == 1.0);
}

TEST_CASE("tit_loss soft approaches hard in the low-temperature limit") {
  const Matrix lstar = Matrix::from_rows({{1, 0}, {0.6, 0.8}});
  CycleConfig cfg;
  cfg.tit_mode = TitMode::soft;
  cfg.tau_soft = 1e-4;
  const auto r = tit_loss(kText, lstar, cfg);
  CHECK(r.hard_rate == 1.0);
  CHECK(std::abs(r.loss - 0.0) <= 1e-3);
}

TEST_CASE("tit_loss C=1 is always zero in hard mode") {
  const Matrix t = Matrix::from_rows({{0.6, 0.8}});
  const Matrix lstar = Matrix::from_rows({{0, 1}});
  CycleConfig cfg;
  cfg.tit_mode = TitMode::hard_metric_only;
  const auto r = tit_loss(t, lstar, cfg);
  CHECK(r.loss == 0.0);
  CHECK(r.hard_rate == 1.0);
}

TEST_CASE("anchor_select") {
  SUBCASE("k >= M saturates every block") {
    const Matrix D = tit_similarity(kText, kCorpus);
    const CorpusLayout layout{3, 1, 1};  // three blocks of one patch
    const auto a = anchor_select(D, layout, 4);
    CHECK(a.indices == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("worked two-block toy") {
    // C=1, two blocks of M=3, k=1; block argmaxes at local 2 and 0
    const Matrix D = Matrix::from_rows({{0.1, 0.2, 0.9, 0.8, 0.1, 0.2}});
    const CorpusLayout layout{2, 1, 3};
    const auto a = anchor_select(D, layout, 1);
    CHECK(a.indices == std::vector<std::size_t>{2, 3});
    REQUIRE(a.provenance.size() == 2);
    CHECK(a.provenance[0] ==
          std::vector<std::pair<uint32_t, uint32_t>>{{0, 0}});
    CHECK(a.provenance[1] ==
          std::vector<std::pair<uint32_t, uint32_t>>{{1, 0}});
  }
  SUBCASE("positive rescaling leaves the set unchanged") {
    Rng rng(5);
    Matrix D(2, 12);
    for (auto& x : D.data) x = rng.gaussian();
    const CorpusLayout layout{2, 2, 3};
    const auto a = anchor_select(D, layout, 2);
    Matrix D2 = D;
    for (auto& x : D2.data) x *= 3.0;
    const auto a2 = anchor_select(D2, layout, 2);
    CHECK(a.indices == a2.indices);
    CHECK(a.provenance == a2.provenance);
  }
}

TEST_CASE("iti_retrieve scopes") {
  SUBCASE("singleton scope returns the anchor") {
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{0.6, 0.8}, {0.8, 0.6}});
    const CorpusLayout layout{2, 1, 1};  // M=1, A=0
    for (auto mode : {RetrievalMode::cross_view, RetrievalMode::intra_image}) {
      CHECK(iti_retrieve(0, text, corpus, layout, mode) == 0);
      CHECK(iti_retrieve(1, text, corpus, layout, mode) == 1);
    }
  }
  SUBCASE("self-retrieval when the anchor wins its own sample") {
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{1, 0}, {0.6, 0.8}});
    const CorpusLayout layout{1, 2, 1};  // one sample, two views
    CHECK(iti_retrieve(0, text, corpus, layout, RetrievalMode::cross_view) == 0);
  }
  SUBCASE("planted better match in another sample") {
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{0.8, 0.6}, {1, 0}});
    const CorpusLayout layout{2, 1, 1};
    CHECK(iti_retrieve(0, text, corpus, layout, RetrievalMode::all_images) == 1);
    CHECK(iti_retrieve(0, text, corpus, layout, RetrievalMode::cross_view) == 0);
  }
}

TEST_CASE("iti_loss") {
  const double s3 = std::sqrt(3.0) / 2.0;
  SUBCASE("all self-retrievals give zero") {
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{1, 0}, {0.9, std::sqrt(0.19)}});
    const CorpusLayout layout{2, 1, 1};
    AnchorSet a;
    a.indices = {0, 1};
    a.provenance = {{{0, 0}}, {{1, 0}}};
    CHECK(iti_loss(a, corpus, text, layout, RetrievalMode::cross_view) == 0.0);
  }
  SUBCASE("orthogonal retrievals give one") {
    // anchor row 1 maps to text 0 whose best patch is row 0, orthogonal to row 1
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{1, 0}, {0, 1}});
    const CorpusLayout layout{1, 1, 2};
    AnchorSet a;
    a.indices = {1};
    a.provenance = {{{0, 0}}};
    CHECK(iti_loss(a, corpus, text, layout, RetrievalMode::intra_image) == 1.0);
  }
  SUBCASE("mixed toy averages to 0.25") {
    const Matrix text = Matrix::from_rows({{1, 0}});
    const Matrix corpus = Matrix::from_rows({{1, 0}, {0.5, s3}});
    const CorpusLayout layout{1, 1, 2};
    AnchorSet a;
    a.indices = {0, 1};
    a.provenance = {{{0, 0}}, {{0, 0}}};
    CHECK(std::abs(iti_loss(a, corpus, text, layout, RetrievalMode::intra_image) -
                   0.25) <= 1e-15);
  }
  SUBCASE("empty anchor set is an error") {
    AnchorSet a;
    CHECK_THROWS_AS(
        (void)iti_loss(a, kCorpus, kText, CorpusLayout{3, 1, 1},
                       RetrievalMode::all_images),
        EmptyAnchorSet);
  }
}

TEST_CASE("ce_loss examples") {
  SUBCASE("uniform logits give ln C") {
    const uint32_t d = 5;
    Matrix text(5, d);
    for (uint32_t j = 0; j < 5; ++j) text.at(j, j) = 1.0;
    Vec q(d, 0.0);
    q[0] = 1.0;
    // rotate q so it has equal cosine to all text rows
    Vec equal(d, 1.0 / std::sqrt(5.0));
    CHECK(std::abs(ce_loss(equal, text, 2, 0.5) - std::log(5.0)) <= 1e-12);
  }
  SUBCASE("saturated similarity gives ~0") {
    const Matrix text = Matrix::from_rows({{1, 0}, {-1, 0}});
    const Vec g{1.0, 0.0};
    CHECK(ce_loss(g, text, 0, 0.01) <= 1e-6);
  }
  SUBCASE("two-class worked value") {
    // sims (0.8, 0.2), tau 1, label 0: -log(e^.8/(e^.8+e^.2)) = 0.437488
    const Matrix text = Matrix::from_rows({{1, 0}, {0, 1}});
    const double c = 1.0 / std::sqrt(0.8 * 0.8 + 0.2 * 0.2);
    const Vec g{0.8 * c, 0.2 * c};
    Matrix scaled_text = text;  // rescale text so raw sims are 0.8 / 0.2
    const Vec g2{0.8, 0.2};
    const double got = ce_loss(g2, scaled_text, 0, 1.0);
    CHECK(got == doctest::Approx(0.437488).epsilon(2e-5));
    // direct evaluation oracle
    const double direct = -std::log(std::exp(0.8) / (std::exp(0.8) + std::exp(0.2)));
    CHECK(std::abs(got - direct) <= 1e-12);
  }
}

TEST_CASE("total_loss basics") {
  SUBCASE("lambda zero reduces to the cross-entropy") {
    const auto b = refimpl::random_episode(77);
    const auto p = init_params(b.d, b.d, 3);
    CycleConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    const auto lb = total_loss(b, p, cfg);
    CHECK(lb.total == lb.ce);
  }
  SUBCASE("noise-free planted bundle with identity-like MLP cycles perfectly") {
    SynthSpec sp;
    sp.C = 3;
    sp.d = 16;
    sp.M = 8;
    sp.A = 1;
    sp.shots = 2;
    sp.queries = 1;
    sp.signal_patches = 2;
    sp.signal_strength = 1.0;
    sp.noise_sigma = 0.0;
    sp.distractor_overlap = 0.0;
    sp.view_jitter_sigma = 0.1;
    sp.seed = 21;
    const auto b = gen_synthetic(sp);
    const auto p = identity_params(b.d);
    CycleConfig cfg;
    const auto lb = total_loss(b, p, cfg);
    CHECK(lb.hard_cycle_rate == 1.0);
  }
  SUBCASE("breakdown additivity to 1e-12 over random configs") {
    for (uint64_t s = 0; s < 100; ++s) {
      const auto b = refimpl::random_episode(1000 + s);
      const auto p = init_params(b.d, b.d, s);
      const auto cfg = refimpl::random_config(s);
      const auto lb = total_loss(b, p, cfg);
      CHECK(std::abs(lb.total - (lb.ce + cfg.lambda1 * lb.cyc_txt +
                                 cfg.lambda2 * lb.cyc_img)) <= 1e-12);
      CHECK(lb.ce >= 0.0);
      CHECK(lb.cyc_txt >= 0.0);
      CHECK(lb.cyc_txt <= 2.0);
      CHECK(lb.cyc_img >= 0.0);
      CHECK(lb.cyc_img <= 2.0);
      CHECK(lb.hard_cycle_rate >= 0.0);
      CHECK(lb.hard_cycle_rate <= 1.0);
    }
  }
}

TEST_CASE("oracle equivalence against the naive reference") {
  for (uint64_t s = 0; s < 60; ++s) {
    const auto b = refimpl::random_episode(5000 + s);
    const auto p = init_params(b.d, std::max(1u, b.d / 2), s * 7 + 1);
    const auto cfg = refimpl::random_config(s + 999);
    const auto ref = refimpl::ref_evaluate(b, p, cfg);

    const auto corpus = flatten_support(b);
    const auto mlp = mlp_forward(corpus.raw, p);
    const auto D = tit_similarity(b.text, mlp.rows);
    CHECK(tit_select(D) == ref.tit_sel);

    const auto anchors = anchor_select(D, corpus.layout, cfg.k);
    CHECK(anchors.indices == ref.anchors);

    for (std::size_t i = 0; i < anchors.indices.size(); ++i)
      CHECK(iti_retrieve(anchors.indices[i], b.text, mlp.rows, corpus.layout,
                         cfg.retrieval) == ref.iti_ret[i]);

    const auto lb = total_loss(b, p, cfg);
    CHECK(std::abs(lb.ce - ref.ce) <= 1e-12);
    const double ref_txt =
        cfg.tit_mode == TitMode::soft ? ref.cyc_txt_soft : ref.cyc_txt_hard;
    CHECK(std::abs(lb.cyc_txt - ref_txt) <= 1e-12);
    CHECK(std::abs(lb.cyc_img - ref.cyc_img) <= 1e-12);
    CHECK(std::abs(lb.total - refimpl::ref_total(ref, cfg)) <= 1e-12);
    CHECK(lb.hard_cycle_rate == ref.hard_rate);
    CHECK(lb.V == ref.anchors.size());
  }
}

TEST_CASE("retrieval scope monotonicity") {
  for (uint64_t s = 0; s < 20; ++s) {
    const auto b = refimpl::random_episode(7000 + s);
    const auto p = init_params(b.d, b.d, s);
    const auto corpus = flatten_support(b);
    const auto mlp = mlp_forward(corpus.raw, p);
    const auto D = tit_similarity(b.text, mlp.rows);
    const auto anchors = anchor_select(D, corpus.layout, 2);
    for (std::size_t n : anchors.indices) {
      const auto x = mlp.rows.row(n);
      double sim[3];
      const RetrievalMode modes[3] = {RetrievalMode::intra_image,
                                      RetrievalMode::cross_view,
                                      RetrievalMode::all_images};
      for (int m = 0; m < 3; ++m) {
        // similarity to the intermediary text, not the anchor itself
        std::size_t mid = 0;
        double best = -2.0;
        for (std::size_t j = 0; j < b.C; ++j) {
          const double v = dot(x, b.text.row(j));
          if (v > best) {
            best = v;
            mid = j;
          }
        }
        const auto ret = iti_retrieve(n, b.text, mlp.rows, corpus.layout, modes[m]);
        sim[m] = dot(b.text.row(mid), mlp.rows.row(ret));
      }
      CHECK(sim[0] <= sim[1] + 1e-15);
      CHECK(sim[1] <= sim[2] + 1e-15);
    }
  }
}

TEST_CASE("permutation equivariance") {
  // first seed whose episode has at least two support samples
  uint64_t seed = 8100;
  EpisodeBundle b = refimpl::random_episode(seed, 3, 5, 4, 1, 8);
  while (b.support.size() < 2) b = refimpl::random_episode(++seed, 3, 5, 4, 1, 8);
  EpisodeBundle perm = b;
  std::swap(perm.support.front(), perm.support.back());

  const auto p = init_params(b.d, b.d, 17);
  const auto cfg = refimpl::random_config(4);

  // summation order changes with the permutation, so compare to 1e-12
  const auto l0 = total_loss(b, p, cfg);
  const auto l1 = total_loss(perm, p, cfg);
  CHECK(std::abs(l0.ce - l1.ce) <= 1e-12);
  CHECK(std::abs(l0.cyc_txt - l1.cyc_txt) <= 1e-12);
  CHECK(std::abs(l0.cyc_img - l1.cyc_img) <= 1e-12);
  CHECK(l0.V == l1.V);

  // anchors map through the sample permutation
  const auto c0 = flatten_support(b);
  const auto c1 = flatten_support(perm);
  const auto a0 = anchor_select(tit_similarity(b.text, mlp_forward(c0.raw, p).rows),
                                c0.layout, cfg.k);
  const auto a1 = anchor_select(tit_similarity(perm.text, mlp_forward(c1.raw, p).rows),
                                c1.layout, cfg.k);
  const uint32_t last = static_cast<uint32_t>(b.support.size() - 1);
  auto remap = [&](std::size_t flat) {
    auto loc = c0.layout.loc(flat);
    if (loc.sample == 0)
      loc.sample = last;
    else if (loc.sample == last)
      loc.sample = 0;
    return c1.layout.flat(loc);
  };
  std::vector<std::size_t> mapped;
  for (auto idx : a0.indices) mapped.push_back(remap(idx));
  std::sort(mapped.begin(), mapped.end());
  CHECK(mapped == a1.indices);
}

TEST_CASE("determinism: identical inputs, identical outputs") {
  const auto b = refimpl::random_episode(9000);
  const auto p = init_params(b.d, b.d, 2);
  const auto cfg = refimpl::random_config(11);
  const auto l0 = total_loss(b, p, cfg);
  const auto l1 = total_loss(b, p, cfg);
  CHECK(l0.ce == l1.ce);
  CHECK(l0.cyc_txt == l1.cyc_txt);
  CHECK(l0.cyc_img == l1.cyc_img);
  CHECK(l0.total == l1.total);
}

TEST_CASE("soft and hard tit losses agree on untied instances at low temperature") {
  for (uint64_t s = 0; s < 20; ++s) {
    const auto b = refimpl::random_episode(9500 + s);
    const auto p = init_params(b.d, b.d, s + 1);
    CycleConfig soft;
    soft.tit_mode = TitMode::soft;
    soft.tau_soft = 1e-4;
    CycleConfig hard = soft;
    hard.tit_mode = TitMode::hard_metric_only;
    const auto ls = total_loss(b, p, soft);
    const auto lh = total_loss(b, p, hard);
    CHECK(std::abs(ls.cyc_txt - lh.cyc_txt) <= 1e-3);
  }
}
