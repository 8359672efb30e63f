#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "cccdfsl/episode.hpp"
#include "cccdfsl/rng.hpp"

using namespace cccdfsl;

namespace {

// builds an unnormalized bundle and runs it through ingestion
EpisodeBundle random_bundle(uint64_t seed, uint32_t C = 5, uint32_t d = 8,
                            uint32_t M = 4, uint32_t A = 1, uint32_t n_support = 6,
                            uint32_t n_query = 3, double scale = 1.0) {
  Rng rng(seed);
  auto fill = [&](std::span<double> row) {
    for (auto& x : row) x = scale * rng.gaussian();
  };
  EpisodeBundle b;
  b.C = C;
  b.d = d;
  b.M = M;
  b.A = A;
  b.text = Matrix(C, d);
  for (uint32_t j = 0; j < C; ++j) fill(b.text.row(j));
  for (uint32_t i = 0; i < n_support; ++i) {
    SampleEmbedding s;
    s.label = i % C;
    s.global.resize(d);
    fill(s.global);
    for (uint32_t v = 0; v <= A; ++v) {
      Matrix view(M, d);
      for (uint32_t m = 0; m < M; ++m) fill(view.row(m));
      s.views.push_back(std::move(view));
    }
    b.support.push_back(std::move(s));
  }
  for (uint32_t i = 0; i < n_query; ++i) {
    QuerySample q;
    q.label = i % C;
    q.global.resize(d);
    fill(q.global);
    q.patches = Matrix(M, d);
    for (uint32_t m = 0; m < M; ++m) fill(q.patches.row(m));
    b.query.push_back(std::move(q));
  }
  b.metadata = R"({"class_names":["a","b","c","d","e"]})";
  normalize_bundle(b);
  return b;
}

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

} // namespace

TEST_CASE("header arithmetic and corpus size") {
  const auto b = random_bundle(1);
  CHECK(b.corpus_size() == 6u * 2u * 4u);
  const auto corpus = flatten_support(b);
  CHECK(corpus.raw.rows == b.corpus_size());
  CHECK(corpus.raw.cols == b.d);
}

TEST_CASE("flatten ordering and index map") {
  const auto b = random_bundle(2, 3, 6, 3, 1, 2, 0);
  const auto corpus = flatten_support(b);
  CHECK(corpus.raw.rows == 12);  // |S|=2, A=1, M=3

  // enumerate the canonical ordering by hand: flat 7 = sample 1, view 0, patch 1
  const auto l = corpus.layout.loc(7);
  CHECK(l == PatchLoc{1, 0, 1});
  CHECK(corpus.layout.flat(l) == 7);

  // bijection over the whole corpus
  for (std::size_t i = 0; i < corpus.layout.size(); ++i)
    CHECK(corpus.layout.flat(corpus.layout.loc(i)) == i);

  // rows come from the right views
  for (std::size_t i = 0; i < corpus.layout.size(); ++i) {
    const auto loc = corpus.layout.loc(i);
    const auto& expect = b.support[loc.sample].views[loc.view];
    for (std::size_t x = 0; x < b.d; ++x)
      CHECK(corpus.raw.at(i, x) == expect.at(loc.patch, x));
  }
}

TEST_CASE("flatten with A=0 is the original views only") {
  const auto b = random_bundle(3, 3, 6, 3, 0, 2, 0);
  const auto corpus = flatten_support(b);
  CHECK(corpus.raw.rows == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto loc = corpus.layout.loc(i);
    CHECK(loc.view == 0);
  }
}

TEST_CASE("permuting support permutes corpus blocks") {
  const auto b = random_bundle(4, 3, 6, 3, 1, 4, 0);
  EpisodeBundle perm = b;
  std::swap(perm.support[0], perm.support[2]);
  const auto c0 = flatten_support(b);
  const auto c1 = flatten_support(perm);
  const std::size_t block = (b.A + 1) * b.M;  // rows per sample
  auto row_eq = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t x = 0; x < b.d; ++x)
      if (c0.raw.at(r0, x) != c1.raw.at(r1, x)) return false;
    return true;
  };
  for (std::size_t r = 0; r < block; ++r) {
    CHECK(row_eq(0 * block + r, 2 * block + r));
    CHECK(row_eq(2 * block + r, 0 * block + r));
    CHECK(row_eq(1 * block + r, 1 * block + r));
  }
}

TEST_CASE("save/load/save round-trips byte-identically") {
  for (uint64_t seed : {10u, 11u, 12u}) {
    const auto b = random_bundle(seed);
    const auto bytes1 = encode_bundle(b);
    const auto loaded = decode_bundle(bytes1);
    const auto bytes2 = encode_bundle(loaded);
    CHECK(bytes1 == bytes2);

    // field-by-field equality at payload precision
    CHECK(loaded.C == b.C);
    CHECK(loaded.A == b.A);
    CHECK(loaded.metadata == b.metadata);
    CHECK(loaded.support.size() == b.support.size());
    for (std::size_t i = 0; i < b.support.size(); ++i)
      CHECK(loaded.support[i].label == b.support[i].label);
  }
}

TEST_CASE("file save/load round-trip") {
  const auto b = random_bundle(20);
  const auto path = temp_path("cccdfsl_test_bundle.ccfb");
  save_bundle(b, path);
  const auto loaded = load_bundle(path);
  const auto path2 = temp_path("cccdfsl_test_bundle2.ccfb");
  save_bundle(loaded, path2);

  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {});
  const std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(!s1.empty());
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("degenerate but legal bundles") {
  // empty query set
  auto b = random_bundle(30, 5, 8, 4, 1, 6, 0);
  CHECK(b.query.empty());
  const auto bytes = encode_bundle(b);
  CHECK(decode_bundle(bytes).query.empty());

  // C=1
  const auto c1 = random_bundle(31, 1, 8, 4, 1, 2, 1);
  CHECK_NOTHROW((void)encode_bundle(c1));
}

TEST_CASE("format errors") {
  const auto b = random_bundle(40);
  auto bytes = encode_bundle(b);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS((void)decode_bundle(bytes), BadMagic);
  }
  SUBCASE("unsupported version") {
    bytes[4] = 99;
    CHECK_THROWS_AS((void)decode_bundle(bytes), UnsupportedVersion);
  }
  SUBCASE("truncated payload") {
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS((void)decode_bundle(bytes), DimensionMismatch);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS((void)decode_bundle(bytes), DimensionMismatch);
  }
  SUBCASE("NaN refused at save") {
    auto bad = b;
    bad.support[0].global[0] = std::nan("");
    CHECK_THROWS_AS((void)encode_bundle(bad), NonFiniteValue);
  }
  SUBCASE("bad label refused") {
    auto bad = b;
    bad.support[0].label = bad.C + 3;
    CHECK_THROWS_AS((void)encode_bundle(bad), DimensionMismatch);
  }
}

TEST_CASE("loader renormalizes rows that are far from unit") {
  const auto b = random_bundle(50);
  auto bytes = encode_bundle(b);
  // scale the first text row by 2 directly in the payload
  const std::size_t text_off = 4 + 7 * 4;
  for (uint32_t i = 0; i < b.d; ++i) {
    float v;
    std::memcpy(&v, bytes.data() + text_off + 4 * i, 4);
    v *= 2.0f;
    std::memcpy(bytes.data() + text_off + 4 * i, &v, 4);
  }
  const auto loaded = decode_bundle(bytes);
  CHECK(std::abs(norm2(loaded.text.row(0)) - 1.0) <= 1e-6);
}

TEST_CASE("ingestion rejects near-zero rows") {
  auto b = random_bundle(60);
  for (auto& x : b.support[0].global) x = 0.0;
  CHECK_THROWS_AS(normalize_bundle(b), NearZeroNorm);
}
