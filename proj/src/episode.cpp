#include "cccdfsl/episode.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace cccdfsl {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'F', 'B'};
constexpr uint32_t kVersion = 1;

// Loaded rows whose norm deviates from 1 by more than this are renormalized;
// anything closer is float quantization of an already-unit row and passes
// through untouched.
constexpr double kLoadNormTol = 1e-5;

// ---- little-endian encode/decode ----

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

void put_f32(std::vector<uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size())
      throw DimensionMismatch("CCFB: truncated payload at offset " +
                              std::to_string(pos));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint32_t>(bytes[pos]) |
                 (static_cast<uint32_t>(bytes[pos + 1]) << 8) |
                 (static_cast<uint32_t>(bytes[pos + 2]) << 16) |
                 (static_cast<uint32_t>(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
};

void put_row(std::vector<uint8_t>& out, std::span<const double> row) {
  for (double x : row) put_f32(out, x);
}

void read_row(Reader& r, std::span<double> row) {
  for (double& x : row) x = r.f32();
}

void check_row(std::span<const double> row, const char* what) {
  if (!all_finite(row))
    throw NonFiniteValue(std::string("bundle: non-finite value in ") + what);
}

// load-side normalization policy (see header)
void settle_row(std::span<double> row, const char* what) {
  check_row(row, what);
  const double n = norm2(row);
  if (n < kNormEps)
    throw NearZeroNorm(std::string("bundle: near-zero row in ") + what);
  if (std::abs(n - 1.0) > kLoadNormTol)
    for (double& x : row) x /= n;
}

} // namespace

std::vector<std::string> EpisodeBundle::class_names() const {
  if (metadata.empty()) return {};
  auto j = nlohmann::json::parse(metadata, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object() || !j.contains("class_names")) return {};
  std::vector<std::string> out;
  for (const auto& n : j["class_names"]) out.push_back(n.get<std::string>());
  return out;
}

PatchCorpus flatten_support(const EpisodeBundle& b) {
  PatchCorpus c;
  c.layout = {static_cast<uint32_t>(b.support.size()), b.A + 1, b.M};
  c.raw = Matrix(c.layout.size(), b.d);
  std::size_t r = 0;
  for (const auto& s : b.support)
    for (const auto& view : s.views)
      for (std::size_t p = 0; p < view.rows; ++p) {
        std::copy(view.row(p).begin(), view.row(p).end(),
                  c.raw.row(r).begin());
        ++r;
      }
  return c;
}

void normalize_bundle(EpisodeBundle& b) {
  auto settle = [](std::span<double> row, const char* what) {
    if (!all_finite(row))
      throw NonFiniteValue(std::string("bundle: non-finite value in ") + what);
    l2_normalize_in_place(row);
  };
  for (std::size_t j = 0; j < b.text.rows; ++j) settle(b.text.row(j), "text");
  for (auto& s : b.support) {
    settle(s.global, "support global");
    for (auto& v : s.views)
      for (std::size_t p = 0; p < v.rows; ++p) settle(v.row(p), "support patch");
  }
  for (auto& q : b.query) {
    settle(q.global, "query global");
    for (std::size_t p = 0; p < q.patches.rows; ++p)
      settle(q.patches.row(p), "query patch");
  }
}

void validate_bundle(const EpisodeBundle& b) {
  if (b.C == 0 || b.d == 0 || b.M == 0)
    throw DimensionMismatch("bundle: C, d, M must be positive");
  if (b.support.empty()) throw DimensionMismatch("bundle: empty support set");
  if (b.text.rows != b.C || b.text.cols != b.d)
    throw DimensionMismatch("bundle: text matrix shape");
  for (std::size_t j = 0; j < b.text.rows; ++j) check_row(b.text.row(j), "text");
  for (const auto& s : b.support) {
    if (s.label >= b.C) throw DimensionMismatch("bundle: support label >= C");
    if (s.global.size() != b.d)
      throw DimensionMismatch("bundle: support global dim");
    if (s.views.size() != std::size_t{b.A} + 1)
      throw DimensionMismatch("bundle: support view count");
    check_row(s.global, "support global");
    for (const auto& v : s.views) {
      if (v.rows != b.M || v.cols != b.d)
        throw DimensionMismatch("bundle: support view shape");
      for (std::size_t p = 0; p < v.rows; ++p) check_row(v.row(p), "support patch");
    }
  }
  for (const auto& q : b.query) {
    if (q.label >= b.C) throw DimensionMismatch("bundle: query label >= C");
    if (q.global.size() != b.d) throw DimensionMismatch("bundle: query global dim");
    if (q.patches.rows != b.M || q.patches.cols != b.d)
      throw DimensionMismatch("bundle: query patch shape");
    check_row(q.global, "query global");
    for (std::size_t p = 0; p < q.patches.rows; ++p)
      check_row(q.patches.row(p), "query patch");
  }
}

std::vector<uint8_t> encode_bundle(const EpisodeBundle& b) {
  validate_bundle(b);
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, b.C);
  put_u32(out, b.d);
  put_u32(out, b.M);
  put_u32(out, b.A);
  put_u32(out, static_cast<uint32_t>(b.support.size()));
  put_u32(out, static_cast<uint32_t>(b.query.size()));
  for (std::size_t j = 0; j < b.text.rows; ++j) put_row(out, b.text.row(j));
  for (const auto& s : b.support) {
    put_u32(out, s.label);
    put_row(out, s.global);
    for (const auto& v : s.views)
      for (std::size_t p = 0; p < v.rows; ++p) put_row(out, v.row(p));
  }
  for (const auto& q : b.query) {
    put_u32(out, q.label);
    put_row(out, q.global);
    for (std::size_t p = 0; p < q.patches.rows; ++p) put_row(out, q.patches.row(p));
  }
  put_u32(out, static_cast<uint32_t>(b.metadata.size()));
  out.insert(out.end(), b.metadata.begin(), b.metadata.end());
  return out;
}

EpisodeBundle decode_bundle(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw BadMagic("CCFB: bad magic");
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw UnsupportedVersion("CCFB: version " + std::to_string(version));

  EpisodeBundle b;
  b.C = r.u32();
  b.d = r.u32();
  b.M = r.u32();
  b.A = r.u32();
  const uint32_t n_support = r.u32();
  const uint32_t n_query = r.u32();
  if (b.C == 0 || b.d == 0 || b.M == 0 || n_support == 0)
    throw DimensionMismatch("CCFB: degenerate header");

  // total length is fully determined by the header
  const std::size_t per_support = 4 + 4ull * b.d * (1 + std::size_t{b.A + 1} * b.M);
  const std::size_t per_query = 4 + 4ull * b.d * (1 + std::size_t{b.M});
  const std::size_t fixed = r.pos + 4ull * b.C * b.d +
                            per_support * n_support + per_query * n_query + 4;
  if (bytes.size() < fixed)
    throw DimensionMismatch("CCFB: truncated payload");

  b.text = Matrix(b.C, b.d);
  for (std::size_t j = 0; j < b.C; ++j) {
    read_row(r, b.text.row(j));
    settle_row(b.text.row(j), "text");
  }
  b.support.resize(n_support);
  for (auto& s : b.support) {
    s.label = r.u32();
    if (s.label >= b.C) throw DimensionMismatch("CCFB: support label >= C");
    s.global.resize(b.d);
    read_row(r, s.global);
    settle_row(s.global, "support global");
    s.views.assign(b.A + 1, Matrix(b.M, b.d));
    for (auto& v : s.views)
      for (std::size_t p = 0; p < b.M; ++p) {
        read_row(r, v.row(p));
        settle_row(v.row(p), "support patch");
      }
  }
  b.query.resize(n_query);
  for (auto& q : b.query) {
    q.label = r.u32();
    if (q.label >= b.C) throw DimensionMismatch("CCFB: query label >= C");
    q.global.resize(b.d);
    read_row(r, q.global);
    settle_row(q.global, "query global");
    q.patches = Matrix(b.M, b.d);
    for (std::size_t p = 0; p < b.M; ++p) {
      read_row(r, q.patches.row(p));
      settle_row(q.patches.row(p), "query patch");
    }
  }
  const uint32_t meta_len = r.u32();
  r.need(meta_len);
  b.metadata.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + meta_len);
  r.pos += meta_len;
  if (r.pos != bytes.size())
    throw DimensionMismatch("CCFB: trailing bytes after payload");
  return b;
}

void save_bundle(const EpisodeBundle& b, const std::string& path) {
  const auto bytes = encode_bundle(b);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoFailure("write failed: " + path);
}

EpisodeBundle load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return decode_bundle(bytes);
}

} // namespace cccdfsl
