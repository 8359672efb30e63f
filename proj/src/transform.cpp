#include "cccdfsl/transform.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cccdfsl/detail/ops.hpp"
#include "cccdfsl/rng.hpp"

namespace cccdfsl {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'P', 'M'};
constexpr uint32_t kVersion = 1;

void fill_glorot(Matrix& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w.data) x = rng.uniform(-bound, bound);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>(v >> s));
}

void put_f64(std::vector<uint8_t>& out, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int s = 0; s < 64; s += 8) out.push_back(static_cast<uint8_t>(bits >> s));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw DimensionMismatch("CCPM: truncated payload");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= static_cast<uint32_t>(bytes[pos++]) << s;
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int s = 0; s < 64; s += 8) v |= static_cast<uint64_t>(bytes[pos++]) << s;
    return std::bit_cast<double>(v);
  }
};

} // namespace

ModelParams init_params(uint32_t d, uint32_t h, uint64_t seed) {
  ModelParams p;
  p.d = d;
  p.h = h;
  p.W1 = Matrix(d, h);
  p.W2 = Matrix(h, d);
  p.Wa = Matrix(d, d);
  Rng rng(seed);
  fill_glorot(p.W1, d, h, rng);
  fill_glorot(p.W2, h, d, rng);
  return p;
}

MlpResult detail::mlp_forward_full(const Matrix& raw, const ModelParams& p,
                                   Matrix& hidden, Vec& z_norm) {
  if (raw.cols != p.d)
    throw DimensionMismatch("mlp_forward: corpus dim " + std::to_string(raw.cols) +
                            " vs params d " + std::to_string(p.d));
  MlpResult out;
  out.rows = Matrix(raw.rows, p.d);
  out.pass_through.assign(raw.rows, 0);
  hidden = Matrix(raw.rows, p.h);
  z_norm.assign(raw.rows, 0.0);

  Vec z(p.d);
  for (std::size_t r = 0; r < raw.rows; ++r) {
    const auto x = raw.row(r);
    auto hid = hidden.row(r);
    for (uint32_t a = 0; a < p.h; ++a) {
      double s = 0.0;
      for (uint32_t i = 0; i < p.d; ++i) s += x[i] * p.W1.at(i, a);
      hid[a] = s > 0.0 ? s : 0.0;
    }
    for (uint32_t i = 0; i < p.d; ++i) {
      double s = 0.0;
      for (uint32_t a = 0; a < p.h; ++a) s += hid[a] * p.W2.at(a, i);
      z[i] = s;
    }
    const double n = norm2(z);
    z_norm[r] = n;
    auto dst = out.rows.row(r);
    if (n < kNormEps) {
      std::copy(x.begin(), x.end(), dst.begin());
      out.pass_through[r] = 1;
      ++out.pass_through_count;
    } else {
      for (uint32_t i = 0; i < p.d; ++i) dst[i] = z[i] / n;
    }
  }
  return out;
}

MlpResult mlp_forward(const Matrix& raw, const ModelParams& p) {
  Matrix hidden;
  Vec z_norm;
  return detail::mlp_forward_full(raw, p, hidden, z_norm);
}

Vec detail::adapt_global_full(std::span<const double> g, const ModelParams& p,
                              Vec& pre_norm, double& norm_out) {
  if (g.size() != p.d) throw DimensionMismatch("adapt_global: dim mismatch");
  pre_norm.assign(g.begin(), g.end());
  for (uint32_t k = 0; k < p.d; ++k) {
    double s = 0.0;
    for (uint32_t i = 0; i < p.d; ++i) s += g[i] * p.Wa.at(i, k);
    pre_norm[k] += s;
  }
  norm_out = norm2(pre_norm);
  if (norm_out < kNormEps)
    throw NearZeroNorm("adapt_global: adapted global collapsed");
  Vec u(pre_norm.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = pre_norm[i] / norm_out;
  return u;
}

Vec adapt_global(std::span<const double> g, const ModelParams& p) {
  Vec pre;
  double n = 0.0;
  return detail::adapt_global_full(g, p, pre, n);
}

std::vector<uint8_t> encode_params(const ModelParams& p) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, p.d);
  put_u32(out, p.h);
  for (double x : p.W1.data) put_f64(out, x);
  for (double x : p.W2.data) put_f64(out, x);
  for (double x : p.Wa.data) put_f64(out, x);
  return out;
}

ModelParams decode_params(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagic("CCPM: bad magic");
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw UnsupportedVersion("CCPM: version " + std::to_string(version));
  ModelParams p;
  p.d = r.u32();
  p.h = r.u32();
  if (p.d == 0 || p.h == 0) throw DimensionMismatch("CCPM: zero dims");
  p.W1 = Matrix(p.d, p.h);
  p.W2 = Matrix(p.h, p.d);
  p.Wa = Matrix(p.d, p.d);
  for (auto& x : p.W1.data) x = r.f64();
  for (auto& x : p.W2.data) x = r.f64();
  for (auto& x : p.Wa.data) x = r.f64();
  if (r.pos != bytes.size()) throw DimensionMismatch("CCPM: trailing bytes");
  for (const auto* m : {&p.W1, &p.W2, &p.Wa})
    if (!all_finite(m->data)) throw NonFiniteValue("CCPM: non-finite weight");
  return p;
}

void save_params(const ModelParams& p, const std::string& path) {
  const auto bytes = encode_params(p);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoFailure("write failed: " + path);
}

ModelParams load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open for read: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

} // namespace cccdfsl
