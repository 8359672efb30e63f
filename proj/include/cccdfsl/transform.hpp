#ifndef CCCDFSL_TRANSFORM_HPP
#define CCCDFSL_TRANSFORM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cccdfsl/linalg.hpp"

// Trainable state: the two-layer patch MLP and a residual adapter on the
// global feature. The adapter starts at zero so step 0 reproduces the
// frozen-encoder behavior exactly.

namespace cccdfsl {

struct ModelParams {
  uint32_t d = 0;
  uint32_t h = 0;
  Matrix W1;  // d x h
  Matrix W2;  // h x d
  Matrix Wa;  // d x d residual global adapter

  bool operator==(const ModelParams&) const = default;
};

struct GradBundle {
  Matrix dW1;
  Matrix dW2;
  Matrix dWa;
};

// W1, W2 uniform in +-sqrt(6 / (fan_in + fan_out)); Wa zero.
ModelParams init_params(uint32_t d, uint32_t h, uint64_t seed);

struct MlpResult {
  Matrix rows;                       // H x d, unit rows
  std::vector<uint8_t> pass_through; // rows whose MLP output collapsed
  std::size_t pass_through_count = 0;
};

// rows_i = normalize(relu(raw_i . W1) . W2); collapsed rows fall back to the
// (already unit) input row and are flagged.
MlpResult mlp_forward(const Matrix& raw, const ModelParams& p);

// normalize(g + g . Wa). Throws NearZeroNorm when the sum collapses.
Vec adapt_global(std::span<const double> g, const ModelParams& p);

// CCPM checkpoint format: magic, version, d, h, then W1/W2/Wa as 64-bit
// little-endian floats row-major.
std::vector<uint8_t> encode_params(const ModelParams& p);
ModelParams decode_params(const std::vector<uint8_t>& bytes);
void save_params(const ModelParams& p, const std::string& path);
ModelParams load_params(const std::string& path);

} // namespace cccdfsl

#endif
