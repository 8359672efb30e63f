#ifndef CCCDFSL_LINALG_HPP
#define CCCDFSL_LINALG_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "cccdfsl/errors.hpp"

// Deterministic dense kernels shared by every module. All arithmetic is done
// in 64-bit floats regardless of the 32-bit storage used by bundle files, and
// every selection breaks ties toward the lowest index.

namespace cccdfsl {

using Vec = std::vector<double>;

inline constexpr double kNormEps = 1e-12;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  static Matrix from_rows(const std::vector<Vec>& rows);

  bool operator==(const Matrix&) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);
bool all_finite(std::span<const double> v);

// Unit-normalizes v. Throws NearZeroNorm when ||v|| < eps.
Vec l2_normalize(std::span<const double> v, double eps = kNormEps);
void l2_normalize_in_place(std::span<double> v, double eps = kNormEps);

// out[i][j] = a_i . b_j for row-normalized inputs. Throws DimensionMismatch.
Matrix cosine_sim_matrix(const Matrix& a, const Matrix& b);

// Index of the row maximum; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);
std::vector<std::size_t> row_argmax(const Matrix& m);

// min(k, len) indices in descending value order, ties toward lower index.
std::vector<std::size_t> row_topk(std::span<const double> row, std::size_t k);

// softmax(row / tau), max-subtracted. Throws NonPositiveTemperature.
Vec softmax(std::span<const double> row, double tau);

} // namespace cccdfsl

#endif
