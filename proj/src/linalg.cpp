#include "cccdfsl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cccdfsl {

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols)
      throw DimensionMismatch("from_rows: ragged row " + std::to_string(r));
    std::copy(rows[r].begin(), rows[r].end(), m.data.begin() + r * m.cols);
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Vec l2_normalize(std::span<const double> v, double eps) {
  Vec out(v.begin(), v.end());
  l2_normalize_in_place(out, eps);
  return out;
}

void l2_normalize_in_place(std::span<double> v, double eps) {
  const double n = norm2(v);
  if (n < eps)
    throw NearZeroNorm("l2_normalize: norm " + std::to_string(n) + " < eps");
  for (double& x : v) x /= n;
}

Matrix cosine_sim_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw DimensionMismatch("cosine_sim_matrix: dim " + std::to_string(a.cols) +
                            " vs " + std::to_string(b.cols));
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows; ++j)
      out.at(i, j) = dot(ai, b.row(j));
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionMismatch("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<std::size_t> row_argmax(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0)
    throw DimensionMismatch("row_argmax: empty matrix");
  std::vector<std::size_t> out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = argmax(m.row(r));
  return out;
}

std::vector<std::size_t> row_topk(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t n = std::min(k, row.size());
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return a < b;
                    });
  idx.resize(n);
  return idx;
}

Vec softmax(std::span<const double> row, double tau) {
  if (!(tau > 0.0))
    throw NonPositiveTemperature("softmax: tau = " + std::to_string(tau));
  if (row.empty()) throw DimensionMismatch("softmax: empty input");
  const double m = *std::max_element(row.begin(), row.end());
  Vec out(row.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp((row[i] - m) / tau);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

} // namespace cccdfsl
