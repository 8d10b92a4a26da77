#include "medlasa/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

#include "medlasa/errors.hpp"

namespace medlasa {

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

std::vector<double> rmsnorm(std::span<const double> x, std::span<const double> gamma, double eps) {
  if (x.size() != gamma.size()) throw ShapeError("rmsnorm: x and gamma lengths differ");
  if (x.empty()) throw ShapeError("rmsnorm: empty input");
  if (eps < 0.0) throw ContractError("rmsnorm: eps must be non-negative");
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double denom = std::sqrt(sq / static_cast<double>(x.size()) + eps);
  if (denom == 0.0) throw ContractError("rmsnorm: zero vector with eps = 0");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gamma[i] * x[i] / denom;
  return y;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace medlasa
