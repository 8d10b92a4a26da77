#pragma once

#include <span>
#include <vector>

#include "medlasa/numerics/matrix.hpp"

namespace medlasa {

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

/// y_i = gamma_i * x_i / sqrt(mean(x^2) + eps). Throws ContractError when the
/// denominator is zero (zero vector with eps = 0).
std::vector<double> rmsnorm(std::span<const double> x, std::span<const double> gamma, double eps);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace medlasa
