#pragma once

// Independent reference computations used by the test suites. Nothing here
// calls into the kernels or the tape it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "medlasa/numerics/matrix.hpp"

namespace oracle {

inline medlasa::Matrix triple_loop(const medlasa::Matrix& a, const medlasa::Matrix& b) {
  medlasa::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

inline medlasa::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  medlasa::Matrix m(r, c);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

/// Central finite differences of f with respect to every entry of inputs[which].
inline medlasa::Matrix central_difference(const std::function<double(const std::vector<medlasa::Matrix>&)>& f,
                                          std::vector<medlasa::Matrix> inputs, std::size_t which,
                                          double step = 1e-4) {
  medlasa::Matrix grad(inputs[which].rows(), inputs[which].cols());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double saved = inputs[which].data()[i];
    inputs[which].data()[i] = saved + step;
    const double up = f(inputs);
    inputs[which].data()[i] = saved - step;
    const double down = f(inputs);
    inputs[which].data()[i] = saved;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// max_i |a_i - n_i| / max(|a_i| + |n_i|, floor)
inline double max_relative_error(const medlasa::Matrix& analytic, const medlasa::Matrix& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(a) + std::abs(n), floor));
  }
  return worst;
}

/// Bigram/trigram entropy by explicit counting over a token list.
inline double ngram_entropy(const std::vector<int>& tokens, std::size_t n) {
  std::vector<std::vector<int>> grams;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    grams.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
  std::sort(grams.begin(), grams.end());
  double h = 0.0;
  std::size_t i = 0;
  while (i < grams.size()) {
    std::size_t j = i;
    while (j < grams.size() && grams[j] == grams[i]) ++j;
    const double f = static_cast<double>(j - i) / static_cast<double>(grams.size());
    h -= f * std::log2(f);
    i = j;
  }
  return h;
}

}  // namespace oracle
