#pragma once

// Randomised micro-network used to check tape gradients against central
// differences. Each seed picks dimensions and one of several op mixes.

#include <random>
#include <vector>

#include "medlasa/numerics/autodiff.hpp"
#include "support/oracles.hpp"

namespace gradcheck {

struct MicroNet {
  std::size_t rows, in, hidden, heads, classes;
  int variant;
  std::vector<int> targets;
  std::vector<std::size_t> gather_ids;
  std::vector<medlasa::ad::Segment> segments;
};

inline MicroNet make_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MicroNet n;
  n.rows = 2 + rng() % 4;
  n.in = 2 + rng() % 4;
  n.heads = 1 + rng() % 2;
  n.hidden = n.heads * (1 + rng() % 3);
  n.classes = 2 + rng() % 4;
  n.variant = static_cast<int>(rng() % 3);
  for (std::size_t r = 0; r < n.rows; ++r) {
    n.targets.push_back(r == 0 && n.rows > 2 ? -1 : static_cast<int>(rng() % n.classes));
    n.gather_ids.push_back(rng() % n.rows);
  }
  const std::size_t split = 1 + rng() % (n.rows - 1);
  n.segments = {{0, split}, {split, n.rows - split}};
  return n;
}

/// Parameters in order: x (rows x in), w1 (hidden x in), gain (1 x hidden),
/// wq/wk/wv (hidden x hidden), w2 (classes x hidden).
inline std::vector<medlasa::Matrix> make_inputs(const MicroNet& n, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5151);
  return {oracle::random_matrix(n.rows, n.in, rng),          oracle::random_matrix(n.hidden, n.in, rng),
          oracle::random_matrix(1, n.hidden, rng, 0.5, 1.5), oracle::random_matrix(n.hidden, n.hidden, rng),
          oracle::random_matrix(n.hidden, n.hidden, rng),    oracle::random_matrix(n.hidden, n.hidden, rng),
          oracle::random_matrix(n.classes, n.hidden, rng)};
}

inline medlasa::ad::Var build(const MicroNet& n, const std::vector<medlasa::ad::Var>& p) {
  using namespace medlasa::ad;
  Var h = matmul_nt(p[0], p[1]);
  h = rmsnorm_rows(h, p[2], 1e-6);
  if (n.variant == 0) {
    h = mul(silu(h), sigmoid(matmul_nt(h, p[3])));
  } else {
    Var q = matmul_nt(h, p[3]);
    Var k = matmul_nt(h, p[4]);
    Var v = matmul_nt(h, p[5]);
    h = add(h, causal_attention(q, k, v, n.segments, n.heads));
  }
  if (n.variant == 2) h = gather_rows(h, n.gather_ids);
  Var logits = matmul_nt(h, p[6]);
  if (n.variant == 1) return add(cross_entropy(logits, n.targets), scale(sum_squares(p[1]), 0.1));
  return add(cross_entropy(logits, n.targets), sum(scale(logits, 0.01)));
}

inline double evaluate(const MicroNet& n, const std::vector<medlasa::Matrix>& inputs) {
  medlasa::ad::Tape tape(false);
  std::vector<medlasa::ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  return build(n, vars).value()(0, 0);
}

/// Largest relative error between tape and central-difference gradients over
/// every parameter entry of the net for this seed.
inline double max_error(std::uint64_t seed, double step = 1e-4) {
  MicroNet n = make_net(seed);
  std::vector<medlasa::Matrix> inputs = make_inputs(n, seed);
  medlasa::ad::Tape tape;
  std::vector<medlasa::ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.parameter(m));
  medlasa::ad::Gradients g = tape.backward(build(n, vars));
  double worst = 0.0;
  auto f = [&n](const std::vector<medlasa::Matrix>& in) { return evaluate(n, in); };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const medlasa::Matrix* analytic = g.find(vars[i]);
    medlasa::Matrix numeric = oracle::central_difference(f, inputs, i, step);
    medlasa::Matrix zero(numeric.rows(), numeric.cols());
    worst = std::max(worst, oracle::max_relative_error(analytic ? *analytic : zero, numeric));
  }
  return worst;
}

}  // namespace gradcheck
