#pragma once

#include <cstdint>
#include <vector>

#include "medlasa/benchkit/kg.hpp"

namespace medlasa {

/// Complex entity vectors (re, im) and per-relation rotation phases.
struct KgEmbedding {
  std::size_t dim = 0;                   // complex dimension m
  std::vector<std::vector<double>> re;   // entity x m
  std::vector<std::vector<double>> im;   // entity x m
  std::vector<std::vector<double>> phase;  // relation x m, in (-pi, pi]

  /// h o r, the rotated head, as 2m reals (re then im).
  std::vector<double> rotated(int h, int r) const;
  /// d(h, r, t) = || h o r - t ||.
  double distance(int h, int r, int t) const;
  /// -d(h, r, t); at most 0.
  double score(int h, int r, int t) const { return -distance(h, r, t); }
  /// concat(h o r, t): the vector compared for structural similarity.
  std::vector<double> triple_feature(const Triple& t) const;
};

struct RotateConfig {
  std::size_t dim = 16;
  std::size_t epochs = 300;
  double margin = 4.0;
  std::size_t n_neg = 8;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

struct RotateResult {
  KgEmbedding embedding;
  std::vector<double> loss_curve;  // one mean loss per epoch
};

/// Self-contained margin loss -log s(gamma - d_pos) - mean log s(d_neg - gamma)
/// with uniform tail or head corruption, full-batch Adam.
RotateResult train_rotate(const KnowledgeGraph& kg, const RotateConfig& config);

/// Loss and gradients of one positive with its negatives, exposed for checks.
/// Gradients are accumulated into the embedding-shaped `grad`.
double rotate_pair_loss(const KgEmbedding& e, const Triple& pos, const std::vector<Triple>& negs, double margin,
                        KgEmbedding* grad);

}  // namespace medlasa
