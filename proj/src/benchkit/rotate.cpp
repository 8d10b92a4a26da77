#include "medlasa/benchkit/rotate.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

std::vector<double> KgEmbedding::rotated(int h, int r) const {
  const auto& a = re[static_cast<std::size_t>(h)];
  const auto& b = im[static_cast<std::size_t>(h)];
  const auto& th = phase[static_cast<std::size_t>(r)];
  std::vector<double> out(2 * dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const double c = std::cos(th[j]), s = std::sin(th[j]);
    out[j] = a[j] * c - b[j] * s;
    out[dim + j] = a[j] * s + b[j] * c;
  }
  return out;
}

double KgEmbedding::distance(int h, int r, int t) const {
  const std::vector<double> hr = rotated(h, r);
  double sq = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double u = hr[j] - re[static_cast<std::size_t>(t)][j];
    const double v = hr[dim + j] - im[static_cast<std::size_t>(t)][j];
    sq += u * u + v * v;
  }
  return std::sqrt(sq);
}

std::vector<double> KgEmbedding::triple_feature(const Triple& t) const {
  std::vector<double> f = rotated(t.h, t.r);
  f.insert(f.end(), re[static_cast<std::size_t>(t.t)].begin(), re[static_cast<std::size_t>(t.t)].end());
  f.insert(f.end(), im[static_cast<std::size_t>(t.t)].begin(), im[static_cast<std::size_t>(t.t)].end());
  return f;
}

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

KgEmbedding zeros_like(const KgEmbedding& e) {
  KgEmbedding z;
  z.dim = e.dim;
  z.re.assign(e.re.size(), std::vector<double>(e.dim, 0.0));
  z.im.assign(e.im.size(), std::vector<double>(e.dim, 0.0));
  z.phase.assign(e.phase.size(), std::vector<double>(e.dim, 0.0));
  return z;
}

// Adds coeff * d distance(h, r, t) / d params into grad.
void add_distance_grad(const KgEmbedding& e, const Triple& tr, double coeff, KgEmbedding& g) {
  const double d = e.distance(tr.h, tr.r, tr.t);
  if (d == 0.0) return;
  const auto h = static_cast<std::size_t>(tr.h), r = static_cast<std::size_t>(tr.r), t = static_cast<std::size_t>(tr.t);
  for (std::size_t j = 0; j < e.dim; ++j) {
    const double a = e.re[h][j], b = e.im[h][j], c = std::cos(e.phase[r][j]), s = std::sin(e.phase[r][j]);
    const double u = a * c - b * s - e.re[t][j];
    const double v = a * s + b * c - e.im[t][j];
    const double k = coeff / d;
    g.re[h][j] += k * (u * c + v * s);
    g.im[h][j] += k * (-u * s + v * c);
    g.re[t][j] -= k * u;
    g.im[t][j] -= k * v;
    g.phase[r][j] += k * (u * (-a * s - b * c) + v * (a * c - b * s));
  }
}

}  // namespace

double rotate_pair_loss(const KgEmbedding& e, const Triple& pos, const std::vector<Triple>& negs, double margin,
                        KgEmbedding* grad) {
  const double dp = e.distance(pos.h, pos.r, pos.t);
  double loss = -log_sigmoid(margin - dp);
  if (grad) add_distance_grad(e, pos, 1.0 - sigmoid(margin - dp), *grad);
  const double w = negs.empty() ? 0.0 : 1.0 / static_cast<double>(negs.size());
  for (const Triple& n : negs) {
    const double dn = e.distance(n.h, n.r, n.t);
    loss -= w * log_sigmoid(dn - margin);
    if (grad) add_distance_grad(e, n, -w * (1.0 - sigmoid(dn - margin)), *grad);
  }
  return loss;
}

RotateResult train_rotate(const KnowledgeGraph& kg, const RotateConfig& config) {
  if (config.dim == 0) throw ContractError("RotatE dimension must be >= 1");
  if (kg.triples.empty()) throw GenerationError("RotatE needs at least one triple");
  std::mt19937_64 rng(io::derive_seed(config.seed, "rotate/init"));
  std::uniform_real_distribution<double> init(-0.5, 0.5);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  RotateResult out;
  KgEmbedding& e = out.embedding;
  e.dim = config.dim;
  for (std::size_t i = 0; i < kg.entities.size(); ++i) {
    e.re.emplace_back(config.dim);
    e.im.emplace_back(config.dim);
    for (std::size_t j = 0; j < config.dim; ++j) e.re.back()[j] = init(rng), e.im.back()[j] = init(rng);
  }
  for (std::size_t r = 0; r < kg.relations.size(); ++r) {
    e.phase.emplace_back(config.dim);
    for (double& p : e.phase.back()) p = angle(rng);
  }

  // Flattened views for Adam.
  auto params = [](KgEmbedding& x) {
    std::vector<double*> p;
    for (auto* block : {&x.re, &x.im, &x.phase})
      for (auto& row : *block)
        for (double& v : row) p.push_back(&v);
    return p;
  };
  const std::size_t n_params = params(e).size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  std::mt19937_64 neg_rng(io::derive_seed(config.seed, "rotate/negatives"));
  const auto n_ent = static_cast<int>(kg.entities.size());
  const double b1 = 0.9, b2 = 0.999;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    KgEmbedding g = zeros_like(e);
    double total = 0.0;
    for (const Triple& pos : kg.triples) {
      std::vector<Triple> negs;
      for (std::size_t k = 0; k < config.n_neg; ++k) {
        Triple n = pos;
        const int other = static_cast<int>(neg_rng() % static_cast<std::uint64_t>(n_ent));
        if (neg_rng() % 2 == 0) n.t = other;
        else n.h = other;
        negs.push_back(n);
      }
      total += rotate_pair_loss(e, pos, negs, config.margin, &g);
    }
    out.loss_curve.push_back(total / static_cast<double>(kg.triples.size()));
    const double scale = 1.0 / static_cast<double>(kg.triples.size());
    auto p = params(e), gp = params(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(epoch + 1));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(epoch + 1));
    for (std::size_t i = 0; i < n_params; ++i) {
      const double gi = *gp[i] * scale;
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      *p[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
    }
    for (auto& row : e.phase)
      for (double& th : row) th = std::remainder(th, 2 * std::numbers::pi);
  }
  return out;
}

}  // namespace medlasa
