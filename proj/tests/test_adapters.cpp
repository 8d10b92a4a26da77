#include <doctest.h>

#include <filesystem>
#include <random>

#include "medlasa/adapters/lowrank.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/model/checkpoint.hpp"
#include "support/models.hpp"
#include "support/oracles.hpp"

using namespace medlasa;
using fixture::lively_model;

namespace {

const std::vector<std::vector<int>> kBattery{{0, 4, 5, 6}, {0, 1}, {0, 11, 10, 9, 8, 7, 3}, {0, 2, 2, 2}};

SiteScales fixed_scales(std::size_t L, double alpha = 24, std::size_t r = 4) {
  ScaleContext ctx{L, alpha, r, 0, nullptr, {}};
  return uniform_scales(strategy_scales(Strategy::fixed, ctx));
}

void randomize_b(AdaptedModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (AdapterSite& s : m.sites()) s.B = oracle::random_matrix(s.B.rows(), s.B.cols(), rng, -0.3, 0.3);
}

}  // namespace

TEST_CASE("weight selection parsing and presets") {
  CHECK(WeightSelection::parse("W_q, W_v").weights() == std::vector<Weight>{Weight::q, Weight::v});
  CHECK(WeightSelection::parse("all") == WeightSelection::all());
  CHECK(WeightSelection::parse("mlp").label() == "W_gate,W_up,W_down");
  CHECK(weight_presets().size() == 5);
  CHECK_THROWS_AS(WeightSelection::parse("W_q,W_z"), ContractError);
  CHECK_THROWS_AS(WeightSelection::parse(""), ContractError);
}

TEST_CASE("hand-evaluated site output") {
  AdapterSite s{0, Weight::q, Matrix::from_rows({{1}, {0}}), Matrix::from_rows({{0, 1}}), 2.0, 1};
  const std::vector<double> x{1, 2};
  const std::vector<double> w0x{1, 2};  // W_0 = I
  CHECK(site_output(s, w0x, x) == std::vector<double>{5, 2});
  s.alpha = 0.0;
  CHECK(site_output(s, w0x, x) == w0x);
  CHECK_THROWS_AS(site_output(s, w0x, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("alpha linearity of the site output") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    AdapterSite s{0, Weight::up, oracle::random_matrix(5, 3, rng, -1, 1), oracle::random_matrix(3, 4, rng, -1, 1),
                  0.0, 3};
    const Matrix xm = oracle::random_matrix(1, 4, rng, -1, 1), w = oracle::random_matrix(1, 5, rng, -1, 1);
    const std::vector<double> x(xm.values().begin(), xm.values().end());
    const std::vector<double> w0(w.values().begin(), w.values().end());
    s.alpha = 0.0;
    const auto o0 = site_output(s, w0, x);
    s.alpha = 1.7 + trial;
    const auto o1 = site_output(s, w0, x);
    s.alpha *= 2.0;
    const auto o2 = site_output(s, w0, x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs((o2[i] - o0[i]) - 2.0 * (o1[i] - o0[i])) < 1e-12);
  }
}

TEST_CASE("zero-init attach is the identity") {
  MicroTransformer base = lively_model(3);
  AdaptedModel a = attach(base, WeightSelection::all(), fixed_scales(3), 7);
  CHECK(a.sites().size() == 21);
  for (const auto& seq : kBattery) CHECK(forward(a, seq).logits == forward(base, seq).logits);
  CHECK(a.merge() == base);
  CHECK(a.detach() == base);
}

TEST_CASE("zero ranks give no sites") {
  MicroTransformer base = lively_model(2);
  SiteScales s = fixed_scales(2);
  s.attn.rank = {0, 0};
  s.mlp.rank = {0, 0};
  AdaptedModel a = attach(base, WeightSelection::all(), s, 1);
  CHECK(a.sites().empty());
  CHECK(a.parameter_count() == 0);
  CHECK(a.merge() == base);
}

TEST_CASE("sites follow selection and ranks; parameter count closed form") {
  MicroTransformer base = lively_model(3);
  SiteScales s = fixed_scales(3);
  s.attn.rank = {0, 2, 5};
  s.mlp.rank = {3, 0, 1};
  const WeightSelection sel = WeightSelection::parse("W_q,W_o,W_up,W_down");
  AdaptedModel a = attach(base, sel, s, 1);
  std::size_t expected = 0, count = 0;
  for (std::size_t l = 0; l < 3; ++l)
    for (Weight w : kAllWeights) {
      const std::size_t r = is_attention_weight(w) ? s.attn.rank[l] : s.mlp.rank[l];
      const bool exists = sel.contains(w) && r >= 1;
      CHECK((a.find(l, w) >= 0) == exists);
      if (!exists) continue;
      ++count;
      const Matrix& host = base.layers[l].weight(w);
      expected += r * (host.rows() + host.cols());
      const AdapterSite& site = a.sites()[static_cast<std::size_t>(a.find(l, w))];
      CHECK(site.B.rows() == host.rows());
      CHECK(site.A.cols() == host.cols());
      CHECK(site.rank == r);
    }
  CHECK(a.sites().size() == count);
  CHECK(a.parameter_count() == expected);

  SiteScales short_scales = s;
  short_scales.mlp.alpha.pop_back();
  CHECK_THROWS_AS(attach(base, sel, short_scales, 1), ContractError);
}

TEST_CASE("alpha linearity through the forward graph at every site") {
  MicroTransformer base = lively_model(2);
  AdaptedModel a = attach(base, WeightSelection::all(), fixed_scales(2, 3.25, 2), 5);
  randomize_b(a, 9);
  AdaptedModel doubled = a;
  for (AdapterSite& s : doubled.sites()) s.alpha *= 2.0;
  ad::Tape tape(false);
  std::mt19937_64 rng(1);
  AdapterDelta d1(a), d2(doubled);
  for (const AdapterSite& s : a.sites()) {
    const Matrix& host = base.layers[s.layer].weight(s.weight);
    ad::Var x = tape.constant(oracle::random_matrix(4, host.cols(), rng, -1, 1));
    const Matrix one = d1.contribution(s.layer, s.weight, x).value();
    const Matrix two = d2.contribution(s.layer, s.weight, x).value();
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(two.values()[i] == 2.0 * one.values()[i]);
  }
  CHECK(d1.contribution(0, Weight::q, tape.constant(Matrix(1, 8))).valid());
}

TEST_CASE("merge matches the unmerged adapters") {
  MicroTransformer base = lively_model(3);
  SiteScales s = fixed_scales(3);
  s.attn.alpha = {1.5, 6, 24};
  AdaptedModel a = attach(base, WeightSelection::all(), s, 2);
  randomize_b(a, 4);
  const MicroTransformer merged = a.merge();
  for (const auto& seq : kBattery)
    CHECK(max_abs_diff(forward(merged, seq).logits, forward(a, seq).logits) < 1e-10);
  CHECK(a.base() == base);
  CHECK(a.merge() == merged);
  CHECK(a.detach() == base);
}

TEST_CASE("adapter gradients match finite differences") {
  MicroTransformer base = lively_model(2);
  AdaptedModel a = attach(base, WeightSelection::parse("W_v,W_up"), fixed_scales(2, 2, 2), 3);
  randomize_b(a, 5);
  const std::vector<int> seq{0, 4, 5, 6, 7};
  ad::Tape tape;
  AdapterDelta delta(a, tape);
  ParameterVars params = bind_parameters(tape, base, false);
  RunArgs args;
  args.delta = &delta;
  std::vector<std::vector<int>> seqs{seq};
  std::vector<int> targets{-1, -1, 6, 7, -1};
  ad::Var loss = ad::cross_entropy(build_logits(base, params, seqs, args, nullptr), targets);
  const ad::Gradients grads = tape.backward(loss);
  auto mats = a.trainable();
  for (std::size_t k = 0; k < mats.size(); ++k) {
    const Matrix& g = grads.at(delta.leaves()[k]);
    Matrix* m = mats[k];
    for (std::size_t i = 0; i < m->size(); i += 3) {
      const double keep = m->values()[i];
      auto eval = [&](double v) {
        m->values()[i] = v;
        ad::Tape t2(false);
        AdapterDelta d2(a);
        ParameterVars p2 = bind_parameters(t2, base, false);
        RunArgs a2;
        a2.delta = &d2;
        return ad::cross_entropy(build_logits(base, p2, seqs, a2, nullptr), targets).value()(0, 0);
      };
      const double numeric = (eval(keep + 1e-4) - eval(keep - 1e-4)) / 2e-4;
      m->values()[i] = keep;
      CHECK(std::abs(g.values()[i] - numeric) / std::max(std::abs(g.values()[i]) + std::abs(numeric), 1e-6) < 1e-4);
    }
  }
}

TEST_CASE("training adapters leaves the base frozen and detach restores it") {
  MicroTransformer base = lively_model(2);
  const MicroTransformer snapshot = base;
  std::vector<Matrix> before;
  for (const auto& seq : kBattery) before.push_back(forward(base, seq).logits);

  AdaptedModel a = attach(base, WeightSelection::all(), fixed_scales(2), 11);
  const std::vector<int> seq{0, 4, 5, 9};
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 15; ++step) {
    ad::Tape tape;
    AdapterDelta delta(a, tape);
    ParameterVars params = bind_parameters(tape, a.base(), true);  // base leaves receive gradients but are never applied
    RunArgs args;
    args.delta = &delta;
    std::vector<std::vector<int>> seqs{seq};
    ad::Var loss = ad::cross_entropy(build_logits(a.base(), params, seqs, args, nullptr), {-1, -1, 9, -1});
    if (step == 0) first = loss.value()(0, 0);
    last = loss.value()(0, 0);
    const ad::Gradients g = tape.backward(loss);
    auto mats = a.trainable();
    for (std::size_t k = 0; k < mats.size(); ++k) {
      const Matrix& gk = g.at(delta.leaves()[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) mats[k]->values()[i] -= 0.05 * gk.values()[i];
    }
  }
  CHECK(last < first);
  CHECK(a.base() == snapshot);
  CHECK(forward(a, kBattery[0]).logits != before[0]);
  const MicroTransformer restored = a.detach();
  for (std::size_t k = 0; k < kBattery.size(); ++k) CHECK(forward(restored, kBattery[k]).logits == before[k]);
}

TEST_CASE("adapter checkpoint round trip") {
  MicroTransformer base = lively_model(3);
  SiteScales s = fixed_scales(3);
  s.mlp.rank = {1, 0, 3};
  s.mlp.strategy = Strategy::medlasa;
  AdaptedModel a = attach(base, WeightSelection::parse("qv+mlp"), s, 8);
  randomize_b(a, 12);
  const auto path = std::filesystem::temp_directory_path() / "medlasa_adapters_test.ckpt";
  save_adapters(a, path);
  const AdaptedModel back = load_adapters(base, path);
  CHECK(back.selection() == a.selection());
  CHECK(back.scales() == a.scales());
  REQUIRE(back.sites().size() == a.sites().size());
  for (std::size_t i = 0; i < a.sites().size(); ++i) {
    CHECK(back.sites()[i].B == a.sites()[i].B);
    CHECK(back.sites()[i].A == a.sites()[i].A);
    CHECK(back.sites()[i].alpha == a.sites()[i].alpha);
  }
  CHECK(forward(back, kBattery[2]).logits == forward(a, kBattery[2]).logits);
  CHECK_THROWS_AS(load_adapters(lively_model(2), path), FormatError);
  save_checkpoint(base, path);
  CHECK_THROWS_AS(load_adapters(base, path), FormatError);
  std::filesystem::remove(path);
}
