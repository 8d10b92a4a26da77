#include <doctest.h>

#include <cmath>
#include <vector>

#include "medlasa/editing/training.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/numerics/ops.hpp"
#include "support/models.hpp"

using namespace medlasa;

namespace {

std::vector<TokenizedFact> toy_facts() {
  std::vector<TokenizedFact> facts;
  for (int i = 0; i < 6; ++i) facts.push_back({{kBosToken, 2 + i, 8}, {9 + i % 3}});
  return facts;
}

PretrainConfig toy_train() {
  PretrainConfig t;
  t.batch_size = 6;
  t.lr = 2e-2;
  t.eval_every = 5;
  t.max_epochs = 400;
  t.seed = 3;
  return t;
}

const PretrainResult& toy_base() {
  static const PretrainResult r = [] {
    const auto facts = toy_facts();
    return pretrain_base(facts, fixture::small_config(), toy_train());
  }();
  return r;
}

int greedy_next(const MicroTransformer& m, const std::vector<int>& prompt, const WeightDelta* delta = nullptr) {
  RunArgs args;
  args.delta = delta;
  const Matrix logits = forward(m, prompt, args).logits;
  return static_cast<int>(argmax(logits.row(logits.rows() - 1)));
}

SiteScales flat_scales(std::size_t layers, double alpha, std::size_t rank) {
  ScaleSet s;
  s.alpha.assign(layers, alpha);
  s.rank.assign(layers, rank);
  s.strategy = Strategy::fixed;
  return uniform_scales(s);
}

}  // namespace

TEST_CASE("adam first step moves every coordinate by lr against the gradient sign") {
  Matrix p = Matrix::from_rows({{1.0, -2.0, 0.5}});
  Matrix g = Matrix::from_rows({{3.0, -0.25, 1e-3}});
  Adam adam(0.1, 0.9, 0.999, 0.0);
  Matrix* params[] = {&p};
  const Matrix* grads[] = {&g};
  adam.step(params, grads);
  CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(-1.9).epsilon(1e-12));
  CHECK(p(0, 2) == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("adam minimises a quadratic and skips parameters without gradients") {
  Matrix p = Matrix::from_rows({{4.0, -3.0}});
  Matrix frozen = Matrix::from_rows({{7.0}});
  Adam adam(0.05);
  for (int i = 0; i < 2000; ++i) {
    Matrix g(1, 2);
    g(0, 0) = 2.0 * (p(0, 0) - 1.0);
    g(0, 1) = 2.0 * (p(0, 1) + 2.0);
    Matrix* params[] = {&p, &frozen};
    const Matrix* grads[] = {&g, nullptr};
    adam.step(params, grads);
  }
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p(0, 1) == doctest::Approx(-2.0).epsilon(1e-3));
  CHECK(frozen(0, 0) == 7.0);
  CHECK_THROWS_AS(Adam(0.0), ContractError);
}

TEST_CASE("pretraining memorises a toy fact set deterministically") {
  const PretrainResult& r = toy_base();
  CHECK(r.accuracy >= 0.99);
  CHECK(r.loss_curve.size() == r.epochs);
  CHECK(r.loss_curve.back() < r.loss_curve.front());
  const auto facts = toy_facts();
  for (const auto& f : facts) CHECK(greedy_next(r.model, f.prompt) == f.answer[0]);
  const PretrainResult again = pretrain_base(facts, fixture::small_config(), toy_train());
  CHECK(again.model == r.model);
  CHECK(again.loss_curve == r.loss_curve);
}

TEST_CASE("pretraining reports failures as training errors") {
  const auto facts = toy_facts();
  PretrainConfig t = toy_train();
  t.max_epochs = 1;
  t.eval_every = 1;
  t.target_accuracy = 1.0;
  try {
    pretrain_base(facts, fixture::small_config(), t);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.final_accuracy() < 1.0);
  }
  std::vector<TokenizedFact> too_long{{std::vector<int>(16, 2), {3}}};
  CHECK_THROWS_AS(pretrain_base(too_long, fixture::small_config(), t), ContractError);
  CHECK_THROWS_AS(pretrain_base({}, fixture::small_config(), t), ContractError);
}

TEST_CASE("an edit whose target is already below the loss threshold takes no step") {
  const MicroTransformer& base = toy_base().model;
  const auto facts = toy_facts();
  EditTrainConfig train;
  train.target_nll = 10.0;
  const EditOutcome out = apply_edit(base, facts[0].prompt, facts[0].answer, WeightSelection::all(),
                                     flat_scales(2, 4.0, 2), train);
  CHECK(out.steps == 0);
  CHECK(out.loss_curve.size() == 1);
  AdapterDelta delta(out.adapted);
  CHECK(forward(base, facts[0].prompt).logits == forward(out.adapted, facts[0].prompt).logits);
}

TEST_CASE("a counterfactual edit reaches its target and leaves the base untouched") {
  const MicroTransformer& base = toy_base().model;
  const MicroTransformer snapshot = base;
  const auto facts = toy_facts();
  const std::vector<int> target{facts[0].answer[0] == 9 ? 10 : 9};
  EditTrainConfig train;
  train.lr = 1e-2;
  train.seed = 11;
  const EditOutcome out =
      apply_edit(base, facts[0].prompt, target, WeightSelection::all(), flat_scales(2, 8.0, 4), train);
  CHECK(out.steps >= 1);
  CHECK(out.loss_curve.back() < out.loss_curve.front());
  CHECK(out.steps <= train.max_steps);
  CHECK(out.loss_curve.size() == out.steps + 1);
  AdapterDelta delta(out.adapted);
  CHECK(greedy_next(base, facts[0].prompt, &delta) == target[0]);
  CHECK(base == snapshot);
  CHECK(out.adapted.detach() == snapshot);

  const EditOutcome again =
      apply_edit(base, facts[0].prompt, target, WeightSelection::all(), flat_scales(2, 8.0, 4), train);
  CHECK(again.loss_curve == out.loss_curve);

  const nlohmann::json log = edit_log_entry("cf-000", ScaleRequest{Strategy::fixed, 8.0, 4, 11}, out, 11);
  CHECK(log.at("record_id") == "cf-000");
  CHECK(log.at("strategy") == "fixed");
  CHECK(log.at("steps") == out.steps);
  CHECK(log.at("loss_curve").size() == out.loss_curve.size());
  CHECK(log.at("trainable_parameters") == out.adapted.parameter_count());
}

TEST_CASE("edits reject malformed inputs") {
  const MicroTransformer& base = toy_base().model;
  const std::vector<int> prompt{0, 2, 8};
  CHECK_THROWS_AS(apply_edit(base, {}, std::vector<int>{9}, WeightSelection::all(), flat_scales(2, 1, 1), {}),
                  ContractError);
  CHECK_THROWS_AS(apply_edit(base, prompt, {}, WeightSelection::all(), flat_scales(2, 1, 1), {}), ContractError);
  CHECK_THROWS_AS(apply_edit(base, std::vector<int>{0, 99}, std::vector<int>{9}, WeightSelection::all(),
                             flat_scales(2, 1, 1), {}),
                  VocabError);
}

TEST_CASE("resolve_scales routes strategies to per-module scale sets") {
  TraceContext none;
  const SiteScales fixed = resolve_scales({Strategy::fixed, 24.0, 8, 0}, 4, none);
  CHECK(fixed.attn.alpha == std::vector<double>(4, 24.0));
  CHECK(fixed.mlp.rank == std::vector<std::size_t>(4, 8));
  const SiteScales r1 = resolve_scales({Strategy::random, 24.0, 8, 5}, 4, none);
  const SiteScales r2 = resolve_scales({Strategy::random, 24.0, 8, 5}, 4, none);
  CHECK(r1.attn.alpha == r2.attn.alpha);
  CHECK(r1.attn.alpha != r1.mlp.alpha);
  none.full = true;
  const SiteScales rf = resolve_scales({Strategy::random, 24.0, 8, 5}, 4, none);
  CHECK(rf.attn.alpha == rf.mlp.alpha);
  CHECK_THROWS_AS(resolve_scales({Strategy::medlasa, 24.0, 8, 0}, 4, none), ContractError);
}
