#include "medlasa/editing/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "medlasa/errors.hpp"
#include "medlasa/numerics/ops.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ContractError("learning rate must be > 0");
}

void Adam::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
  if (params.size() != grads.size()) throw ContractError("Adam: one gradient per parameter");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k] == nullptr) continue;
    auto p = params[k]->values();
    auto g = grads[k]->values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    if (g.size() != p.size()) throw ShapeError("Adam: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

namespace {

std::vector<int> fact_sequence(const TokenizedFact& f) {
  if (f.prompt.empty() || f.answer.empty()) throw ContractError("fact needs a prompt and an answer");
  std::vector<int> seq = f.prompt;
  seq.insert(seq.end(), f.answer.begin(), f.answer.end() - 1);
  return seq;
}

// Full next-token targets of a sequence that ends with the complete answer.
void append_lm_targets(const TokenizedFact& f, std::vector<std::vector<int>>& seqs, std::vector<int>& targets) {
  std::vector<int> seq = f.prompt;
  seq.insert(seq.end(), f.answer.begin(), f.answer.end());
  for (std::size_t i = 1; i < seq.size(); ++i) targets.push_back(seq[i]);
  targets.push_back(-1);
  seqs.push_back(std::move(seq));
}

}  // namespace

double fact_accuracy(const MicroTransformer& model, std::span<const TokenizedFact> facts) {
  if (facts.empty()) throw ContractError("fact_accuracy: no facts");
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < facts.size(); start += kChunk) {
    const std::size_t end = std::min(facts.size(), start + kChunk);
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = start; i < end; ++i) seqs.push_back(fact_sequence(facts[i]));
    ad::Tape tape(false);
    const ParameterVars params = bind_parameters(tape, model, false);
    const Matrix logits = build_logits(model, params, seqs, {}, nullptr).value();
    std::size_t offset = 0;
    for (std::size_t i = start; i < end; ++i) {
      const TokenizedFact& f = facts[i];
      bool ok = true;
      for (std::size_t s = 0; s < f.answer.size() && ok; ++s)
        ok = static_cast<int>(argmax(logits.row(offset + f.prompt.size() - 1 + s))) == f.answer[s];
      correct += ok;
      offset += seqs[i - start].size();
    }
  }
  return static_cast<double>(correct) / static_cast<double>(facts.size());
}

PretrainResult pretrain_base(std::span<const TokenizedFact> corpus, const ModelConfig& config,
                             const PretrainConfig& train, const std::function<void(std::size_t, double)>& progress) {
  if (corpus.empty()) throw ContractError("pretraining corpus is empty");
  if (train.batch_size == 0 || train.max_epochs == 0) throw ContractError("batch size and epochs must be >= 1");
  for (const TokenizedFact& f : corpus)
    if (f.prompt.size() + f.answer.size() > config.max_seq)
      throw ContractError("corpus sequence longer than the model's max_seq");
  PretrainResult out{MicroTransformer::initialized(config), 0, 0.0, {}};
  MicroTransformer& model = out.model;
  std::vector<Matrix*> params;
  for (auto& [name, m] : model.named_parameters()) params.push_back(m);
  Adam adam(train.lr);
  std::mt19937_64 rng(io::derive_seed(train.seed, "pretrain/order"));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= train.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
      std::vector<std::vector<int>> seqs;
      std::vector<int> targets;
      for (std::size_t i = start; i < std::min(order.size(), start + train.batch_size); ++i)
        append_lm_targets(corpus[order[i]], seqs, targets);
      ad::Tape tape;
      const ParameterVars vars = bind_parameters(tape, model, true);
      ad::Var loss = ad::cross_entropy(build_logits(model, vars, seqs, {}, nullptr), std::move(targets));
      total += loss.value()(0, 0);
      ++batches;
      const ad::Gradients grads = tape.backward(loss);
      std::vector<const Matrix*> g;
      for (const ad::Var& v : vars.flat()) g.push_back(grads.find(v));
      adam.step(params, g);
    }
    out.loss_curve.push_back(total / static_cast<double>(batches));
    out.epochs = epoch;
    if (progress) progress(epoch, out.loss_curve.back());
    if (epoch % train.eval_every == 0 || epoch == train.max_epochs) {
      out.accuracy = fact_accuracy(model, corpus);
      if (out.accuracy >= train.target_accuracy) return out;
    }
  }
  throw TrainingError("pretraining reached fact accuracy " + std::to_string(out.accuracy) + " after " +
                          std::to_string(out.epochs) + " epochs (target " + std::to_string(train.target_accuracy) + ")",
                      out.accuracy);
}

SiteScales resolve_scales(const ScaleRequest& request, std::size_t n_layers, const TraceContext& traces) {
  auto one = [&](const ImpactMatrix* item, std::span<const ImpactMatrix> data, const char* tag) {
    ScaleContext ctx{n_layers, request.alpha_o, request.r_o, io::derive_seed(request.seed, tag), item, data};
    return strategy_scales(request.strategy, ctx);
  };
  if (traces.full) {
    const ScaleSet s = one(traces.item_full, traces.dataset_full, "scales/full");
    return {s, s};
  }
  return {one(traces.item_attn, traces.dataset_attn, "scales/attn"), one(traces.item_mlp, traces.dataset_mlp, "scales/mlp")};
}

EditOutcome apply_edit(const MicroTransformer& base, std::span<const int> prompt, std::span<const int> target,
                       const WeightSelection& selection, const SiteScales& scales, const EditTrainConfig& train) {
  if (prompt.empty() || target.empty()) throw ContractError("edit needs a prompt and a target");
  if (train.max_steps == 0) throw ContractError("max_steps must be >= 1");
  const auto started = std::chrono::steady_clock::now();
  EditOutcome out{attach(base, selection, scales, io::derive_seed(train.seed, "adapter-init")), {}, 0, 0.0};
  AdaptedModel& a = out.adapted;
  for (int tok : prompt)
    if (tok < 0 || static_cast<std::size_t>(tok) >= base.config().vocab_size) throw VocabError("prompt token outside vocabulary");
  std::vector<std::vector<int>> seqs{std::vector<int>(prompt.begin(), prompt.end())};
  seqs[0].insert(seqs[0].end(), target.begin(), target.end() - 1);
  std::vector<int> targets(seqs[0].size(), -1);
  for (std::size_t s = 0; s < target.size(); ++s) targets[prompt.size() - 1 + s] = target[s];

  Adam adam(train.lr);
  std::vector<Matrix*> params = a.trainable();
  for (std::size_t step = 0;; ++step) {
    ad::Tape tape;
    AdapterDelta delta(a, tape);
    const ParameterVars vars = bind_parameters(tape, base, false);
    RunArgs args;
    args.delta = &delta;
    ad::Var loss = ad::cross_entropy(build_logits(base, vars, seqs, args, nullptr), targets);
    out.loss_curve.push_back(loss.value()(0, 0));
    if (out.loss_curve.back() < train.target_nll || step == train.max_steps || params.empty()) break;
    const ad::Gradients grads = tape.backward(loss);
    std::vector<const Matrix*> g;
    for (const ad::Var& v : delta.leaves()) g.push_back(grads.find(v));
    adam.step(params, g);
    out.steps = step + 1;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

nlohmann::json edit_log_entry(const std::string& record_id, const ScaleRequest& request, const EditOutcome& outcome,
                              std::uint64_t seed) {
  return {{"record_id", record_id},
          {"strategy", strategy_name(request.strategy)},
          {"weights", outcome.adapted.selection().label()},
          {"alpha_o", request.alpha_o},
          {"r_o", request.r_o},
          {"scales", to_json(outcome.adapted.scales())},
          {"trainable_parameters", outcome.adapted.parameter_count()},
          {"loss_curve", outcome.loss_curve},
          {"steps", outcome.steps},
          {"seed", seed}};
}

}  // namespace medlasa
