#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "medlasa/adapters/lowrank.hpp"
#include "medlasa/model/transformer.hpp"
#include "medlasa/scaling/scales.hpp"

namespace medlasa {

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update of every parameter from its gradient (same order each call).
  void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// One prompt/answer pair of the fact corpus, already tokenized.
struct TokenizedFact {
  std::vector<int> prompt;  // starts with BOS
  std::vector<int> answer;
};

struct PretrainConfig {
  std::size_t max_epochs = 400;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double target_accuracy = 0.99;
  std::size_t eval_every = 5;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  MicroTransformer model;
  std::size_t epochs = 0;
  double accuracy = 0.0;
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Fraction of facts whose answer tokens are all the teacher-forced argmax.
double fact_accuracy(const MicroTransformer& model, std::span<const TokenizedFact> facts);

/// Next-token cross-entropy over prompt + answer sequences, shuffled
/// mini-batches, Adam. Throws TrainingError when the accuracy target is not
/// reached within max_epochs.
PretrainResult pretrain_base(std::span<const TokenizedFact> corpus, const ModelConfig& config,
                             const PretrainConfig& train, const std::function<void(std::size_t, double)>& progress = {});

struct EditTrainConfig {
  double lr = 2e-4;
  std::size_t max_steps = 200;
  double target_nll = 0.01;
  std::uint64_t seed = 0;
};

/// Traces available for scale selection. With `full` set, both attention and
/// MLP scales come from full-residual traces.
struct TraceContext {
  const ImpactMatrix* item_attn = nullptr;
  const ImpactMatrix* item_mlp = nullptr;
  const ImpactMatrix* item_full = nullptr;
  std::span<const ImpactMatrix> dataset_attn;
  std::span<const ImpactMatrix> dataset_mlp;
  std::span<const ImpactMatrix> dataset_full;
  bool full = false;
};

struct ScaleRequest {
  Strategy strategy = Strategy::medlasa;
  double alpha_o = 24.0;
  std::size_t r_o = 8;
  std::uint64_t seed = 0;  // random strategy
};

SiteScales resolve_scales(const ScaleRequest& request, std::size_t n_layers, const TraceContext& traces);

struct EditOutcome {
  AdaptedModel adapted;
  std::vector<double> loss_curve;  // loss before each step, then the final loss
  std::size_t steps = 0;
  double seconds = 0.0;
};

/// Trains fresh adapters on the base so that prompt -> target; prompt
/// positions are masked out of the loss.
EditOutcome apply_edit(const MicroTransformer& base, std::span<const int> prompt, std::span<const int> target,
                       const WeightSelection& selection, const SiteScales& scales, const EditTrainConfig& train);

/// One JSON-lines record of the edit run log.
nlohmann::json edit_log_entry(const std::string& record_id, const ScaleRequest& request, const EditOutcome& outcome,
                              std::uint64_t seed);

}  // namespace medlasa
