#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medlasa/adapters/lowrank.hpp"
#include "medlasa/benchkit/dataset.hpp"
#include "medlasa/editing/training.hpp"
#include "medlasa/evaluation/metrics.hpp"
#include "medlasa/model/transformer.hpp"
#include "medlasa/tracing/causal_trace.hpp"

namespace medlasa::cli {

/// Values accepted for alpha_o and r_o.
inline constexpr std::array<double, 6> kScalePresets{2, 8, 24, 32, 64, 128};

struct DataSection {
  std::size_t n_entities = 40;
  std::size_t n_relations = 6;
  std::size_t n_triples = 200;
  std::size_t tail_pool = 7;
  std::size_t k = 3;
  std::size_t explanation_records = 40;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::size_t rotate_dim = 16;
  std::size_t rotate_epochs = 300;
  double rotate_margin = 4.0;
  std::size_t rotate_negatives = 8;
  double rotate_lr = 0.05;
};

struct ModelSection {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq = 64;
  double norm_eps = 1e-6;
};

struct PretrainSection {
  std::string corpus = "all";  // "all" or "facts"
  std::size_t max_epochs = 400;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double target_accuracy = 0.99;
  std::size_t eval_every = 5;
};

/// Which edit records the trace, edit, eval and ablate commands work on.
struct RecordsSection {
  std::vector<std::string> datasets{"medcf"};  // "medcf", "medfe"
  std::string split = "test";
  std::size_t max_records = 0;  // 0 keeps the whole split
};

struct TraceSection {
  double noise_multiplier = 3.0;
  std::size_t n_samples = 10;
  std::size_t window = 0;
  std::vector<std::string> modules{"attn", "mlp"};
};

struct EditSection {
  std::string strategy = "medlasa";
  std::string weights = "all";
  double alpha_o = 24.0;
  std::size_t r_o = 8;
  double lr = 2e-4;
  std::size_t max_steps = 200;
  double target_nll = 0.01;
  std::string scale_source = "modules";  // "modules" or "full"
};

struct EvalSection {
  std::size_t continuation_tokens = 50;
  std::array<double, 2> fluency_weights{1.0 / 3.0, 2.0 / 3.0};
  bool parallel = true;
};

struct AblateSection {
  std::vector<std::string> strategies{"random", "fixed", "medlasa"};
  std::size_t random_repeats = 5;
  std::vector<std::string> weights{"all"};
  std::vector<double> alpha_o{24.0};
  std::vector<std::size_t> r_o{8};
};

struct HeatmapSection {
  std::vector<std::string> records;  // ids; empty renders every traced record
  std::size_t cell = 28;
  std::string low = "#ffffff";
  std::string high_full = "#6a1b9a";
  std::string high_attn = "#b71c1c";
  std::string high_mlp = "#1b5e20";
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataSection data;
  ModelSection model;
  PretrainSection pretrain;
  RecordsSection records;
  TraceSection trace;
  EditSection edit;
  EvalSection eval;
  AblateSection ablate;
  HeatmapSection heatmap;

  /// Named child seed: "data", "pretrain", "trace", "edit" or "eval".
  std::uint64_t sub_seed(std::string_view stage) const;

  BenchConfig bench_config() const;
  ModelConfig model_config(std::size_t vocab_size) const;
  PretrainConfig pretrain_config() const;
  EditTrainConfig edit_train_config(std::uint64_t seed) const;
  EvalOptions eval_options() const;
};

/// Strict parse: unknown keys, wrong types and invalid values throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, defaults included; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& c);
/// JSON Schema (draft 2020-12) describing the accepted config.
nlohmann::json config_schema();

}  // namespace medlasa::cli
