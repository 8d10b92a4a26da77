#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "medlasa/cli/config.hpp"

namespace medlasa::cli {

/// Fixed artifact layout under the --out directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path tokenizer() const { return data() / "tokenizer.json"; }
  std::filesystem::path corpus() const { return data() / "corpus.json"; }
  std::filesystem::path split(const std::string& dataset, const std::string& split) const {
    return data() / dataset / (split + ".json");
  }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path checkpoint() const { return model() / "base.mlsa"; }
  std::filesystem::path traces() const { return root / "traces"; }
  std::filesystem::path trace(const std::string& dataset, const std::string& id, const std::string& module) const {
    return traces() / dataset / (id + "." + module + ".json");
  }
  std::filesystem::path edits() const { return root / "edits"; }
  std::filesystem::path edit_dir(const std::string& dataset, const std::string& strategy) const {
    return edits() / dataset / strategy;
  }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path ablate() const { return root / "ablate"; }
  std::filesystem::path heatmaps() const { return root / "heatmaps"; }
};

struct Context {
  ExperimentConfig config;
  Layout layout;
  std::ostream* log = nullptr;  // progress lines; null silences them
};

void cmd_build_data(const Context& ctx);
void cmd_pretrain(const Context& ctx);
void cmd_trace(const Context& ctx);
void cmd_edit(const Context& ctx);
void cmd_eval(const Context& ctx);
void cmd_ablate(const Context& ctx);
void cmd_heatmap(const Context& ctx);

// ---------------------------------------------------------------------------
// Building blocks shared by the commands and the acceptance driver.

Tokenizer load_tokenizer(const Layout& layout);
MicroTransformer load_base(const Layout& layout);
/// The configured split of one dataset, truncated to records.max_records.
std::vector<EditRecord> load_records(const Context& ctx, const std::string& dataset);

/// Traces aligned with a record list; a module's vector is empty when not loaded.
struct TraceSet {
  std::vector<ImpactMatrix> attn, mlp, full;
};

/// Loads the traces a strategy needs (none for fixed and random).
TraceSet load_traces(const Context& ctx, const std::string& dataset, std::span<const EditRecord> records,
                     Strategy strategy);

struct EditPlan {
  ScaleRequest request;  // seed is replaced per record
  WeightSelection selection;
  bool full_scales = false;
  EditTrainConfig train;  // seed is replaced per record
};

EditPlan edit_plan(const ExperimentConfig& cfg, Strategy strategy, const std::string& weights, double alpha_o,
                   std::size_t r_o);

/// Seed of one record's edit (adapter init and random scales).
std::uint64_t record_seed(std::uint64_t edit_seed, const std::string& dataset, const std::string& id);

/// Edits every record independently (record-parallel). `on_edit` runs once
/// per record, possibly concurrently, and must only touch state of its index.
/// Returns one run-log entry per record, in record order.
std::vector<nlohmann::json> edit_records(const MicroTransformer& base, const Tokenizer& tok,
                                         const std::string& dataset, std::span<const EditRecord> records,
                                         const TraceSet& traces, const EditPlan& plan, std::uint64_t edit_seed,
                                         const std::function<void(std::size_t, const EditOutcome&)>& on_edit);

struct StrategyRun {
  EvalReport report;
  std::vector<RecordEval> records;
  std::vector<nlohmann::json> log;
};

/// Edit then evaluate each record in memory.
StrategyRun run_strategy(const MicroTransformer& base, const Tokenizer& tok, const std::string& dataset,
                         std::span<const EditRecord> records, const TraceSet& traces, const EditPlan& plan,
                         std::uint64_t edit_seed, const EvalOptions& options);

}  // namespace medlasa::cli
