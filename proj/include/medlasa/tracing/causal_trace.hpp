#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medlasa/model/transformer.hpp"
#include "medlasa/numerics/matrix.hpp"

namespace medlasa {

/// Half-open token range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return end <= begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct NoiseSpec {
  double std = 0.0;
  std::size_t n_samples = 10;
  std::uint64_t seed = 0;
  Span subject;

  void validate(std::size_t prompt_len) const;
};

/// Seed of the s-th noise draw. A one-sample spec with this seed reproduces
/// that draw exactly.
inline std::uint64_t sample_seed(const NoiseSpec& n, std::size_t s) { return n.seed + s; }

/// Gaussian noise for the subject rows of one draw.
EmbeddingNoise draw_noise(const NoiseSpec& n, std::size_t s, std::size_t d_model);

enum class TraceModule { full, attn, mlp };

std::string_view module_name(TraceModule m);
TraceModule parse_module(std::string_view name);

struct ImpactMatrix {
  std::string example_id;
  TraceModule target = TraceModule::full;
  Matrix values;  // T x L
  double p_clean = 0.0;
  double p_corrupted = 0.0;
  NoiseSpec noise;
  std::vector<std::string> tokens;  // optional labels for the T rows

  std::size_t prompt_len() const noexcept { return values.rows(); }
  std::size_t n_layers() const noexcept { return values.cols(); }
};

struct CleanRun {
  double p_clean = 0.0;
  TraceCapture capture;
};

struct CorruptedRun {
  double p_corrupted = 0.0;  // mean over samples
  std::vector<double> sample_probs;
  std::vector<TraceCapture> captures;
};

CleanRun clean_run(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer);

CorruptedRun corrupted_run(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer,
                           const NoiseSpec& noise);

struct TraceOptions {
  /// Layers frozen above the restored one, counting itself; 0 means through the top.
  std::size_t window = 0;
  bool parallel = true;
};

ImpactMatrix trace_impact(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer,
                          const NoiseSpec& noise, TraceModule target, const TraceOptions& options = {});

/// Run arguments restoring cell (token, layer) for one noise draw. `clean`
/// and `corrupted` must be captures of the prompt + answer[:-1] sequence.
RunArgs restoration_args(const ModelConfig& cfg, const TraceCapture& clean, const TraceCapture& corrupted,
                         const EmbeddingNoise& noise, TraceModule target, std::size_t token, std::size_t layer,
                         std::size_t window);

/// Standard deviation over all coordinates of the block-0 inputs
/// (token + position embeddings) at the given subject spans.
double subject_embedding_std(const MicroTransformer& model, std::span<const std::vector<int>> prompts,
                             std::span<const Span> subjects);

nlohmann::json to_json(const ImpactMatrix& m);
ImpactMatrix impact_from_json(const nlohmann::json& j);
void save_trace(const ImpactMatrix& m, const std::filesystem::path& path);
ImpactMatrix load_trace(const std::filesystem::path& path);

}  // namespace medlasa
