#pragma once

// LLaMA-style micro decoder: learned token and position embeddings, L
// pre-rmsnorm blocks of multi-head causal attention followed by a SwiGLU MLP,
// a final rmsnorm and an untied unembedding.
//
// Layer indices are 0-based throughout the API. Every projection is stored
// out x in, so a linear site computes y = x W^T for row-stacked inputs.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medlasa/numerics/autodiff.hpp"
#include "medlasa/numerics/matrix.hpp"

namespace medlasa {

inline constexpr int kBosToken = 0;
inline constexpr int kUnkToken = 1;

/// The seven editable projections of a block.
enum class Weight { q, k, v, o, gate, up, down };

inline constexpr std::array<Weight, 7> kAllWeights = {Weight::q,    Weight::k,  Weight::v,   Weight::o,
                                                      Weight::gate, Weight::up, Weight::down};

std::string_view weight_name(Weight w);
/// Accepts "W_q" / "q" style names; throws ContractError on anything else.
Weight parse_weight(std::string_view name);
bool is_attention_weight(Weight w);

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 300;
  std::size_t max_seq = 64;
  double norm_eps = 1e-6;
  std::uint64_t seed = 0;

  /// Throws ContractError when an invariant does not hold.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerWeights {
  Matrix wq, wk, wv, wo;
  Matrix w_gate, w_up, w_down;
  Matrix attn_norm, mlp_norm;

  Matrix& weight(Weight w);
  const Matrix& weight(Weight w) const;
};

class MicroTransformer {
 public:
  /// All weights zero, norm gains one.
  explicit MicroTransformer(const ModelConfig& config);
  /// Gaussian initialisation seeded from config.seed.
  static MicroTransformer initialized(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // max_seq x d
  std::vector<LayerWeights> layers;
  Matrix final_norm;   // 1 x d
  Matrix unembedding;  // vocab x d

  /// Stable name -> tensor listing used by checkpoints and optimizers.
  std::vector<std::pair<std::string, Matrix*>> named_parameters();
  std::vector<std::pair<std::string, const Matrix*>> named_parameters() const;

  friend bool operator==(const MicroTransformer& a, const MicroTransformer& b);

 private:
  ModelConfig config_;
};

// ---------------------------------------------------------------------------
// Run-time hooks used by causal tracing.

enum class Site { residual, attn_out, mlp_out };

std::string_view site_name(Site s);

/// Overrides one site's output at (token, layer) after it is computed.
struct PatchSpec {
  Site site = Site::residual;
  std::size_t token = 0;
  std::size_t layer = 0;
  std::vector<double> value;
};

/// Pins a sublayer output at one token to stored values for every layer in
/// [layer_begin, layer_end]; values holds one d-vector per layer in the window.
struct FreezeSpec {
  Site site = Site::mlp_out;
  std::size_t token = 0;
  std::size_t layer_begin = 0;
  std::size_t layer_end = 0;
  std::vector<std::vector<double>> values;
};

/// Additive perturbation of input embedding rows (token + position) before block 0.
struct EmbeddingNoise {
  std::vector<std::size_t> rows;
  Matrix values;  // rows.size() x d
};

struct CaptureFlags {
  bool residual = false;
  bool attn_out = false;
  bool mlp_out = false;

  static CaptureFlags all() { return {true, true, true}; }
  bool any() const noexcept { return residual || attn_out || mlp_out; }
};

/// Per-layer T x d site values of one run, after any patch or freeze.
struct TraceCapture {
  std::vector<Matrix> residual;
  std::vector<Matrix> attn_out;
  std::vector<Matrix> mlp_out;

  std::span<const double> at(Site site, std::size_t token, std::size_t layer) const;
  const std::vector<Matrix>& site(Site s) const;
};

/// Additive low-rank terms contributed at linear sites (see adapters).
class WeightDelta {
 public:
  virtual ~WeightDelta() = default;
  /// Contribution to x W^T at (layer, weight) for the row-stacked input x, or
  /// an invalid Var when the site carries no delta.
  virtual ad::Var contribution(std::size_t layer, Weight w, ad::Var x) const = 0;
};

struct RunArgs {
  CaptureFlags capture;
  std::optional<EmbeddingNoise> noise;
  std::vector<PatchSpec> patches;
  std::vector<FreezeSpec> freezes;
  const WeightDelta* delta = nullptr;
  /// Start at block `start_layer` from a given residual input (T x d) instead
  /// of the embeddings. Blocks below it are not run and not captured.
  std::size_t start_layer = 0;
  std::optional<Matrix> start_residual;
};

struct ForwardResult {
  Matrix logits;  // T x vocab
  std::optional<TraceCapture> capture;
};

/// Parameter leaves of a model placed on a tape.
struct ParameterVars {
  struct Layer {
    ad::Var wq, wk, wv, wo, w_gate, w_up, w_down, attn_norm, mlp_norm;
    ad::Var weight(Weight w) const;
  };
  ad::Var token_embedding, position_embedding, final_norm, unembedding;
  std::vector<Layer> layers;

  /// Same order as MicroTransformer::named_parameters().
  std::vector<ad::Var> flat() const;
};

ParameterVars bind_parameters(ad::Tape& tape, const MicroTransformer& model, bool trainable);

/// Records the forward graph for one or more packed sequences and returns
/// the logits node (total rows x vocab). Hooks in `args` are only valid for a
/// single sequence; `capture` is filled when requested.
ad::Var build_logits(const MicroTransformer& model, const ParameterVars& params,
                     std::span<const std::vector<int>> sequences, const RunArgs& args,
                     TraceCapture* capture);

/// Single-sequence inference pass.
ForwardResult forward(const MicroTransformer& model, std::span<const int> tokens, const RunArgs& args = {});

/// p(target | prompt): softmax at the last prompt position for the first
/// target token, chained with teacher forcing for longer targets.
double next_token_prob(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> target,
                       const RunArgs& args = {});

/// Same quantity read from logits of a run over prompt + target[:-1].
double sequence_prob_from_logits(const Matrix& logits, std::size_t prompt_len, std::span<const int> target);

/// Greedy decoding, max_new tokens, lowest-id tie-break.
std::vector<int> generate(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new,
                          const WeightDelta* delta = nullptr);

}  // namespace medlasa
