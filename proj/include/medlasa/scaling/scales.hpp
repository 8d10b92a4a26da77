#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medlasa/tracing/causal_trace.hpp"

namespace medlasa {

enum class ProfileKind { alpha, rank };

struct ImpactProfile {
  std::vector<double> values;  // one per layer, in [0, 1]
  ProfileKind kind = ProfileKind::alpha;
  TraceModule source = TraceModule::full;
};

enum class Strategy { medlasa, fixed, random, medlasa_no_sr, medlasa_no_sa };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct ScaleSet {
  std::vector<double> alpha;
  std::vector<std::size_t> rank;
  Strategy strategy = Strategy::fixed;
  double alpha_o = 24.0;
  std::size_t r_o = 8;

  std::size_t n_layers() const noexcept { return alpha.size(); }
  friend bool operator==(const ScaleSet&, const ScaleSet&) = default;
};

/// (x - min) / (max - min); an all-equal input maps to all ones.
std::vector<double> max_min_norm(std::span<const double> x);

/// Column sums of M over the subject rows, normalized.
ImpactProfile alpha_profile(const ImpactMatrix& m, Span subject);
inline ImpactProfile alpha_profile(const ImpactMatrix& m) { return alpha_profile(m, m.noise.subject); }

/// Subject-row column sums accumulated over every trace, normalized. Each
/// trace uses its own recorded subject span.
ImpactProfile rank_profile(std::span<const ImpactMatrix> traces);

ScaleSet make_scale_set(const ImpactProfile& i_alpha, const ImpactProfile& i_rank, double alpha_o, std::size_t r_o);

struct ScaleContext {
  std::size_t n_layers = 0;
  double alpha_o = 24.0;
  std::size_t r_o = 8;
  std::uint64_t seed = 0;
  const ImpactMatrix* item = nullptr;    // trace of the edited item (alpha profile)
  std::span<const ImpactMatrix> dataset;  // traces over the dataset (rank profile)
};

ScaleSet strategy_scales(Strategy strategy, const ScaleContext& ctx);

/// Scales for attention-site and MLP-site adapters.
struct SiteScales {
  ScaleSet attn;
  ScaleSet mlp;

  const ScaleSet& for_weight(Weight w) const { return is_attention_weight(w) ? attn : mlp; }
  friend bool operator==(const SiteScales&, const SiteScales&) = default;
};

inline SiteScales uniform_scales(const ScaleSet& s) { return {s, s}; }

nlohmann::json to_json(const ScaleSet& s);
ScaleSet scale_set_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SiteScales& s);
SiteScales site_scales_from_json(const nlohmann::json& j);

}  // namespace medlasa
