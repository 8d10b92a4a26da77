#include "medlasa/scaling/scales.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "medlasa/errors.hpp"

namespace medlasa {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::medlasa: return "medlasa";
    case Strategy::fixed: return "fixed";
    case Strategy::random: return "random";
    case Strategy::medlasa_no_sr: return "medlasa-no-sr";
    case Strategy::medlasa_no_sa: return "medlasa-no-sa";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::medlasa, Strategy::fixed, Strategy::random, Strategy::medlasa_no_sr,
                     Strategy::medlasa_no_sa})
    if (strategy_name(s) == name) return s;
  throw ContractError("unknown strategy '" + std::string(name) + "'");
}

std::vector<double> max_min_norm(std::span<const double> x) {
  if (x.empty()) throw ContractError("max_min_norm of an empty vector");
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double min = *lo, range = *hi - *lo;
  std::vector<double> out(x.size(), 1.0);
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - min) / range;
  return out;
}

namespace {

void add_subject_rows(const ImpactMatrix& m, Span subject, std::vector<double>& acc) {
  if (subject.empty()) throw ContractError("empty subject span");
  if (subject.end > m.values.rows()) throw ContractError("subject span outside the impact matrix");
  for (std::size_t t = subject.begin; t < subject.end; ++t)
    for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += m.values(t, l);
}

}  // namespace

ImpactProfile alpha_profile(const ImpactMatrix& m, Span subject) {
  std::vector<double> acc(m.n_layers(), 0.0);
  add_subject_rows(m, subject, acc);
  return {max_min_norm(acc), ProfileKind::alpha, m.target};
}

ImpactProfile rank_profile(std::span<const ImpactMatrix> traces) {
  if (traces.empty()) throw ContractError("rank profile needs at least one trace");
  std::vector<double> acc(traces.front().n_layers(), 0.0);
  for (const ImpactMatrix& m : traces) {
    if (m.n_layers() != acc.size()) throw ContractError("traces disagree on layer count");
    add_subject_rows(m, m.noise.subject, acc);
  }
  return {max_min_norm(acc), ProfileKind::rank, traces.front().target};
}

ScaleSet make_scale_set(const ImpactProfile& i_alpha, const ImpactProfile& i_rank, double alpha_o, std::size_t r_o) {
  if (!(alpha_o > 0.0)) throw ContractError("alpha_o must be > 0");
  if (r_o == 0) throw ContractError("r_o must be >= 1");
  if (i_alpha.values.size() != i_rank.values.size()) throw ContractError("alpha and rank profiles differ in length");
  ScaleSet s;
  s.strategy = Strategy::medlasa;
  s.alpha_o = alpha_o;
  s.r_o = r_o;
  for (double a : i_alpha.values) s.alpha.push_back(alpha_o * a);
  for (double r : i_rank.values)
    s.rank.push_back(static_cast<std::size_t>(std::ceil(static_cast<double>(r_o) * r)));
  return s;
}

ScaleSet strategy_scales(Strategy strategy, const ScaleContext& ctx) {
  if (ctx.n_layers == 0) throw ContractError("scale context needs n_layers");
  if (!(ctx.alpha_o > 0.0)) throw ContractError("alpha_o must be > 0");
  if (ctx.r_o == 0) throw ContractError("r_o must be >= 1");
  ScaleSet s;
  s.strategy = strategy;
  s.alpha_o = ctx.alpha_o;
  s.r_o = ctx.r_o;
  switch (strategy) {
    case Strategy::fixed:
      s.alpha.assign(ctx.n_layers, ctx.alpha_o);
      s.rank.assign(ctx.n_layers, ctx.r_o);
      return s;
    case Strategy::random: {
      std::mt19937_64 rng(ctx.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::uniform_int_distribution<std::size_t> rank(1, ctx.r_o);
      for (std::size_t l = 0; l < ctx.n_layers; ++l) {
        s.alpha.push_back(ctx.alpha_o * (1.0 - unit(rng)));  // (0, alpha_o]
        s.rank.push_back(rank(rng));
      }
      return s;
    }
    default: break;
  }
  if (ctx.item == nullptr || ctx.dataset.empty()) throw ContractError("medlasa scales need item and dataset traces");
  if (ctx.item->n_layers() != ctx.n_layers) throw ContractError("trace layer count differs from the model");
  ScaleSet full = make_scale_set(alpha_profile(*ctx.item), rank_profile(ctx.dataset), ctx.alpha_o, ctx.r_o);
  if (full.n_layers() != ctx.n_layers) throw ContractError("trace layer count differs from the model");
  full.strategy = strategy;
  if (strategy == Strategy::medlasa_no_sr) full.rank.assign(ctx.n_layers, ctx.r_o);
  if (strategy == Strategy::medlasa_no_sa) full.alpha.assign(ctx.n_layers, ctx.alpha_o);
  return full;
}

nlohmann::json to_json(const ScaleSet& s) {
  return {{"strategy", strategy_name(s.strategy)},
          {"alpha_o", s.alpha_o},
          {"r_o", s.r_o},
          {"alpha", s.alpha},
          {"rank", s.rank}};
}

ScaleSet scale_set_from_json(const nlohmann::json& j) {
  try {
    ScaleSet s;
    s.strategy = parse_strategy(j.at("strategy").get<std::string>());
    s.alpha_o = j.at("alpha_o").get<double>();
    s.r_o = j.at("r_o").get<std::size_t>();
    s.alpha = j.at("alpha").get<std::vector<double>>();
    s.rank = j.at("rank").get<std::vector<std::size_t>>();
    if (s.alpha.size() != s.rank.size()) throw FormatError("scale set alpha/rank lengths differ");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scale set: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("malformed scale set: ") + e.what());
  }
}

nlohmann::json to_json(const SiteScales& s) { return {{"attn", to_json(s.attn)}, {"mlp", to_json(s.mlp)}}; }

SiteScales site_scales_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("attn") || !j.contains("mlp")) throw FormatError("site scales need attn and mlp");
  return {scale_set_from_json(j["attn"]), scale_set_from_json(j["mlp"])};
}

}  // namespace medlasa
