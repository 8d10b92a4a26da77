#include "medlasa/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <tuple>

#include "medlasa/errors.hpp"
#include "medlasa/numerics/ops.hpp"

namespace medlasa {

std::string_view weight_name(Weight w) {
  switch (w) {
    case Weight::q: return "W_q";
    case Weight::k: return "W_k";
    case Weight::v: return "W_v";
    case Weight::o: return "W_o";
    case Weight::gate: return "W_gate";
    case Weight::up: return "W_up";
    case Weight::down: return "W_down";
  }
  return "?";
}

Weight parse_weight(std::string_view name) {
  std::string_view bare = name;
  if (bare.starts_with("W_") || bare.starts_with("w_")) bare.remove_prefix(2);
  for (Weight w : kAllWeights) {
    std::string_view full = weight_name(w);
    if (full.substr(2) == bare) return w;
  }
  throw ContractError("unknown weight name '" + std::string(name) + "'");
}

bool is_attention_weight(Weight w) {
  return w == Weight::q || w == Weight::k || w == Weight::v || w == Weight::o;
}

std::string_view site_name(Site s) {
  switch (s) {
    case Site::residual: return "residual";
    case Site::attn_out: return "attn_out";
    case Site::mlp_out: return "mlp_out";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 || max_seq == 0)
    throw ContractError("model config: all counts must be >= 1");
  if (d_model % n_heads != 0) throw ContractError("model config: d_model must be divisible by n_heads");
  if (vocab_size < 2) throw ContractError("model config: vocabulary must hold BOS and UNK");
  if (!(norm_eps >= 0.0) || !std::isfinite(norm_eps)) throw ContractError("model config: norm_eps must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
                     {"norm_eps", c.norm_eps}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

Matrix& LayerWeights::weight(Weight w) {
  switch (w) {
    case Weight::q: return wq;
    case Weight::k: return wk;
    case Weight::v: return wv;
    case Weight::o: return wo;
    case Weight::gate: return w_gate;
    case Weight::up: return w_up;
    case Weight::down: return w_down;
  }
  throw ContractError("bad weight");
}

const Matrix& LayerWeights::weight(Weight w) const { return const_cast<LayerWeights*>(this)->weight(w); }

MicroTransformer::MicroTransformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config.d_model, f = config.d_ff;
  token_embedding = Matrix(config.vocab_size, d);
  position_embedding = Matrix(config.max_seq, d);
  final_norm = Matrix(1, d, 1.0);
  unembedding = Matrix(config.vocab_size, d);
  layers.resize(config.n_layers);
  for (LayerWeights& lw : layers) {
    lw.wq = Matrix(d, d);
    lw.wk = Matrix(d, d);
    lw.wv = Matrix(d, d);
    lw.wo = Matrix(d, d);
    lw.w_gate = Matrix(f, d);
    lw.w_up = Matrix(f, d);
    lw.w_down = Matrix(d, f);
    lw.attn_norm = Matrix(1, d, 1.0);
    lw.mlp_norm = Matrix(1, d, 1.0);
  }
}

MicroTransformer MicroTransformer::initialized(const ModelConfig& config) {
  MicroTransformer m(config);
  std::mt19937_64 rng(config.seed);
  constexpr double kStd = 0.02;
  const double out_std = kStd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto fill = [&rng](Matrix& x, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : x.values()) v = dist(rng);
  };
  fill(m.token_embedding, kStd);
  fill(m.position_embedding, kStd);
  for (LayerWeights& lw : m.layers) {
    fill(lw.wq, kStd);
    fill(lw.wk, kStd);
    fill(lw.wv, kStd);
    fill(lw.wo, out_std);
    fill(lw.w_gate, kStd);
    fill(lw.w_up, kStd);
    fill(lw.w_down, out_std);
  }
  fill(m.unembedding, kStd);
  return m;
}

std::vector<std::pair<std::string, const Matrix*>> MicroTransformer::named_parameters() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  out.emplace_back("position_embedding", &position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const LayerWeights& lw = layers[l];
    for (Weight w : kAllWeights) out.emplace_back(p + std::string(weight_name(w)), &lw.weight(w));
    out.emplace_back(p + "attn_norm", &lw.attn_norm);
    out.emplace_back(p + "mlp_norm", &lw.mlp_norm);
  }
  out.emplace_back("final_norm", &final_norm);
  out.emplace_back("unembedding", &unembedding);
  return out;
}

std::vector<std::pair<std::string, Matrix*>> MicroTransformer::named_parameters() {
  auto cref = std::as_const(*this).named_parameters();
  std::vector<std::pair<std::string, Matrix*>> out;
  out.reserve(cref.size());
  for (auto& [name, ptr] : cref) out.emplace_back(std::move(name), const_cast<Matrix*>(ptr));
  return out;
}

bool operator==(const MicroTransformer& a, const MicroTransformer& b) {
  const ModelConfig &ca = a.config_, &cb = b.config_;
  if (std::tie(ca.n_layers, ca.d_model, ca.n_heads, ca.d_ff, ca.vocab_size, ca.max_seq, ca.norm_eps) !=
      std::tie(cb.n_layers, cb.d_model, cb.n_heads, cb.d_ff, cb.vocab_size, cb.max_seq, cb.norm_eps))
    return false;
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i].second == *pb[i].second)) return false;
  return true;
}

std::span<const double> TraceCapture::at(Site s, std::size_t token, std::size_t layer) const {
  const auto& per_layer = site(s);
  if (layer >= per_layer.size() || token >= per_layer[layer].rows())
    throw ContractError("trace capture index out of range");
  return per_layer[layer].row(token);
}

const std::vector<Matrix>& TraceCapture::site(Site s) const {
  switch (s) {
    case Site::residual: return residual;
    case Site::attn_out: return attn_out;
    case Site::mlp_out: return mlp_out;
  }
  return residual;
}

ad::Var ParameterVars::Layer::weight(Weight w) const {
  switch (w) {
    case Weight::q: return wq;
    case Weight::k: return wk;
    case Weight::v: return wv;
    case Weight::o: return wo;
    case Weight::gate: return w_gate;
    case Weight::up: return w_up;
    case Weight::down: return w_down;
  }
  return {};
}

std::vector<ad::Var> ParameterVars::flat() const {
  std::vector<ad::Var> out{token_embedding, position_embedding};
  for (const Layer& l : layers) {
    for (Weight w : kAllWeights) out.push_back(l.weight(w));
    out.push_back(l.attn_norm);
    out.push_back(l.mlp_norm);
  }
  out.push_back(final_norm);
  out.push_back(unembedding);
  return out;
}

ParameterVars bind_parameters(ad::Tape& tape, const MicroTransformer& model, bool trainable) {
  auto leaf = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  ParameterVars p;
  p.token_embedding = leaf(model.token_embedding);
  p.position_embedding = leaf(model.position_embedding);
  for (const LayerWeights& lw : model.layers) {
    ParameterVars::Layer l;
    l.wq = leaf(lw.wq);
    l.wk = leaf(lw.wk);
    l.wv = leaf(lw.wv);
    l.wo = leaf(lw.wo);
    l.w_gate = leaf(lw.w_gate);
    l.w_up = leaf(lw.w_up);
    l.w_down = leaf(lw.w_down);
    l.attn_norm = leaf(lw.attn_norm);
    l.mlp_norm = leaf(lw.mlp_norm);
    p.layers.push_back(l);
  }
  p.final_norm = leaf(model.final_norm);
  p.unembedding = leaf(model.unembedding);
  return p;
}

namespace {

struct SiteKey {
  Site site;
  std::size_t token;
  std::size_t layer;
  auto operator<=>(const SiteKey&) const = default;
};

// Overrides gathered per (site, layer): rows and their replacement values.
struct Overrides {
  std::vector<std::size_t> rows;
  std::vector<std::span<const double>> values;
};

void validate_hooks(const ModelConfig& cfg, std::size_t n_rows, const RunArgs& args) {
  std::set<SiteKey> patched;
  for (const PatchSpec& p : args.patches) {
    if (p.token >= n_rows || p.layer >= cfg.n_layers) throw ContractError("patch index out of range");
    if (p.value.size() != cfg.d_model) throw ContractError("patch value length must equal d_model");
    if (!patched.insert({p.site, p.token, p.layer}).second)
      throw ContractError("duplicate patch on the same site");
  }
  for (const FreezeSpec& f : args.freezes) {
    if (f.site == Site::residual) throw ContractError("freezes apply to attn_out or mlp_out only");
    if (f.token >= n_rows || f.layer_begin > f.layer_end || f.layer_end >= cfg.n_layers)
      throw ContractError("freeze window out of range");
    if (f.values.size() != f.layer_end - f.layer_begin + 1)
      throw ContractError("freeze needs one pinned vector per layer in its window");
    for (const auto& v : f.values)
      if (v.size() != cfg.d_model) throw ContractError("freeze value length must equal d_model");
    for (std::size_t l = f.layer_begin; l <= f.layer_end; ++l)
      if (patched.count({f.site, f.token, l}))
        throw ContractError("conflicting patch and freeze on the same (site, token, layer)");
  }
  if (args.noise) {
    if (args.noise->values.rows() != args.noise->rows.size() || args.noise->values.cols() != cfg.d_model)
      throw ContractError("noise shape mismatch");
    for (std::size_t r : args.noise->rows)
      if (r >= n_rows) throw ContractError("noise row out of range");
  }
}

Overrides collect(const RunArgs& args, Site site, std::size_t layer) {
  Overrides o;
  for (const FreezeSpec& f : args.freezes) {
    if (f.site != site || layer < f.layer_begin || layer > f.layer_end) continue;
    o.rows.push_back(f.token);
    o.values.emplace_back(f.values[layer - f.layer_begin]);
  }
  for (const PatchSpec& p : args.patches) {
    if (p.site != site || p.layer != layer) continue;
    o.rows.push_back(p.token);
    o.values.emplace_back(p.value);
  }
  return o;
}

ad::Var apply_overrides(ad::Var x, const RunArgs& args, Site site, std::size_t layer) {
  if (args.patches.empty() && args.freezes.empty()) return x;
  Overrides o = collect(args, site, layer);
  if (o.rows.empty()) return x;
  Matrix values(o.rows.size(), x.value().cols());
  for (std::size_t i = 0; i < o.rows.size(); ++i)
    std::copy(o.values[i].begin(), o.values[i].end(), values.row(i).begin());
  return ad::replace_rows(x, std::move(o.rows), std::move(values));
}

ad::Var linear(const ParameterVars::Layer& p, const WeightDelta* delta, std::size_t layer, Weight w, ad::Var x) {
  ad::Var y = ad::matmul_nt(x, p.weight(w));
  if (delta != nullptr) {
    ad::Var extra = delta->contribution(layer, w, x);
    if (extra.valid()) y = ad::add(y, extra);
  }
  return y;
}

}  // namespace

ad::Var build_logits(const MicroTransformer& model, const ParameterVars& params,
                     std::span<const std::vector<int>> sequences, const RunArgs& args, TraceCapture* capture) {
  const ModelConfig& cfg = model.config();
  if (sequences.empty()) throw ContractError("forward: no sequences");
  std::vector<std::size_t> ids, positions;
  std::vector<ad::Segment> segments;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ContractError("forward: empty token sequence");
    if (seq.size() > cfg.max_seq) throw ContractError("forward: sequence longer than max_seq");
    segments.push_back({ids.size(), seq.size()});
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= cfg.vocab_size)
        throw VocabError("token id " + std::to_string(seq[i]) + " outside vocabulary");
      ids.push_back(static_cast<std::size_t>(seq[i]));
      positions.push_back(i);
    }
  }
  const bool hooked = !args.patches.empty() || !args.freezes.empty() || args.noise.has_value() ||
                      args.capture.any() || args.start_residual.has_value();
  if (hooked && sequences.size() != 1) throw ContractError("run hooks require a single sequence");
  validate_hooks(cfg, ids.size(), args);
  if (args.start_layer >= cfg.n_layers && args.start_layer != 0)
    throw ContractError("start_layer out of range");

  ad::Tape& tape = *params.token_embedding.tape;
  ad::Var x;
  if (args.start_residual) {
    const Matrix& r = *args.start_residual;
    if (r.rows() != ids.size() || r.cols() != cfg.d_model) throw ContractError("start_residual shape mismatch");
    x = tape.constant(r);
  } else {
    if (args.start_layer != 0) throw ContractError("start_layer requires start_residual");
    x = ad::add(ad::gather_rows(params.token_embedding, ids), ad::gather_rows(params.position_embedding, positions));
    if (args.noise) {
      Matrix full(ids.size(), cfg.d_model);
      for (std::size_t i = 0; i < args.noise->rows.size(); ++i) {
        auto src = args.noise->values.row(i);
        auto dst = full.row(args.noise->rows[i]);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
      x = ad::add(x, tape.constant(std::move(full)));
    }
  }

  if (capture != nullptr) {
    *capture = TraceCapture{};
    if (args.capture.residual) capture->residual.resize(cfg.n_layers);
    if (args.capture.attn_out) capture->attn_out.resize(cfg.n_layers);
    if (args.capture.mlp_out) capture->mlp_out.resize(cfg.n_layers);
  }

  for (std::size_t l = args.start_layer; l < cfg.n_layers; ++l) {
    const ParameterVars::Layer& p = params.layers[l];
    ad::Var h = ad::rmsnorm_rows(x, p.attn_norm, cfg.norm_eps);
    ad::Var q = linear(p, args.delta, l, Weight::q, h);
    ad::Var k = linear(p, args.delta, l, Weight::k, h);
    ad::Var v = linear(p, args.delta, l, Weight::v, h);
    ad::Var att = ad::causal_attention(q, k, v, segments, cfg.n_heads);
    ad::Var attn_out = apply_overrides(linear(p, args.delta, l, Weight::o, att), args, Site::attn_out, l);
    if (capture != nullptr && args.capture.attn_out) capture->attn_out[l] = attn_out.value();
    x = ad::add(x, attn_out);

    ad::Var m = ad::rmsnorm_rows(x, p.mlp_norm, cfg.norm_eps);
    ad::Var gate = linear(p, args.delta, l, Weight::gate, m);
    ad::Var up = linear(p, args.delta, l, Weight::up, m);
    ad::Var hidden = ad::mul(ad::silu(gate), up);
    ad::Var mlp_out = apply_overrides(linear(p, args.delta, l, Weight::down, hidden), args, Site::mlp_out, l);
    if (capture != nullptr && args.capture.mlp_out) capture->mlp_out[l] = mlp_out.value();
    x = apply_overrides(ad::add(x, mlp_out), args, Site::residual, l);
    if (capture != nullptr && args.capture.residual) capture->residual[l] = x.value();
  }
  ad::Var normed = ad::rmsnorm_rows(x, params.final_norm, cfg.norm_eps);
  return ad::matmul_nt(normed, params.unembedding);
}

ForwardResult forward(const MicroTransformer& model, std::span<const int> tokens, const RunArgs& args) {
  ad::Tape tape(false);
  ParameterVars params = bind_parameters(tape, model, false);
  std::vector<std::vector<int>> seqs{std::vector<int>(tokens.begin(), tokens.end())};
  ForwardResult result;
  TraceCapture cap;
  ad::Var logits = build_logits(model, params, seqs, args, args.capture.any() ? &cap : nullptr);
  result.logits = logits.value();
  if (args.capture.any()) result.capture = std::move(cap);
  return result;
}

double sequence_prob_from_logits(const Matrix& logits, std::size_t prompt_len, std::span<const int> target) {
  if (prompt_len == 0) throw ContractError("empty prompt");
  if (target.empty()) throw ContractError("empty target");
  if (logits.rows() < prompt_len + target.size() - 1) throw ContractError("logits shorter than prompt + target");
  double log_p = 0.0;
  for (std::size_t s = 0; s < target.size(); ++s) {
    auto row = logits.row(prompt_len - 1 + s);
    if (target[s] < 0 || static_cast<std::size_t>(target[s]) >= row.size())
      throw VocabError("target token outside vocabulary");
    const double peak = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - peak);
    log_p += row[static_cast<std::size_t>(target[s])] - peak - std::log(z);
  }
  return std::exp(log_p);
}

double next_token_prob(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> target,
                       const RunArgs& args) {
  if (prompt.empty()) throw ContractError("next_token_prob: empty prompt");
  if (target.empty()) throw ContractError("next_token_prob: empty target");
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  ForwardResult r = forward(model, seq, args);
  return sequence_prob_from_logits(r.logits, prompt.size(), target);
}

std::vector<int> generate(const MicroTransformer& model, std::span<const int> prompt, std::size_t max_new,
                          const WeightDelta* delta) {
  if (max_new == 0) throw ContractError("generate: max_new must be >= 1");
  if (prompt.empty()) throw ContractError("generate: empty prompt");
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  RunArgs args;
  args.delta = delta;
  for (std::size_t step = 0; step < max_new && seq.size() < model.config().max_seq; ++step) {
    ForwardResult r = forward(model, seq, args);
    const int next = static_cast<int>(argmax(r.logits.row(r.logits.rows() - 1)));
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace medlasa
