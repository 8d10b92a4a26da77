#include "medlasa/adapters/lowrank.hpp"

#include <algorithm>
#include <random>

#include "medlasa/errors.hpp"
#include "medlasa/model/checkpoint.hpp"
#include "medlasa/numerics/kernels.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

WeightSelection::WeightSelection(std::vector<Weight> weights) : weights_(std::move(weights)) {
  std::sort(weights_.begin(), weights_.end());
  weights_.erase(std::unique(weights_.begin(), weights_.end()), weights_.end());
  if (weights_.empty()) throw ContractError("weight selection must not be empty");
}

WeightSelection WeightSelection::parse(std::string_view text) {
  const auto& presets = weight_presets();
  if (auto it = presets.find(std::string(text)); it != presets.end()) return it->second;
  std::vector<Weight> ws;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    std::string_view part = text.substr(pos, comma - pos);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    if (!part.empty()) ws.push_back(parse_weight(part));
    pos = comma + 1;
  }
  return WeightSelection(std::move(ws));
}

bool WeightSelection::contains(Weight w) const {
  return std::binary_search(weights_.begin(), weights_.end(), w);
}

std::string WeightSelection::label() const {
  std::string out;
  for (Weight w : weights_) {
    if (!out.empty()) out += ',';
    out += weight_name(w);
  }
  return out;
}

const std::map<std::string, WeightSelection>& weight_presets() {
  using W = Weight;
  static const std::map<std::string, WeightSelection> presets{
      {"attn", WeightSelection({W::q, W::v, W::k, W::o})},
      {"mlp", WeightSelection({W::up, W::down, W::gate})},
      {"qv+up+down", WeightSelection({W::q, W::v, W::up, W::down})},
      {"qv+mlp", WeightSelection({W::q, W::v, W::up, W::down, W::gate})},
      {"all", WeightSelection::all()},
  };
  return presets;
}

std::vector<double> site_output(const AdapterSite& site, std::span<const double> w0_product,
                                std::span<const double> x) {
  if (site.A.cols() != x.size() || site.B.rows() != w0_product.size() || site.A.rows() != site.B.cols())
    throw ShapeError("site_output: shape mismatch");
  std::vector<double> ax(site.A.rows(), 0.0);
  for (std::size_t r = 0; r < site.A.rows(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) ax[r] += site.A(r, c) * x[c];
  std::vector<double> out(w0_product.begin(), w0_product.end());
  const double f = site.factor();
  for (std::size_t o = 0; o < out.size(); ++o) {
    double bax = 0.0;
    for (std::size_t r = 0; r < ax.size(); ++r) bax += site.B(o, r) * ax[r];
    out[o] += f * bax;
  }
  return out;
}

AdaptedModel::AdaptedModel(MicroTransformer base, WeightSelection selection, SiteScales scales,
                           std::vector<AdapterSite> sites)
    : base_(std::move(base)), selection_(std::move(selection)), scales_(std::move(scales)), sites_(std::move(sites)) {}

int AdaptedModel::find(std::size_t layer, Weight w) const {
  for (std::size_t i = 0; i < sites_.size(); ++i)
    if (sites_[i].layer == layer && sites_[i].weight == w) return static_cast<int>(i);
  return -1;
}

std::vector<Matrix*> AdaptedModel::trainable() {
  std::vector<Matrix*> out;
  for (AdapterSite& s : sites_) {
    out.push_back(&s.B);
    out.push_back(&s.A);
  }
  return out;
}

std::size_t AdaptedModel::parameter_count() const {
  std::size_t n = 0;
  for (const AdapterSite& s : sites_) n += s.B.size() + s.A.size();
  return n;
}

MicroTransformer AdaptedModel::merge() const {
  MicroTransformer merged = base_;
  for (const AdapterSite& s : sites_) {
    Matrix ba = kernels::matmul(s.B, s.A);
    Matrix& w = merged.layers[s.layer].weight(s.weight);
    const double f = s.factor();
    for (std::size_t i = 0; i < w.size(); ++i) w.values()[i] += f * ba.values()[i];
  }
  return merged;
}

AdaptedModel attach(const MicroTransformer& model, const WeightSelection& selection, const SiteScales& scales,
                    std::uint64_t init_seed) {
  const ModelConfig& cfg = model.config();
  if (selection.weights().empty()) throw ContractError("weight selection must not be empty");
  for (const ScaleSet* s : {&scales.attn, &scales.mlp})
    if (s->alpha.size() != cfg.n_layers || s->rank.size() != cfg.n_layers)
      throw ContractError("scale set length must equal the layer count");
  std::vector<AdapterSite> sites;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (Weight w : selection.weights()) {
      const ScaleSet& s = scales.for_weight(w);
      if (s.rank[l] == 0) continue;
      const Matrix& host = model.layers[l].weight(w);
      AdapterSite site{l, w, Matrix(host.rows(), s.rank[l]), Matrix(s.rank[l], host.cols()), s.alpha[l], s.rank[l]};
      std::mt19937_64 rng(io::derive_seed(init_seed, "adapter/" + std::to_string(l) + "/" +
                                                         std::string(weight_name(w))));
      std::normal_distribution<double> dist(0.0, 0.02);
      for (double& v : site.A.values()) v = dist(rng);
      sites.push_back(std::move(site));
    }
  return AdaptedModel(model, selection, scales, std::move(sites));
}

AdapterDelta::AdapterDelta(const AdaptedModel& adapted) : adapted_(&adapted) {}

AdapterDelta::AdapterDelta(const AdaptedModel& adapted, ad::Tape& tape) : adapted_(&adapted) {
  for (const AdapterSite& s : adapted.sites()) {
    leaves_.push_back(tape.parameter(s.B));
    leaves_.push_back(tape.parameter(s.A));
  }
}

ad::Var AdapterDelta::contribution(std::size_t layer, Weight w, ad::Var x) const {
  const int idx = adapted_->find(layer, w);
  if (idx < 0) return {};
  const AdapterSite& s = adapted_->sites()[static_cast<std::size_t>(idx)];
  ad::Var b, a;
  if (leaves_.empty()) {
    b = x.tape->constant(s.B);
    a = x.tape->constant(s.A);
  } else {
    if (leaves_.front().tape != x.tape) throw ContractError("adapter leaves are bound to another tape");
    b = leaves_[2 * static_cast<std::size_t>(idx)];
    a = leaves_[2 * static_cast<std::size_t>(idx) + 1];
  }
  return ad::scale(ad::matmul_nt(ad::matmul_nt(x, a), b), s.factor());
}

ForwardResult forward(const AdaptedModel& model, std::span<const int> tokens, RunArgs args) {
  AdapterDelta delta(model);
  args.delta = &delta;
  return forward(model.base(), tokens, args);
}

double next_token_prob(const AdaptedModel& model, std::span<const int> prompt, std::span<const int> target) {
  AdapterDelta delta(model);
  RunArgs args;
  args.delta = &delta;
  return next_token_prob(model.base(), prompt, target, args);
}

std::vector<int> generate(const AdaptedModel& model, std::span<const int> prompt, std::size_t max_new) {
  AdapterDelta delta(model);
  return generate(model.base(), prompt, max_new, &delta);
}

namespace {

std::string site_tensor(const AdapterSite& s, const char* which) {
  return "layers." + std::to_string(s.layer) + "." + std::string(weight_name(s.weight)) + "." + which;
}

}  // namespace

void save_adapters(const AdaptedModel& model, const std::filesystem::path& path) {
  nlohmann::json sites = nlohmann::json::array();
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (const AdapterSite& s : model.sites()) {
    sites.push_back({{"layer", s.layer}, {"weight", weight_name(s.weight)}, {"alpha", s.alpha}, {"rank", s.rank}});
    tensors.emplace_back(site_tensor(s, "B"), &s.B);
    tensors.emplace_back(site_tensor(s, "A"), &s.A);
  }
  nlohmann::json meta{{"selection", model.selection().label()},
                      {"scales", to_json(model.scales())},
                      {"base_config", model.base().config()},
                      {"sites", sites}};
  write_container(path, "adapters", meta, tensors);
}

AdaptedModel load_adapters(const MicroTransformer& base, const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  if (c.kind != "adapters") throw FormatError("expected an adapter checkpoint, found '" + c.kind + "'");
  try {
    if (c.meta.at("base_config").get<ModelConfig>().n_layers != base.config().n_layers)
      throw FormatError("adapter checkpoint was built for a different model");
    const WeightSelection selection = WeightSelection::parse(c.meta.at("selection").get<std::string>());
    const SiteScales scales = site_scales_from_json(c.meta.at("scales"));
    std::vector<AdapterSite> sites;
    for (const auto& js : c.meta.at("sites")) {
      AdapterSite s;
      s.layer = js.at("layer").get<std::size_t>();
      s.weight = parse_weight(js.at("weight").get<std::string>());
      s.alpha = js.at("alpha").get<double>();
      s.rank = js.at("rank").get<std::size_t>();
      s.B = c.tensor(site_tensor(s, "B"));
      s.A = c.tensor(site_tensor(s, "A"));
      const Matrix& host = base.layers.at(s.layer).weight(s.weight);
      if (s.B.rows() != host.rows() || s.A.cols() != host.cols() || s.B.cols() != s.rank || s.A.rows() != s.rank)
        throw FormatError("adapter tensor shape does not match its host weight");
      sites.push_back(std::move(s));
    }
    return AdaptedModel(base, selection, scales, std::move(sites));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed adapter checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("malformed adapter checkpoint: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw FormatError(std::string("malformed adapter checkpoint: ") + e.what());
  }
}

}  // namespace medlasa
