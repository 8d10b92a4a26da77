#include "medlasa/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "medlasa/errors.hpp"
#include "medlasa/scaling/scales.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa::cli {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read as size_t");

namespace {

using nlohmann::json;

struct Limits {
  double lo = -1e300;
  double hi = 1e300;
  bool lo_open = false;
};

using Choices = std::vector<std::string>;

const Choices kStrategies{"medlasa", "fixed", "random", "medlasa-no-sr", "medlasa-no-sa"};
const Choices kModules{"full", "attn", "mlp"};
const Choices kDatasets{"medcf", "medfe"};

// One description of the config drives parsing, echoing and the schema.
template <class V>
void visit(ExperimentConfig& c, V& v) {
  v.field("seed", c.seed, Limits{0, 1.8446744073709552e19});
  v.section("data", [&] {
    auto& d = c.data;
    v.field("n_entities", d.n_entities, Limits{2, 1e6});
    v.field("n_relations", d.n_relations, Limits{1, 6});
    v.field("n_triples", d.n_triples, Limits{1, 1e6});
    v.field("tail_pool", d.tail_pool, Limits{2, 1e6});
    v.field("k", d.k, Limits{1, 100});
    v.field("explanation_records", d.explanation_records, Limits{0, 1e6});
    v.field("split", d.split, Limits{0, 1});
    v.field("rotate_dim", d.rotate_dim, Limits{2, 1024});
    v.field("rotate_epochs", d.rotate_epochs, Limits{1, 1e6});
    v.field("rotate_margin", d.rotate_margin, Limits{0, 1e3, true});
    v.field("rotate_negatives", d.rotate_negatives, Limits{1, 1e3});
    v.field("rotate_lr", d.rotate_lr, Limits{0, 10, true});
  });
  v.section("model", [&] {
    auto& m = c.model;
    v.field("n_layers", m.n_layers, Limits{1, 256});
    v.field("d_model", m.d_model, Limits{1, 8192});
    v.field("n_heads", m.n_heads, Limits{1, 256});
    v.field("d_ff", m.d_ff, Limits{1, 32768});
    v.field("max_seq", m.max_seq, Limits{2, 4096});
    v.field("norm_eps", m.norm_eps, Limits{0, 1, true});
  });
  v.section("pretrain", [&] {
    auto& p = c.pretrain;
    v.field("corpus", p.corpus, Choices{"all", "facts"});
    v.field("max_epochs", p.max_epochs, Limits{1, 1e6});
    v.field("batch_size", p.batch_size, Limits{1, 1e6});
    v.field("lr", p.lr, Limits{0, 10, true});
    v.field("target_accuracy", p.target_accuracy, Limits{0, 1});
    v.field("eval_every", p.eval_every, Limits{1, 1e6});
  });
  v.section("records", [&] {
    auto& r = c.records;
    v.field("datasets", r.datasets, kDatasets);
    v.field("split", r.split, Choices{"train", "valid", "test"});
    v.field("max_records", r.max_records, Limits{0, 1e9});
  });
  v.section("trace", [&] {
    auto& t = c.trace;
    v.field("noise_multiplier", t.noise_multiplier, Limits{0, 1e3});
    v.field("n_samples", t.n_samples, Limits{1, 1e4});
    v.field("window", t.window, Limits{0, 256});
    v.field("modules", t.modules, kModules);
  });
  v.section("edit", [&] {
    auto& e = c.edit;
    v.field("strategy", e.strategy, kStrategies);
    v.field("weights", e.weights, Choices{});
    v.field("alpha_o", e.alpha_o, Limits{0, 1e3, true});
    v.field("r_o", e.r_o, Limits{1, 1024});
    v.field("lr", e.lr, Limits{0, 10, true});
    v.field("max_steps", e.max_steps, Limits{1, 1e6});
    v.field("target_nll", e.target_nll, Limits{0, 1e3});
    v.field("scale_source", e.scale_source, Choices{"modules", "full"});
  });
  v.section("eval", [&] {
    auto& e = c.eval;
    v.field("continuation_tokens", e.continuation_tokens, Limits{3, 4096});
    v.field("fluency_weights", e.fluency_weights, Limits{0, 1});
    v.field("parallel", e.parallel);
  });
  v.section("ablate", [&] {
    auto& a = c.ablate;
    v.field("strategies", a.strategies, kStrategies);
    v.field("random_repeats", a.random_repeats, Limits{1, 1000});
    v.field("weights", a.weights, Choices{});
    v.field("alpha_o", a.alpha_o, Limits{0, 1e3, true});
    v.field("r_o", a.r_o, Limits{1, 1024});
  });
  v.section("heatmap", [&] {
    auto& h = c.heatmap;
    v.field("records", h.records, Choices{});
    v.field("cell", h.cell, Limits{4, 256});
    v.field("low", h.low, Choices{});
    v.field("high_full", h.high_full, Choices{});
    v.field("high_attn", h.high_attn, Choices{});
    v.field("high_mlp", h.high_mlp, Choices{});
  });
}

std::string type_name(const json& j) { return j.type_name(); }

class Reader {
 public:
  explicit Reader(const json& root) : stack_{{&root, ""}} {}

  template <class F>
  void section(const char* key, F&& body) {
    const json& obj = *stack_.back().node;
    const std::string path = stack_.back().path + key;
    seen_.back().insert(key);
    if (!obj.contains(key)) {
      static const json empty = json::object();
      push(empty, path);
    } else {
      const json& child = obj.at(key);
      if (!child.is_object()) throw ConfigError(path + ": expected an object, got " + type_name(child));
      push(child, path);
    }
    body();
    pop();
  }

  template <class T, class C>
  void field(const char* key, T& out, const C& constraint) {
    const json* v = lookup(key);
    if (v) read(*v, out, constraint, stack_.back().path + key);
  }

  void field(const char* key, bool& out) {
    const json* v = lookup(key);
    if (!v) return;
    if (!v->is_boolean()) throw ConfigError(stack_.back().path + key + ": expected a boolean");
    out = v->get<bool>();
  }

  void finish_root() { check_unknown(*stack_.back().node, ""); }

 private:
  struct Frame {
    const json* node;
    std::string path;
  };
  std::vector<Frame> stack_;
  std::vector<std::set<std::string>> seen_{{}};

  void push(const json& node, const std::string& path) {
    stack_.push_back({&node, path + "."});
    seen_.emplace_back();
  }
  void pop() {
    check_unknown(*stack_.back().node, stack_.back().path);
    stack_.pop_back();
    seen_.pop_back();
  }
  void check_unknown(const json& obj, const std::string& path) {
    if (!obj.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, v] : obj.items())
      if (!seen_.back().contains(k)) throw ConfigError("unknown config key: " + path + k);
  }
  const json* lookup(const char* key) {
    seen_.back().insert(key);
    const json& obj = *stack_.back().node;
    return obj.contains(key) ? &obj.at(key) : nullptr;
  }

  static double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number, got " + type_name(v));
    return v.get<double>();
  }
  static void check(double x, const Limits& l, const std::string& path) {
    if (!std::isfinite(x) || x < l.lo || x > l.hi || (l.lo_open && x == l.lo))
      throw ConfigError(path + ": value " + json(x).dump() + " out of range");
  }
  static void read(const json& v, std::size_t& out, const Limits& l, const std::string& path) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(path + ": expected a non-negative integer, got " + v.dump());
    out = v.get<std::size_t>();
    check(static_cast<double>(out), l, path);
  }
  static void read(const json& v, double& out, const Limits& l, const std::string& path) {
    out = number(v, path);
    check(out, l, path);
  }
  static void read(const json& v, std::string& out, const Choices& choices, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string, got " + type_name(v));
    out = v.get<std::string>();
    if (!choices.empty() && std::find(choices.begin(), choices.end(), out) == choices.end())
      throw ConfigError(path + ": unsupported value \"" + out + "\"");
  }
  template <std::size_t N>
  static void read(const json& v, std::array<double, N>& out, const Limits& l, const std::string& path) {
    if (!v.is_array() || v.size() != N) throw ConfigError(path + ": expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) read(v[i], out[i], l, path + "[" + std::to_string(i) + "]");
  }
  template <class T, class C>
  static void read(const json& v, std::vector<T>& out, const C& c, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array, got " + type_name(v));
    out.assign(v.size(), T{});
    for (std::size_t i = 0; i < v.size(); ++i) read(v[i], out[i], c, path + "[" + std::to_string(i) + "]");
  }
};

class Writer {
 public:
  json root = json::object();

  template <class F>
  void section(const char* key, F&& body) {
    json* parent = cur_;
    cur_ = &(*parent)[key];
    *cur_ = json::object();
    body();
    cur_ = parent;
  }
  template <class T, class C>
  void field(const char* key, const T& value, const C&) {
    (*cur_)[key] = value;
  }
  void field(const char* key, bool value) { (*cur_)[key] = value; }

 private:
  json* cur_ = &root;
};

class SchemaBuilder {
 public:
  json root = object_schema();

  template <class F>
  void section(const char* key, F&& body) {
    json* parent = cur_;
    (*parent)["properties"][key] = object_schema();
    cur_ = &(*parent)["properties"][key];
    body();
    cur_ = parent;
  }
  template <class T, class C>
  void field(const char* key, const T& value, const C& c) {
    (*cur_)["properties"][key] = describe(value, c);
  }
  void field(const char* key, bool) { (*cur_)["properties"][key] = {{"type", "boolean"}}; }

 private:
  json* cur_ = &root;

  static json object_schema() {
    return {{"type", "object"}, {"additionalProperties", false}, {"properties", json::object()}};
  }
  static json bounds(json s, const Limits& l) {
    s[l.lo_open ? "exclusiveMinimum" : "minimum"] = l.lo;
    s["maximum"] = l.hi;
    return s;
  }
  static json describe(std::size_t, const Limits& l) { return bounds({{"type", "integer"}}, l); }
  static json describe(double, const Limits& l) { return bounds({{"type", "number"}}, l); }
  static json describe(const std::string&, const Choices& c) {
    json s{{"type", "string"}};
    if (!c.empty()) s["enum"] = c;
    return s;
  }
  template <std::size_t N>
  static json describe(const std::array<double, N>&, const Limits& l) {
    return {{"type", "array"}, {"minItems", N}, {"maxItems", N}, {"items", describe(0.0, l)}};
  }
  template <class T, class C>
  static json describe(const std::vector<T>&, const C& c) {
    return {{"type", "array"}, {"items", describe(T{}, c)}};
  }
};

bool is_preset(double v) { return std::find(kScalePresets.begin(), kScalePresets.end(), v) != kScalePresets.end(); }

void check_weights(const std::string& text, const std::string& path) {
  try {
    WeightSelection::parse(text);
  } catch (const ContractError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void check_color(const std::string& c, const std::string& path) {
  const bool ok = c.size() == 7 && c[0] == '#' &&
                  std::all_of(c.begin() + 1, c.end(), [](char ch) { return std::isxdigit(static_cast<unsigned char>(ch)); });
  if (!ok) throw ConfigError(path + ": colours are #rrggbb");
}

void validate(const ExperimentConfig& c) {
  const double split = c.data.split[0] + c.data.split[1] + c.data.split[2];
  if (std::abs(split - 1.0) > 1e-9) throw ConfigError("data.split must sum to 1");
  if (c.model.d_model % c.model.n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
  if (c.data.rotate_dim % 2 != 0) throw ConfigError("data.rotate_dim must be even");
  if (c.records.datasets.empty()) throw ConfigError("records.datasets must not be empty");
  if (c.trace.modules.empty()) throw ConfigError("trace.modules must not be empty");
  if (!is_preset(c.edit.alpha_o)) throw ConfigError("edit.alpha_o must be one of 2, 8, 24, 32, 64, 128");
  if (!is_preset(static_cast<double>(c.edit.r_o))) throw ConfigError("edit.r_o must be one of 2, 8, 24, 32, 64, 128");
  for (double a : c.ablate.alpha_o)
    if (!is_preset(a)) throw ConfigError("ablate.alpha_o values must be one of 2, 8, 24, 32, 64, 128");
  for (std::size_t r : c.ablate.r_o)
    if (!is_preset(static_cast<double>(r))) throw ConfigError("ablate.r_o values must be one of 2, 8, 24, 32, 64, 128");
  if (c.ablate.strategies.empty() || c.ablate.weights.empty() || c.ablate.alpha_o.empty() || c.ablate.r_o.empty())
    throw ConfigError("ablate lists must not be empty");
  check_weights(c.edit.weights, "edit.weights");
  for (const std::string& w : c.ablate.weights) check_weights(w, "ablate.weights");
  check_color(c.heatmap.low, "heatmap.low");
  check_color(c.heatmap.high_full, "heatmap.high_full");
  check_color(c.heatmap.high_attn, "heatmap.high_attn");
  check_color(c.heatmap.high_mlp, "heatmap.high_mlp");
  const bool full_scales = c.edit.scale_source == "full";
  const auto& mods = c.trace.modules;
  auto has = [&](const char* m) { return std::find(mods.begin(), mods.end(), m) != mods.end(); };
  if (full_scales ? !has("full") : !(has("attn") && has("mlp")))
    throw ConfigError("trace.modules must include the traces edit.scale_source needs");
}

}  // namespace

std::uint64_t ExperimentConfig::sub_seed(std::string_view stage) const {
  static const std::set<std::string_view> stages{"data", "pretrain", "trace", "edit", "eval"};
  if (!stages.contains(stage)) throw ContractError("unknown seed stage: " + std::string(stage));
  return io::derive_seed(seed, stage);
}

BenchConfig ExperimentConfig::bench_config() const {
  BenchConfig b;
  b.kg.n_entities = data.n_entities;
  b.kg.n_relations = data.n_relations;
  b.kg.n_triples = data.n_triples;
  b.kg.tail_pool = data.tail_pool;
  b.rotate.dim = data.rotate_dim;
  b.rotate.epochs = data.rotate_epochs;
  b.rotate.margin = data.rotate_margin;
  b.rotate.n_neg = data.rotate_negatives;
  b.rotate.lr = data.rotate_lr;
  b.k = data.k;
  b.n_explanation_records = data.explanation_records;
  b.split = data.split;
  b.seed = sub_seed("data");
  return b;
}

ModelConfig ExperimentConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.n_layers = model.n_layers;
  m.d_model = model.d_model;
  m.n_heads = model.n_heads;
  m.d_ff = model.d_ff;
  m.max_seq = model.max_seq;
  m.norm_eps = model.norm_eps;
  m.vocab_size = vocab_size;
  m.seed = io::derive_seed(sub_seed("pretrain"), "init");
  return m;
}

PretrainConfig ExperimentConfig::pretrain_config() const {
  PretrainConfig p;
  p.max_epochs = pretrain.max_epochs;
  p.batch_size = pretrain.batch_size;
  p.lr = pretrain.lr;
  p.target_accuracy = pretrain.target_accuracy;
  p.eval_every = pretrain.eval_every;
  p.seed = sub_seed("pretrain");
  return p;
}

EditTrainConfig ExperimentConfig::edit_train_config(std::uint64_t seed_value) const {
  EditTrainConfig e;
  e.lr = edit.lr;
  e.max_steps = edit.max_steps;
  e.target_nll = edit.target_nll;
  e.seed = seed_value;
  return e;
}

EvalOptions ExperimentConfig::eval_options() const {
  EvalOptions o;
  o.continuation_tokens = eval.continuation_tokens;
  o.weights = {eval.fluency_weights[0], eval.fluency_weights[1]};
  o.parallel = eval.parallel;
  return o;
}

ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  Reader r(j);
  visit(c, r);
  r.finish_root();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  Writer w;
  visit(copy, w);
  return w.root;
}

nlohmann::json config_schema() {
  ExperimentConfig c;
  SchemaBuilder s;
  visit(c, s);
  s.root["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s.root["title"] = "medlasa experiment config";
  s.root["properties"]["edit"]["properties"]["weights"]["description"] =
      "Comma-separated weight names (W_q, W_k, W_v, W_o, W_gate, W_up, W_down) or a preset name";
  s.root["properties"]["edit"]["properties"]["alpha_o"]["enum"] = kScalePresets;
  std::vector<std::size_t> ranks;
  for (double v : kScalePresets) ranks.push_back(static_cast<std::size_t>(v));
  s.root["properties"]["edit"]["properties"]["r_o"]["enum"] = ranks;
  s.root["properties"]["ablate"]["properties"]["alpha_o"]["items"]["enum"] = kScalePresets;
  s.root["properties"]["ablate"]["properties"]["r_o"]["items"]["enum"] = ranks;
  return s.root;
}

}  // namespace medlasa::cli
