#include "medlasa/tracing/causal_trace.hpp"

#include <cmath>
#include <exception>
#include <random>

#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

void NoiseSpec::validate(std::size_t prompt_len) const {
  if (!std::isfinite(std) || std < 0.0) throw ContractError("noise std must be finite and >= 0");
  if (n_samples == 0) throw ContractError("noise needs at least one sample");
  if (subject.empty() || subject.end > prompt_len) throw ContractError("subject span must be non-empty and inside the prompt");
}

EmbeddingNoise draw_noise(const NoiseSpec& n, std::size_t s, std::size_t d_model) {
  EmbeddingNoise out;
  for (std::size_t r = n.subject.begin; r < n.subject.end; ++r) out.rows.push_back(r);
  out.values = Matrix(out.rows.size(), d_model);
  std::mt19937_64 rng(io::derive_seed(sample_seed(n, s), "trace-noise"));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : out.values.values()) v = n.std * dist(rng);
  return out;
}

std::string_view module_name(TraceModule m) {
  switch (m) {
    case TraceModule::full: return "full";
    case TraceModule::attn: return "attn";
    case TraceModule::mlp: return "mlp";
  }
  return "?";
}

TraceModule parse_module(std::string_view name) {
  if (name == "full") return TraceModule::full;
  if (name == "attn") return TraceModule::attn;
  if (name == "mlp") return TraceModule::mlp;
  throw ContractError("unknown trace module '" + std::string(name) + "'");
}

namespace {

std::vector<int> run_sequence(std::span<const int> prompt, std::span<const int> answer) {
  if (prompt.empty()) throw ContractError("trace: empty prompt");
  if (answer.empty()) throw ContractError("trace: answer must have at least one token");
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), answer.begin(), answer.end() - 1);
  return seq;
}

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

CleanRun clean_run(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer) {
  const std::vector<int> seq = run_sequence(prompt, answer);
  RunArgs args;
  args.capture = CaptureFlags::all();
  ForwardResult r = forward(model, seq, args);
  return {sequence_prob_from_logits(r.logits, prompt.size(), answer), std::move(*r.capture)};
}

CorruptedRun corrupted_run(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer,
                           const NoiseSpec& noise) {
  noise.validate(prompt.size());
  const std::vector<int> seq = run_sequence(prompt, answer);
  CorruptedRun out;
  double total = 0.0;
  for (std::size_t s = 0; s < noise.n_samples; ++s) {
    RunArgs args;
    args.capture = CaptureFlags::all();
    args.noise = draw_noise(noise, s, model.config().d_model);
    ForwardResult r = forward(model, seq, args);
    const double p = sequence_prob_from_logits(r.logits, prompt.size(), answer);
    out.sample_probs.push_back(p);
    out.captures.push_back(std::move(*r.capture));
    total += p;
  }
  out.p_corrupted = total / static_cast<double>(noise.n_samples);
  return out;
}

RunArgs restoration_args(const ModelConfig& cfg, const TraceCapture& clean, const TraceCapture& corrupted,
                         const EmbeddingNoise& noise, TraceModule target, std::size_t token, std::size_t layer,
                         std::size_t window) {
  RunArgs args;
  if (layer == 0) {
    args.noise = noise;
  } else {
    // Blocks below `layer` are unaffected by the restoration, so resume from
    // the corrupted residual.
    args.start_layer = layer;
    args.start_residual = corrupted.residual[layer - 1];
  }
  args.patches.push_back({Site::residual, token, layer, as_vector(clean.at(Site::residual, token, layer))});
  if (target != TraceModule::full) {
    const Site frozen = target == TraceModule::attn ? Site::mlp_out : Site::attn_out;
    const std::size_t w = window == 0 ? cfg.n_layers - layer : window;
    FreezeSpec f{frozen, token, layer, std::min(layer + w - 1, cfg.n_layers - 1), {}};
    for (std::size_t l = f.layer_begin; l <= f.layer_end; ++l)
      f.values.push_back(as_vector(corrupted.at(frozen, token, l)));
    args.freezes.push_back(std::move(f));
  }
  return args;
}

ImpactMatrix trace_impact(const MicroTransformer& model, std::span<const int> prompt, std::span<const int> answer,
                          const NoiseSpec& noise, TraceModule target, const TraceOptions& options) {
  const ModelConfig& cfg = model.config();
  const std::vector<int> seq = run_sequence(prompt, answer);
  const CleanRun clean = clean_run(model, prompt, answer);
  const CorruptedRun corrupted = corrupted_run(model, prompt, answer, noise);
  std::vector<EmbeddingNoise> draws;
  for (std::size_t s = 0; s < noise.n_samples; ++s) draws.push_back(draw_noise(noise, s, cfg.d_model));

  const std::size_t T = prompt.size(), L = cfg.n_layers;
  ImpactMatrix out;
  out.target = target;
  out.values = Matrix(T, L);
  out.p_clean = clean.p_clean;
  out.p_corrupted = corrupted.p_corrupted;
  out.noise = noise;

  auto cell = [&](std::size_t i, std::size_t l) {
    double total = 0.0;
    for (std::size_t s = 0; s < noise.n_samples; ++s) {
      RunArgs args = restoration_args(cfg, clean.capture, corrupted.captures[s], draws[s], target, i, l, options.window);
      total += sequence_prob_from_logits(forward(model, seq, args).logits, T, answer);
    }
    out.values(i, l) = total / static_cast<double>(noise.n_samples);
  };

  const std::ptrdiff_t n_cells = static_cast<std::ptrdiff_t>(T * L);
  if (!options.parallel) {
    for (std::ptrdiff_t c = 0; c < n_cells; ++c) cell(static_cast<std::size_t>(c) / L, static_cast<std::size_t>(c) % L);
    return out;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < n_cells; ++c) {
    try {
      cell(static_cast<std::size_t>(c) / L, static_cast<std::size_t>(c) % L);
    } catch (...) {
#pragma omp critical(trace_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double subject_embedding_std(const MicroTransformer& model, std::span<const std::vector<int>> prompts,
                             std::span<const Span> subjects) {
  if (prompts.size() != subjects.size()) throw ContractError("one subject span per prompt");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    const Span& sp = subjects[k];
    if (sp.end > prompts[k].size()) throw ContractError("subject span outside prompt");
    for (std::size_t t = sp.begin; t < sp.end; ++t) {
      const auto tok = static_cast<std::size_t>(prompts[k][t]);
      if (tok >= model.config().vocab_size) throw VocabError("token outside vocabulary");
      for (std::size_t c = 0; c < model.config().d_model; ++c) {
        const double v = model.token_embedding(tok, c) + model.position_embedding(t, c);
        sum += v;
        sq += v * v;
        ++n;
      }
    }
  }
  if (n == 0) throw ContractError("no subject tokens to measure");
  const double mean = sum / static_cast<double>(n);
  return std::sqrt(std::max(0.0, sq / static_cast<double>(n) - mean * mean));
}

nlohmann::json to_json(const ImpactMatrix& m) {
  return {{"example_id", m.example_id},
          {"target_module", module_name(m.target)},
          {"p_clean", m.p_clean},
          {"p_corrupted", m.p_corrupted},
          {"dims", {m.values.rows(), m.values.cols()}},
          {"values", std::vector<double>(m.values.values().begin(), m.values.values().end())},
          {"noise",
           {{"std", m.noise.std},
            {"n_samples", m.noise.n_samples},
            {"seed", m.noise.seed},
            {"subject_span", {m.noise.subject.begin, m.noise.subject.end}}}},
          {"tokens", m.tokens}};
}

ImpactMatrix impact_from_json(const nlohmann::json& j) {
  try {
    ImpactMatrix m;
    m.example_id = j.at("example_id").get<std::string>();
    m.target = parse_module(j.at("target_module").get<std::string>());
    m.p_clean = j.at("p_clean").get<double>();
    m.p_corrupted = j.at("p_corrupted").get<double>();
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    auto values = j.at("values").get<std::vector<double>>();
    if (dims.size() != 2 || values.size() != dims[0] * dims[1]) throw FormatError("trace dims do not match values");
    m.values = Matrix(dims[0], dims[1]);
    std::copy(values.begin(), values.end(), m.values.values().begin());
    const auto& n = j.at("noise");
    m.noise.std = n.at("std").get<double>();
    m.noise.n_samples = n.at("n_samples").get<std::size_t>();
    m.noise.seed = n.at("seed").get<std::uint64_t>();
    const auto span = n.at("subject_span").get<std::vector<std::size_t>>();
    if (span.size() != 2) throw FormatError("subject_span must be [begin, end]");
    m.noise.subject = {span[0], span[1]};
    if (j.contains("tokens")) m.tokens = j.at("tokens").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed trace: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("malformed trace: ") + e.what());
  }
}

void save_trace(const ImpactMatrix& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_json(m).dump(2) + "\n");
}

ImpactMatrix load_trace(const std::filesystem::path& path) {
  try {
    return impact_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("trace is not valid JSON: ") + e.what());
  }
}

}  // namespace medlasa
