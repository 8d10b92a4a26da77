#include "medlasa/cli/commands.hpp"

#include <chrono>
#include <exception>
#include <ostream>

#include "medlasa/cli/heatmap.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/model/checkpoint.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

void echo_config(const Context& ctx, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_file_atomic(dir / "config.json", to_json(ctx.config).dump(2) + "\n");
}

void require(const fs::path& path, const std::string& command) {
  if (!fs::exists(path))
    throw UpstreamError("missing " + path.string() + "; run `medlasa " + command + "` with the same --out first");
}

json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string jsonl(const std::vector<json>& lines) {
  std::string out;
  for (const json& j : lines) out += j.dump() + "\n";
  return out;
}

bool needs_traces(Strategy s) { return s != Strategy::fixed && s != Strategy::random; }

std::vector<std::string> word_labels(const Tokenizer& tok, std::span<const int> prompt) {
  std::vector<std::string> out;
  for (int id : prompt) out.push_back(id == Tokenizer::kBos ? "<bos>" : tok.word(id));
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Tokenizer load_tokenizer(const Layout& layout) {
  require(layout.tokenizer(), "build-data");
  return Tokenizer::from_json(read_json(layout.tokenizer()));
}

MicroTransformer load_base(const Layout& layout) {
  require(layout.checkpoint(), "pretrain");
  return load_checkpoint(layout.checkpoint());
}

std::vector<EditRecord> load_records(const Context& ctx, const std::string& dataset) {
  const fs::path path = ctx.layout.split(dataset, ctx.config.records.split);
  require(path, "build-data");
  std::vector<EditRecord> records = load_split(path);
  const std::size_t cap = ctx.config.records.max_records;
  if (cap > 0 && records.size() > cap) records.resize(cap);
  return records;
}

TraceSet load_traces(const Context& ctx, const std::string& dataset, std::span<const EditRecord> records,
                     Strategy strategy) {
  TraceSet out;
  if (!needs_traces(strategy)) return out;
  const bool full = ctx.config.edit.scale_source == "full";
  for (const EditRecord& r : records) {
    for (const char* module : full ? std::vector<const char*>{"full"} : std::vector<const char*>{"attn", "mlp"}) {
      const fs::path path = ctx.layout.trace(dataset, r.id, module);
      require(path, "trace");
      ImpactMatrix m = load_trace(path);
      (full ? out.full : std::string(module) == "attn" ? out.attn : out.mlp).push_back(std::move(m));
    }
  }
  return out;
}

EditPlan edit_plan(const ExperimentConfig& cfg, Strategy strategy, const std::string& weights, double alpha_o,
                   std::size_t r_o) {
  EditPlan p;
  p.request = {strategy, alpha_o, r_o, 0};
  p.selection = WeightSelection::parse(weights);
  p.full_scales = cfg.edit.scale_source == "full";
  p.train = cfg.edit_train_config(0);
  return p;
}

std::uint64_t record_seed(std::uint64_t edit_seed, const std::string& dataset, const std::string& id) {
  return io::derive_seed(edit_seed, dataset + "/" + id);
}

std::vector<json> edit_records(const MicroTransformer& base, const Tokenizer& tok, const std::string& dataset,
                               std::span<const EditRecord> records, const TraceSet& traces, const EditPlan& plan,
                               std::uint64_t edit_seed,
                               const std::function<void(std::size_t, const EditOutcome&)>& on_edit) {
  const bool with_traces = needs_traces(plan.request.strategy);
  if (with_traces) {
    const std::size_t want = plan.full_scales ? traces.full.size() : std::min(traces.attn.size(), traces.mlp.size());
    if (want != records.size()) throw ContractError("trace-driven strategies need one trace per record");
  }
  std::vector<json> log(records.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      const EditRecord& r = records[i];
      const std::uint64_t seed = record_seed(edit_seed, dataset, r.id);
      TraceContext tc;
      if (with_traces) {
        tc.full = plan.full_scales;
        if (plan.full_scales) {
          tc.item_full = &traces.full[i];
          tc.dataset_full = traces.full;
        } else {
          tc.item_attn = &traces.attn[i];
          tc.item_mlp = &traces.mlp[i];
          tc.dataset_attn = traces.attn;
          tc.dataset_mlp = traces.mlp;
        }
      }
      ScaleRequest request = plan.request;
      request.seed = seed;
      const SiteScales scales = resolve_scales(request, base.config().n_layers, tc);
      EditTrainConfig train = plan.train;
      train.seed = seed;
      const QaTokens pair = edit_pair(r, tok);
      const EditOutcome outcome = apply_edit(base, pair.prompt, pair.target, plan.selection, scales, train);
      log[i] = edit_log_entry(r.id, request, outcome, seed);
      log[i]["dataset"] = dataset;
      if (on_edit) on_edit(i, outcome);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return log;
}

StrategyRun run_strategy(const MicroTransformer& base, const Tokenizer& tok, const std::string& dataset,
                         std::span<const EditRecord> records, const TraceSet& traces, const EditPlan& plan,
                         std::uint64_t edit_seed, const EvalOptions& options) {
  StrategyRun run;
  run.records.resize(records.size());
  EvalOptions inner = options;
  inner.parallel = false;
  run.log = edit_records(base, tok, dataset, records, traces, plan, edit_seed,
                         [&](std::size_t i, const EditOutcome& o) {
                           run.records[i] = evaluate_record(base, o.adapted, records[i], tok, inner);
                         });
  run.report = aggregate(run.records);
  return run;
}

void cmd_build_data(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.config;
  const Layout& L = ctx.layout;
  const Benchmark b = build_benchmark(cfg.bench_config());
  for (const auto* set : {&b.facts, &b.explanations}) {
    const DatasetCheck check = check_records(*set, b.tokenizer);
    if (!check.ok())
      throw GenerationError("dataset check failed: " + std::to_string(check.unknown_tokens) + " unknown tokens, " +
                            std::to_string(check.span_failures) + " span failures, " + std::to_string(check.leaks) +
                            " leaks");
  }
  fs::create_directories(L.data());
  io::write_file_atomic(L.data() / "kg.json", to_json(b.kg).dump(2) + "\n");
  io::write_file_atomic(L.tokenizer(), b.tokenizer.to_json().dump(2) + "\n");
  const std::size_t n_fact_entries = 2 * b.facts.size();
  const std::vector<CorpusEntry> facts(b.corpus.begin(), b.corpus.begin() + static_cast<long>(n_fact_entries));
  const std::vector<CorpusEntry> expl(b.corpus.begin() + static_cast<long>(n_fact_entries), b.corpus.end());
  io::write_file_atomic(L.corpus(),
                        json{{"facts", corpus_to_json(facts)}, {"explanations", corpus_to_json(expl)}}.dump(2) + "\n");
  export_dataset(b.facts, cfg.data.split, io::derive_seed(cfg.sub_seed("data"), "split/medcf"), L.data() / "medcf");
  if (!b.explanations.empty())
    export_dataset(b.explanations, cfg.data.split, io::derive_seed(cfg.sub_seed("data"), "split/medfe"),
                   L.data() / "medfe");
  json summary{{"facts", b.facts.size()},
               {"explanations", b.explanations.size()},
               {"vocab_size", b.tokenizer.size()},
               {"corpus_entries", b.corpus.size()},
               {"rotate_final_loss", b.rotate_loss.empty() ? 0.0 : b.rotate_loss.back()},
               {"notes", b.notes}};
  io::write_file_atomic(L.data() / "summary.json", summary.dump(2) + "\n");
  echo_config(ctx, L.data());
  say(ctx, "build-data: " + std::to_string(b.facts.size()) + " fact records, " + std::to_string(b.explanations.size()) +
               " explanation records, vocab " + std::to_string(b.tokenizer.size()) + " (" +
               std::to_string(seconds_since(t0)) + " s)");
}

void cmd_pretrain(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const Layout& L = ctx.layout;
  const Tokenizer tok = load_tokenizer(L);
  require(L.corpus(), "build-data");
  const json corpus = read_json(L.corpus());
  std::vector<CorpusEntry> entries = corpus_from_json(corpus.at("facts"));
  if (ctx.config.pretrain.corpus == "all") {
    const auto more = corpus_from_json(corpus.at("explanations"));
    entries.insert(entries.end(), more.begin(), more.end());
  }
  std::vector<TokenizedFact> facts;
  for (const CorpusEntry& e : entries) facts.push_back({tok.encode_prompt(e.prompt), tok.encode(e.answer)});

  std::vector<json> log;
  const PretrainResult r =
      pretrain_base(facts, ctx.config.model_config(tok.size()), ctx.config.pretrain_config(),
                    [&](std::size_t epoch, double loss) {
                      log.push_back({{"epoch", epoch}, {"loss", loss}});
                      if (epoch % 10 == 0) say(ctx, "pretrain: epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
                    });
  fs::create_directories(L.model());
  save_checkpoint(r.model, L.checkpoint());
  io::write_file_atomic(L.model() / "pretrain_log.jsonl", jsonl(log));
  io::write_file_atomic(L.model() / "summary.json",
                        json{{"epochs", r.epochs},
                             {"fact_accuracy", r.accuracy},
                             {"corpus_entries", facts.size()},
                             {"final_loss", r.loss_curve.back()}}
                                .dump(2) +
                            "\n");
  echo_config(ctx, L.model());
  say(ctx, "pretrain: accuracy " + std::to_string(r.accuracy) + " after " + std::to_string(r.epochs) + " epochs (" +
               std::to_string(seconds_since(t0)) + " s)");
}

void cmd_trace(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.config;
  const Tokenizer tok = load_tokenizer(ctx.layout);
  const MicroTransformer base = load_base(ctx.layout);
  for (const std::string& dataset : cfg.records.datasets) {
    const std::vector<EditRecord> records = load_records(ctx, dataset);
    std::vector<std::vector<int>> prompts;
    std::vector<Span> spans;
    for (const EditRecord& r : records) {
      prompts.push_back(tok.encode_prompt(r.question));
      spans.push_back(r.prompt_span());
    }
    const double v = cfg.trace.noise_multiplier * subject_embedding_std(base, prompts, spans);
    TraceOptions options;
    options.window = cfg.trace.window;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const EditRecord& r = records[i];
      NoiseSpec noise;
      noise.std = v;
      noise.n_samples = cfg.trace.n_samples;
      noise.seed = io::derive_seed(cfg.sub_seed("trace"), dataset + "/" + r.id);
      noise.subject = spans[i];
      const std::vector<int> answer = tok.encode(r.answer_true);
      for (const std::string& module : cfg.trace.modules) {
        ImpactMatrix m = trace_impact(base, prompts[i], answer, noise, parse_module(module), options);
        m.example_id = r.id;
        m.tokens = word_labels(tok, prompts[i]);
        fs::create_directories(ctx.layout.traces() / dataset);
        save_trace(m, ctx.layout.trace(dataset, r.id, module));
      }
      say(ctx, "trace: " + dataset + " " + std::to_string(i + 1) + "/" + std::to_string(records.size()));
    }
    io::write_file_atomic(ctx.layout.traces() / dataset / "summary.json",
                          json{{"records", records.size()}, {"noise_std", v}, {"modules", cfg.trace.modules}}.dump(2) +
                              "\n");
  }
  echo_config(ctx, ctx.layout.traces());
  say(ctx, "trace: done (" + std::to_string(seconds_since(t0)) + " s)");
}

void cmd_edit(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.config;
  const Tokenizer tok = load_tokenizer(ctx.layout);
  const MicroTransformer base = load_base(ctx.layout);
  const Strategy strategy = parse_strategy(cfg.edit.strategy);
  const EditPlan plan = edit_plan(cfg, strategy, cfg.edit.weights, cfg.edit.alpha_o, cfg.edit.r_o);
  for (const std::string& dataset : cfg.records.datasets) {
    const std::vector<EditRecord> records = load_records(ctx, dataset);
    const TraceSet traces = load_traces(ctx, dataset, records, strategy);
    const fs::path dir = ctx.layout.edit_dir(dataset, cfg.edit.strategy);
    fs::create_directories(dir);
    const auto log = edit_records(base, tok, dataset, records, traces, plan, cfg.sub_seed("edit"),
                                  [&](std::size_t i, const EditOutcome& o) {
                                    save_adapters(o.adapted, dir / (records[i].id + ".adapters"));
                                  });
    io::write_file_atomic(dir / "run_log.jsonl", jsonl(log));
    say(ctx, "edit: " + dataset + " " + std::to_string(records.size()) + " edits with " + cfg.edit.strategy);
  }
  echo_config(ctx, ctx.layout.edits());
  say(ctx, "edit: done (" + std::to_string(seconds_since(t0)) + " s)");
}

void cmd_eval(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.config;
  const Tokenizer tok = load_tokenizer(ctx.layout);
  const MicroTransformer base = load_base(ctx.layout);
  const EvalOptions options = cfg.eval_options();
  std::string csv = csv_header() + "\n";
  for (const std::string& dataset : cfg.records.datasets) {
    const std::vector<EditRecord> records = load_records(ctx, dataset);
    const fs::path dir = ctx.layout.edit_dir(dataset, cfg.edit.strategy);
    for (const EditRecord& r : records) require(dir / (r.id + ".adapters"), "edit");
    std::vector<RecordEval> evals(records.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) if (options.parallel)
    for (std::size_t i = 0; i < records.size(); ++i) {
      try {
        const AdaptedModel adapted = load_adapters(base, dir / (records[i].id + ".adapters"));
        EvalOptions inner = options;
        inner.parallel = false;
        evals[i] = evaluate_record(base, adapted, records[i], tok, inner);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    const EvalReport report = aggregate(evals);
    const fs::path out = ctx.layout.eval() / dataset / cfg.edit.strategy;
    fs::create_directories(out);
    std::vector<json> lines;
    for (const RecordEval& e : evals) lines.push_back(to_json(e));
    io::write_file_atomic(out / "records.jsonl", jsonl(lines));
    io::write_file_atomic(out / "report.json", to_json(report).dump(2) + "\n");
    const RunLabel label{dataset, cfg.edit.strategy, WeightSelection::parse(cfg.edit.weights).label(), cfg.edit.alpha_o,
                         cfg.edit.r_o, cfg.seed};
    csv += csv_row(report, label) + "\n";
    say(ctx, "eval: " + dataset + " eff " + std::to_string(report.efficacy) + " gen " +
                 std::to_string(report.generality) + " avg " + std::to_string(report.average));
  }
  fs::create_directories(ctx.layout.eval());
  io::write_file_atomic(ctx.layout.eval() / (cfg.edit.strategy + ".csv"), csv);
  echo_config(ctx, ctx.layout.eval());
  say(ctx, "eval: done (" + std::to_string(seconds_since(t0)) + " s)");
}

void cmd_ablate(const Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = ctx.config;
  const AblateSection& a = cfg.ablate;
  const Tokenizer tok = load_tokenizer(ctx.layout);
  const MicroTransformer base = load_base(ctx.layout);
  EvalOptions options = cfg.eval_options();
  std::string csv = csv_header() + "\n";
  for (const std::string& dataset : cfg.records.datasets) {
    const std::vector<EditRecord> records = load_records(ctx, dataset);
    const TraceSet traces = load_traces(ctx, dataset, records, Strategy::medlasa);
    for (const std::string& name : a.strategies) {
      const Strategy strategy = parse_strategy(name);
      const std::size_t repeats = strategy == Strategy::random ? a.random_repeats : 1;
      for (const std::string& weights : a.weights)
        for (double alpha_o : a.alpha_o)
          for (std::size_t r_o : a.r_o)
            for (std::size_t rep = 0; rep < repeats; ++rep) {
              ExperimentConfig repeat = cfg;
              repeat.seed = cfg.seed + rep;
              const EditPlan plan = edit_plan(cfg, strategy, weights, alpha_o, r_o);
              const StrategyRun run =
                  run_strategy(base, tok, dataset, records, needs_traces(strategy) ? traces : TraceSet{}, plan,
                               repeat.sub_seed("edit"), options);
              const RunLabel label{dataset, name, plan.selection.label(), alpha_o, r_o, repeat.seed};
              csv += csv_row(run.report, label) + "\n";
              say(ctx, "ablate: " + csv_row(run.report, label));
            }
    }
  }
  fs::create_directories(ctx.layout.ablate());
  io::write_file_atomic(ctx.layout.ablate() / "grid.csv", csv);
  echo_config(ctx, ctx.layout.ablate());
  say(ctx, "ablate: done (" + std::to_string(seconds_since(t0)) + " s)");
}

void cmd_heatmap(const Context& ctx) {
  const ExperimentConfig& cfg = ctx.config;
  const HeatmapSection& h = cfg.heatmap;
  std::size_t rendered = 0;
  for (const std::string& dataset : cfg.records.datasets) {
    std::vector<std::string> ids = h.records;
    if (ids.empty())
      for (const EditRecord& r : load_records(ctx, dataset)) ids.push_back(r.id);
    for (const std::string& id : ids)
      for (const std::string& module : cfg.trace.modules) {
        const fs::path path = ctx.layout.trace(dataset, id, module);
        require(path, "trace");
        const ImpactMatrix m = load_trace(path);
        HeatmapSpec spec;
        spec.cell = h.cell;
        spec.low = parse_color(h.low);
        spec.high = parse_color(module == "attn" ? h.high_attn : module == "mlp" ? h.high_mlp : h.high_full);
        spec.title = id + ": restoring " + (module == "full" ? std::string("hidden states") : module + " output") +
                     " (p_clean " + std::to_string(m.p_clean).substr(0, 6) + ")";
        fs::create_directories(ctx.layout.heatmaps() / dataset);
        io::write_file_atomic(ctx.layout.heatmaps() / dataset / (id + "." + module + ".svg"), render_heatmap(m, spec));
        ++rendered;
      }
  }
  echo_config(ctx, ctx.layout.heatmaps());
  say(ctx, "heatmap: " + std::to_string(rendered) + " SVG files");
}

}  // namespace medlasa::cli
