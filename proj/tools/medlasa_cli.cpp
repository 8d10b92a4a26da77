#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "medlasa/cli/commands.hpp"
#include "medlasa/errors.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kUpstreamMissing = 3;
constexpr int kTrainingFailure = 4;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace medlasa;
  CLI::App app{"Layer-wise scalable adapter editing on a micro transformer"};
  app.require_subcommand(1);
  Options opt;
  const std::pair<const char*, void (*)(const cli::Context&)> commands[] = {
      {"build-data", cli::cmd_build_data}, {"pretrain", cli::cmd_pretrain}, {"trace", cli::cmd_trace},
      {"edit", cli::cmd_edit},             {"eval", cli::cmd_eval},         {"ablate", cli::cmd_ablate},
      {"heatmap", cli::cmd_heatmap}};
  const std::pair<const char*, const char*> help[] = {
      {"build-data", "Generate the knowledge graph, edit records and pretraining corpus"},
      {"pretrain", "Train the base model on the fact corpus"},
      {"trace", "Causal traces of the selected records"},
      {"edit", "Train adapters for every selected record"},
      {"eval", "Score the edited models and write the report"},
      {"ablate", "Edit and score every strategy / weight / hyper-parameter cell"},
      {"heatmap", "Render traces as SVG heatmaps"}};
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    CLI::App* sub = app.add_subcommand(commands[i].first, help[i].second);
    sub->add_option("--config", opt.config, "JSON experiment config (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory")->required();
    sub->add_option("--seed", opt.seed, "Overrides the config seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    cli::Context ctx;
    ctx.config = opt.config.empty() ? cli::parse_config(nlohmann::json::object()) : cli::load_config(opt.config);
    if (opt.seed) ctx.config.seed = *opt.seed;
    ctx.layout.root = opt.out;
    ctx.log = &std::cerr;
    for (const auto& [name, fn] : commands)
      if (app.got_subcommand(name)) fn(ctx);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const UpstreamError& e) {
    std::cerr << "missing input: " << e.what() << "\n";
    return kUpstreamMissing;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kTrainingFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
