#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medlasa/benchkit/kg.hpp"
#include "medlasa/benchkit/rotate.hpp"
#include "medlasa/benchkit/tokenizer.hpp"
#include "medlasa/tracing/causal_trace.hpp"

namespace medlasa {

enum class LocalityClass { td, em, ss, ts, ct };
inline constexpr std::array<LocalityClass, 5> kLocalityClasses{LocalityClass::td, LocalityClass::em, LocalityClass::ss,
                                                               LocalityClass::ts, LocalityClass::ct};
std::string_view locality_key(LocalityClass c);  // "td", "em", ...
LocalityClass parse_locality(std::string_view key);

struct LocalityQa {
  std::string q;
  std::string a;
  friend bool operator==(const LocalityQa&, const LocalityQa&) = default;
};

struct EditRecord {
  std::string id;
  std::string type;
  std::string question;
  std::string subject;
  Span subject_span;  // word indices of the subject in the question
  std::string answer_true;
  std::string answer_edit;
  std::string rephrase;
  std::string topic;
  std::map<LocalityClass, std::vector<LocalityQa>> locality;
  int triple = -1;  // index into the KG; not exported

  /// Subject span inside the BOS-prefixed prompt.
  Span prompt_span() const { return {subject_span.begin + 1, subject_span.end + 1}; }
  friend bool operator==(const EditRecord& a, const EditRecord& b);
};

nlohmann::json to_json(const EditRecord& r);
EditRecord record_from_json(const nlohmann::json& j);

struct CorpusEntry {
  std::string prompt;
  std::string answer;
};

struct BenchConfig {
  KgConfig kg;
  RotateConfig rotate;
  std::size_t k = 3;
  std::size_t n_explanation_records = 40;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
};

struct Benchmark {
  KnowledgeGraph kg;
  KgEmbedding embedding;
  std::vector<double> rotate_loss;
  std::vector<EditRecord> facts;         // one per triple, short answers
  std::vector<EditRecord> explanations;  // long-target records
  std::vector<CorpusEntry> corpus;
  Tokenizer tokenizer;
  std::vector<std::string> notes;  // omitted locality classes and why
};

/// Generates the KG, trains the embedder and builds both record sets.
/// Throws GenerationError when the KG audit fails.
Benchmark build_benchmark(const BenchConfig& config);

/// Triple indices of the structural-similarity set: k nearest by Euclidean
/// distance of triple features, excluding the triple, every triple sharing
/// its tail, and every triple sharing its head.
std::vector<int> structural_neighbors(const KnowledgeGraph& kg, const KgEmbedding& e, int triple, std::size_t k);

struct DatasetCheck {
  std::size_t records = 0;
  std::size_t unknown_tokens = 0;
  std::size_t span_failures = 0;
  std::size_t leaks = 0;
  bool ok() const noexcept { return unknown_tokens == 0 && span_failures == 0 && leaks == 0; }
};

DatasetCheck check_records(const std::vector<EditRecord>& records, const Tokenizer& tok);

struct Splits {
  std::vector<EditRecord> train, valid, test;
};

/// Seeded shuffle then cut by ratios; each split keeps id order.
Splits split_records(const std::vector<EditRecord>& records, const std::array<double, 3>& ratios, std::uint64_t seed);

/// type,count rows in first-seen order of the catalogue.
std::string distribution_csv(const std::vector<EditRecord>& records);

/// Writes <dir>/{train,valid,test}.json and distribution.csv.
void export_dataset(const std::vector<EditRecord>& records, const std::array<double, 3>& ratios, std::uint64_t seed,
                    const std::filesystem::path& dir);
std::vector<EditRecord> load_split(const std::filesystem::path& path);

nlohmann::json corpus_to_json(const std::vector<CorpusEntry>& corpus);
std::vector<CorpusEntry> corpus_from_json(const nlohmann::json& j);

}  // namespace medlasa
