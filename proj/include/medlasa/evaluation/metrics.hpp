#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "medlasa/adapters/lowrank.hpp"
#include "medlasa/benchkit/dataset.hpp"
#include "medlasa/model/transformer.hpp"

namespace medlasa {

/// Read-only handle on a base model with optional trained adapters. The
/// referenced models must outlive the view.
class ModelView {
 public:
  ModelView(const MicroTransformer& model) : base_(&model) {}
  ModelView(const AdaptedModel& adapted) : base_(&adapted.base()), delta_(AdapterDelta(adapted)) {}

  const MicroTransformer& base() const noexcept { return *base_; }
  const WeightDelta* delta() const noexcept { return delta_ ? &*delta_ : nullptr; }

  Matrix logits(std::span<const int> tokens) const;
  std::vector<int> generate(std::span<const int> prompt, std::size_t max_new) const;

 private:
  const MicroTransformer* base_;
  std::optional<AdapterDelta> delta_;
};

struct QaTokens {
  std::vector<int> prompt;  // starts with BOS
  std::vector<int> target;
};

/// Argmax (lowest id on ties) at every target position under teacher forcing.
std::vector<int> teacher_forced_argmax(const ModelView& model, std::span<const int> prompt,
                                       std::span<const int> target);

/// Fraction of target positions whose teacher-forced argmax is the target token.
double token_match_accuracy(const ModelView& model, std::span<const int> prompt, std::span<const int> target);

/// Mean token match over pairs, x100. Throws ContractError on an empty set.
double mean_token_match(const ModelView& model, std::span<const QaTokens> pairs);

/// Percent of target positions (averaged per pair) where pre and post agree,
/// or nullopt when there are no pairs.
std::optional<double> locality(const ModelView& pre, const ModelView& post, std::span<const QaTokens> pairs);

QaTokens edit_pair(const EditRecord& r, const Tokenizer& tok);
QaTokens generality_pair(const EditRecord& r, const Tokenizer& tok);
std::vector<QaTokens> locality_pairs(const EditRecord& r, LocalityClass c, const Tokenizer& tok);

/// Efficacy and generality of one model over many records, x100.
double efficacy(const ModelView& edited, std::span<const EditRecord> records, const Tokenizer& tok);
double generality(const ModelView& edited, std::span<const EditRecord> records, const Tokenizer& tok);

/// -sum_k f(k) log2 f(k) over the n-gram frequency distribution.
double ngram_entropy(std::span<const int> tokens, std::size_t n);

struct FluencyWeights {
  double bigram = 1.0 / 3.0;
  double trigram = 2.0 / 3.0;
};

/// Weighted bi- and tri-gram entropy. Needs at least three tokens.
double fluency(std::span<const int> tokens, const FluencyWeights& w = {});

struct EvalOptions {
  std::size_t continuation_tokens = 50;
  FluencyWeights weights;
  bool parallel = true;
};

/// Fractions in [0, 1] for one edited record.
struct RecordEval {
  std::string id;
  double efficacy = 0.0;
  double generality = 0.0;
  std::map<LocalityClass, double> locality;
  double fluency = 0.0;      // post-edit, mean over the record's prompts
  double fluency_pre = 0.0;  // same prompts on the unedited model
};

/// Fluency of the greedy continuation of the question and its rephrase.
double prompt_fluency(const ModelView& model, const EditRecord& r, const Tokenizer& tok, const EvalOptions& options);

RecordEval evaluate_record(const ModelView& pre, const ModelView& post, const EditRecord& r, const Tokenizer& tok,
                           const EvalOptions& options);

struct EvalReport {
  double efficacy = 0.0;
  double generality = 0.0;
  std::map<LocalityClass, double> locality;
  double fluency = 0.0;
  double fluency_pre = 0.0;
  double average = 0.0;
  std::map<std::string, std::size_t> counts;
};

/// ((eff + gen) / 2 + mean(loc)) / 2. Throws ContractError without locality.
double average(double efficacy, double generality, const std::map<LocalityClass, double>& locality);
double average(const EvalReport& report);

/// Means over records in index order, x100 for the percentages.
EvalReport aggregate(std::span<const RecordEval> records);

/// Records evaluated against one post-edit model each; posts[i] belongs to records[i].
std::vector<RecordEval> evaluate_records(const ModelView& pre, std::span<const ModelView> posts,
                                         std::span<const EditRecord> records, const Tokenizer& tok,
                                         const EvalOptions& options);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RecordEval& r);

struct RunLabel {
  std::string dataset;
  std::string strategy;
  std::string weights;
  double alpha_o = 0.0;
  std::size_t r_o = 0;
  std::uint64_t seed = 0;
};

std::string csv_header();
/// One line without the trailing newline; absent locality classes are empty cells.
std::string csv_row(const EvalReport& r, const RunLabel& label);

}  // namespace medlasa
