#include "medlasa/evaluation/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <exception>

#include "medlasa/errors.hpp"
#include "medlasa/numerics/ops.hpp"

namespace medlasa {

Matrix ModelView::logits(std::span<const int> tokens) const {
  RunArgs args;
  args.delta = delta();
  return forward(*base_, tokens, args).logits;
}

std::vector<int> ModelView::generate(std::span<const int> prompt, std::size_t max_new) const {
  return medlasa::generate(*base_, prompt, max_new, delta());
}

std::vector<int> teacher_forced_argmax(const ModelView& model, std::span<const int> prompt,
                                       std::span<const int> target) {
  if (prompt.empty()) throw ContractError("empty prompt");
  if (target.empty()) throw ContractError("empty target");
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  const Matrix logits = model.logits(seq);
  std::vector<int> out(target.size());
  for (std::size_t s = 0; s < target.size(); ++s)
    out[s] = static_cast<int>(argmax(logits.row(prompt.size() - 1 + s)));
  return out;
}

double token_match_accuracy(const ModelView& model, std::span<const int> prompt, std::span<const int> target) {
  const std::vector<int> pred = teacher_forced_argmax(model, prompt, target);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < target.size(); ++s) hits += pred[s] == target[s];
  return static_cast<double>(hits) / static_cast<double>(target.size());
}

double mean_token_match(const ModelView& model, std::span<const QaTokens> pairs) {
  if (pairs.empty()) throw ContractError("no evaluation pairs");
  double total = 0.0;
  for (const QaTokens& p : pairs) total += token_match_accuracy(model, p.prompt, p.target);
  return 100.0 * total / static_cast<double>(pairs.size());
}

std::optional<double> locality(const ModelView& pre, const ModelView& post, std::span<const QaTokens> pairs) {
  if (pairs.empty()) return std::nullopt;
  double total = 0.0;
  for (const QaTokens& p : pairs) {
    const std::vector<int> a = teacher_forced_argmax(pre, p.prompt, p.target);
    const std::vector<int> b = teacher_forced_argmax(post, p.prompt, p.target);
    std::size_t same = 0;
    for (std::size_t s = 0; s < a.size(); ++s) same += a[s] == b[s];
    total += static_cast<double>(same) / static_cast<double>(a.size());
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

QaTokens edit_pair(const EditRecord& r, const Tokenizer& tok) {
  return {tok.encode_prompt(r.question), tok.encode(r.answer_edit)};
}

QaTokens generality_pair(const EditRecord& r, const Tokenizer& tok) {
  return {tok.encode_prompt(r.rephrase), tok.encode(r.answer_edit)};
}

std::vector<QaTokens> locality_pairs(const EditRecord& r, LocalityClass c, const Tokenizer& tok) {
  std::vector<QaTokens> out;
  auto it = r.locality.find(c);
  if (it == r.locality.end()) return out;
  for (const LocalityQa& qa : it->second) out.push_back({tok.encode_prompt(qa.q), tok.encode(qa.a)});
  return out;
}

double efficacy(const ModelView& edited, std::span<const EditRecord> records, const Tokenizer& tok) {
  std::vector<QaTokens> pairs;
  for (const EditRecord& r : records) pairs.push_back(edit_pair(r, tok));
  return mean_token_match(edited, pairs);
}

double generality(const ModelView& edited, std::span<const EditRecord> records, const Tokenizer& tok) {
  std::vector<QaTokens> pairs;
  for (const EditRecord& r : records) pairs.push_back(generality_pair(r, tok));
  return mean_token_match(edited, pairs);
}

double ngram_entropy(std::span<const int> tokens, std::size_t n) {
  if (n == 0 || tokens.size() < n) throw ContractError("sequence shorter than the n-gram order");
  std::map<std::vector<int>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
  const double total = static_cast<double>(tokens.size() - n + 1);
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    const double f = static_cast<double>(c) / total;
    h -= f * std::log2(f);
  }
  return h == 0.0 ? 0.0 : h;
}

double fluency(std::span<const int> tokens, const FluencyWeights& w) {
  if (tokens.size() < 3) throw ContractError("fluency needs at least three tokens");
  return w.bigram * ngram_entropy(tokens, 2) + w.trigram * ngram_entropy(tokens, 3);
}

double prompt_fluency(const ModelView& model, const EditRecord& r, const Tokenizer& tok, const EvalOptions& options) {
  double total = 0.0;
  for (const std::string* q : {&r.question, &r.rephrase})
    total += fluency(model.generate(tok.encode_prompt(*q), options.continuation_tokens), options.weights);
  return total / 2.0;
}

RecordEval evaluate_record(const ModelView& pre, const ModelView& post, const EditRecord& r, const Tokenizer& tok,
                           const EvalOptions& options) {
  RecordEval out;
  out.id = r.id;
  const QaTokens e = edit_pair(r, tok);
  const QaTokens g = generality_pair(r, tok);
  out.efficacy = token_match_accuracy(post, e.prompt, e.target);
  out.generality = token_match_accuracy(post, g.prompt, g.target);
  for (LocalityClass c : kLocalityClasses) {
    const auto pairs = locality_pairs(r, c, tok);
    if (auto v = locality(pre, post, pairs)) out.locality[c] = *v / 100.0;
  }
  out.fluency = prompt_fluency(post, r, tok, options);
  out.fluency_pre = prompt_fluency(pre, r, tok, options);
  return out;
}

double average(double efficacy, double generality, const std::map<LocalityClass, double>& locality) {
  if (locality.empty()) throw ContractError("average needs at least one locality class");
  double loc = 0.0;
  for (const auto& [c, v] : locality) loc += v;
  loc /= static_cast<double>(locality.size());
  return ((efficacy + generality) / 2.0 + loc) / 2.0;
}

double average(const EvalReport& report) {
  auto count = [&](const char* key) {
    auto it = report.counts.find(key);
    return it == report.counts.end() ? std::size_t{0} : it->second;
  };
  if (count("efficacy") == 0 || count("generality") == 0) throw ContractError("average needs efficacy and generality");
  return average(report.efficacy, report.generality, report.locality);
}

EvalReport aggregate(std::span<const RecordEval> records) {
  if (records.empty()) throw ContractError("no records to aggregate");
  EvalReport out;
  const double n = static_cast<double>(records.size());
  std::map<LocalityClass, std::size_t> loc_n;
  for (const RecordEval& r : records) {
    out.efficacy += r.efficacy;
    out.generality += r.generality;
    out.fluency += r.fluency;
    out.fluency_pre += r.fluency_pre;
    for (const auto& [c, v] : r.locality) {
      out.locality[c] += v;
      ++loc_n[c];
    }
  }
  out.efficacy *= 100.0 / n;
  out.generality *= 100.0 / n;
  out.fluency /= n;
  out.fluency_pre /= n;
  out.counts["efficacy"] = records.size();
  out.counts["generality"] = records.size();
  out.counts["fluency"] = records.size();
  for (auto& [c, v] : out.locality) {
    v *= 100.0 / static_cast<double>(loc_n[c]);
    out.counts["loc_" + std::string(locality_key(c))] = loc_n[c];
  }
  out.average = out.locality.empty() ? 0.0 : average(out);
  return out;
}

std::vector<RecordEval> evaluate_records(const ModelView& pre, std::span<const ModelView> posts,
                                         std::span<const EditRecord> records, const Tokenizer& tok,
                                         const EvalOptions& options) {
  if (posts.size() != records.size()) throw ContractError("one post-edit model per record");
  std::vector<RecordEval> out(records.size());
  if (!options.parallel) {
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = evaluate_record(pre, posts[i], records[i], tok, options);
    return out;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      out[i] = evaluate_record(pre, posts[i], records[i], tok, options);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json loc = nlohmann::json::object();
  for (const auto& [c, v] : r.locality) loc[std::string(locality_key(c))] = v;
  return {{"efficacy", r.efficacy}, {"generality", r.generality}, {"locality", loc},   {"fluency", r.fluency},
          {"fluency_pre", r.fluency_pre}, {"average", r.average},   {"counts", r.counts}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.efficacy = j.at("efficacy").get<double>();
    r.generality = j.at("generality").get<double>();
    for (const auto& [k, v] : j.at("locality").items()) r.locality[parse_locality(k)] = v.get<double>();
    r.fluency = j.at("fluency").get<double>();
    r.fluency_pre = j.at("fluency_pre").get<double>();
    r.average = j.at("average").get<double>();
    r.counts = j.at("counts").get<std::map<std::string, std::size_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

nlohmann::json to_json(const RecordEval& r) {
  nlohmann::json loc = nlohmann::json::object();
  for (const auto& [c, v] : r.locality) loc[std::string(locality_key(c))] = v;
  return {{"id", r.id},           {"efficacy", r.efficacy}, {"generality", r.generality},
          {"locality", loc},      {"fluency", r.fluency},   {"fluency_pre", r.fluency_pre}};
}

std::string csv_header() {
  return "dataset,strategy,weights,alpha_o,r_o,eff,gen,loc_td,loc_em,loc_ss,loc_ts,loc_ct,flu,avg,seed";
}

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string csv_row(const EvalReport& r, const RunLabel& label) {
  std::string row = quoted(label.dataset) + "," + quoted(label.strategy) + "," + quoted(label.weights) + "," +
                    fixed4(label.alpha_o) + "," + std::to_string(label.r_o) + "," + fixed4(r.efficacy) + "," +
                    fixed4(r.generality);
  for (LocalityClass c : kLocalityClasses) {
    auto it = r.locality.find(c);
    row += "," + (it == r.locality.end() ? std::string() : fixed4(it->second));
  }
  return row + "," + fixed4(r.fluency) + "," + fixed4(r.average) + "," + std::to_string(label.seed);
}

}  // namespace medlasa
