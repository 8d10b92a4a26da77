#include "medlasa/benchkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "medlasa/benchkit/tfidf.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

std::string_view locality_key(LocalityClass c) {
  switch (c) {
    case LocalityClass::td: return "td";
    case LocalityClass::em: return "em";
    case LocalityClass::ss: return "ss";
    case LocalityClass::ts: return "ts";
    case LocalityClass::ct: return "ct";
  }
  return "?";
}

LocalityClass parse_locality(std::string_view key) {
  for (LocalityClass c : kLocalityClasses)
    if (locality_key(c) == key) return c;
  throw ContractError("unknown locality class '" + std::string(key) + "'");
}

bool operator==(const EditRecord& a, const EditRecord& b) {
  return std::tie(a.id, a.type, a.question, a.subject, a.subject_span, a.answer_true, a.answer_edit, a.rephrase,
                  a.topic, a.locality) == std::tie(b.id, b.type, b.question, b.subject, b.subject_span, b.answer_true,
                                                   b.answer_edit, b.rephrase, b.topic, b.locality);
}

nlohmann::json to_json(const EditRecord& r) {
  nlohmann::json loc = nlohmann::json::object();
  for (const auto& [cls, qas] : r.locality) {
    nlohmann::json arr = nlohmann::json::array();
    for (const LocalityQa& qa : qas) arr.push_back({{"q", qa.q}, {"a", qa.a}});
    loc[std::string(locality_key(cls))] = arr;
  }
  return {{"id", r.id},
          {"type", r.type},
          {"question", r.question},
          {"subject", r.subject},
          {"subject_span", {r.subject_span.begin, r.subject_span.end}},
          {"answer_true", r.answer_true},
          {"answer_edit", r.answer_edit},
          {"rephrase", r.rephrase},
          {"topic", r.topic},
          {"locality", loc}};
}

EditRecord record_from_json(const nlohmann::json& j) {
  try {
    EditRecord r;
    r.id = j.at("id").get<std::string>();
    r.type = j.at("type").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.subject = j.at("subject").get<std::string>();
    const auto span = j.at("subject_span").get<std::vector<std::size_t>>();
    if (span.size() != 2 || span[0] >= span[1]) throw FormatError("subject_span must be [start, end) with start < end");
    r.subject_span = {span[0], span[1]};
    r.answer_true = j.at("answer_true").get<std::string>();
    r.answer_edit = j.at("answer_edit").get<std::string>();
    r.rephrase = j.at("rephrase").get<std::string>();
    r.topic = j.at("topic").get<std::string>();
    for (const auto& [key, arr] : j.at("locality").items()) {
      auto& qas = r.locality[parse_locality(key)];
      for (const auto& qa : arr) qas.push_back({qa.at("q").get<std::string>(), qa.at("a").get<std::string>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed edit record: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("malformed edit record: ") + e.what());
  }
}

namespace {

std::vector<int> sample(std::vector<int> pool, std::size_t k, std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(k, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::string record_id(const char* prefix, std::size_t i) {
  std::ostringstream s;
  s << prefix << '-';
  s.width(3);
  s.fill('0');
  s << i;
  return s.str();
}

}  // namespace

std::vector<int> structural_neighbors(const KnowledgeGraph& kg, const KgEmbedding& e, int triple, std::size_t k) {
  const Triple& me = kg.triples.at(static_cast<std::size_t>(triple));
  const std::vector<double> f = e.triple_feature(me);
  std::vector<double> closeness(kg.triples.size(), 0.0);
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < kg.triples.size(); ++j) {
    const Triple& o = kg.triples[j];
    if (static_cast<int>(j) == triple || o.t == me.t || o.h == me.h) continue;
    const std::vector<double> g = e.triple_feature(o);
    double sq = 0.0;
    for (std::size_t c = 0; c < f.size(); ++c) sq += (f[c] - g[c]) * (f[c] - g[c]);
    closeness[j] = -sq;
    candidates.push_back(j);
  }
  std::vector<int> out;
  for (std::size_t j : top_k(closeness, candidates, k)) out.push_back(static_cast<int>(j));
  return out;
}

Benchmark build_benchmark(const BenchConfig& config) {
  if (config.k == 0) throw ContractError("locality k must be >= 1");
  Benchmark b;
  KgConfig kc = config.kg;
  kc.seed = io::derive_seed(config.seed, "kg");
  b.kg = gen_synthetic_kg(kc);
  const KgAudit audit = audit_kg(b.kg);
  if (!audit.ok) throw GenerationError("knowledge graph audit failed: " + audit.problems.front());
  RotateConfig rc = config.rotate;
  rc.seed = io::derive_seed(config.seed, "rotate");
  RotateResult rot = train_rotate(b.kg, rc);
  b.embedding = std::move(rot.embedding);
  b.rotate_loss = std::move(rot.loss_curve);

  const KnowledgeGraph& kg = b.kg;
  const std::size_t n = kg.triples.size();
  std::vector<QaItem> qa;
  std::vector<std::string> questions;
  for (const Triple& t : kg.triples) {
    qa.push_back(triple_to_qa(kg, t));
    questions.push_back(qa.back().question);
  }
  const TfidfIndex text_index(questions);
  std::mt19937_64 cf_rng(io::derive_seed(config.seed, "counterfactual"));
  std::mt19937_64 loc_rng(io::derive_seed(config.seed, "locality"));

  auto local = [&](int j) { return LocalityQa{qa[static_cast<std::size_t>(j)].question, qa[static_cast<std::size_t>(j)].answer}; };
  for (std::size_t i = 0; i < n; ++i) {
    const Triple& t = kg.triples[i];
    EditRecord r;
    r.id = record_id("cf", i);
    r.type = kg.relations[static_cast<std::size_t>(t.r)].name;
    r.question = qa[i].question;
    r.subject = qa[i].subject;
    r.subject_span = {qa[i].subject_begin, qa[i].subject_end};
    r.answer_true = qa[i].answer;
    r.answer_edit = kg.entities[static_cast<std::size_t>(sample_counterfactual(kg, t, cf_rng))].name;
    r.rephrase = rephrase(kg, t);
    r.topic = kg.relations[static_cast<std::size_t>(t.r)].topic;
    r.triple = static_cast<int>(i);

    std::vector<int> td, em, ct;
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Triple& o = kg.triples[j];
      if (o.t == t.t && o.h != t.h) td.push_back(static_cast<int>(j));
      if (o.h == t.h) em.push_back(static_cast<int>(j));
      if (kg.relations[static_cast<std::size_t>(o.r)].topic == r.topic) ct.push_back(static_cast<int>(j));
      others.push_back(j);
    }
    std::vector<double> sim(n, 0.0);
    for (std::size_t j : others) sim[j] = text_index.cosine(i, j);
    std::map<LocalityClass, std::vector<int>> chosen{
        {LocalityClass::td, sample(td, config.k, loc_rng)},
        {LocalityClass::em, sample(em, config.k, loc_rng)},
        {LocalityClass::ss, structural_neighbors(kg, b.embedding, static_cast<int>(i), config.k)},
        {LocalityClass::ct, sample(ct, config.k, loc_rng)},
    };
    for (std::size_t j : top_k(sim, others, config.k)) chosen[LocalityClass::ts].push_back(static_cast<int>(j));
    for (auto& [cls, idx] : chosen) {
      if (idx.empty()) {
        b.notes.push_back(r.id + ": no " + std::string(locality_key(cls)) + " candidates, class omitted");
        continue;
      }
      for (int j : idx) r.locality[cls].push_back(local(j));
    }
    b.facts.push_back(std::move(r));
  }

  // Long-target records over a seeded subset of triples.
  std::vector<int> chosen(n);
  std::iota(chosen.begin(), chosen.end(), 0);
  std::mt19937_64 fe_rng(io::derive_seed(config.seed, "explanations"));
  chosen = sample(chosen, config.n_explanation_records, fe_rng);
  std::vector<std::string> fe_questions;
  std::vector<QaItem> fe_qa;
  for (int j : chosen) {
    const Triple& t = kg.triples[static_cast<std::size_t>(j)];
    fe_qa.push_back(triple_to_explanation_qa(kg, t, t.t));
    fe_questions.push_back(fe_qa.back().question);
  }
  const TfidfIndex fe_index(fe_questions);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const Triple& t = kg.triples[static_cast<std::size_t>(chosen[i])];
    EditRecord r;
    r.id = record_id("fe", i);
    r.type = kg.relations[static_cast<std::size_t>(t.r)].name;
    r.question = fe_qa[i].question;
    r.subject = fe_qa[i].subject;
    r.subject_span = {fe_qa[i].subject_begin, fe_qa[i].subject_end};
    r.answer_true = fe_qa[i].answer;
    r.answer_edit = triple_to_explanation_qa(kg, t, sample_counterfactual(kg, t, cf_rng)).answer;
    r.rephrase = explanation_rephrase(kg, t);
    r.topic = kg.relations[static_cast<std::size_t>(t.r)].topic;
    r.triple = chosen[i];
    std::vector<int> ct;
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      if (j == i) continue;
      others.push_back(j);
      if (kg.relations[static_cast<std::size_t>(kg.triples[static_cast<std::size_t>(chosen[j])].r)].topic == r.topic)
        ct.push_back(static_cast<int>(j));
    }
    std::vector<double> sim(chosen.size(), 0.0);
    for (std::size_t j : others) sim[j] = fe_index.cosine(i, j);
    for (std::size_t j : top_k(sim, others, config.k)) r.locality[LocalityClass::ts].push_back({fe_qa[j].question, fe_qa[j].answer});
    for (int j : sample(ct, config.k, loc_rng))
      r.locality[LocalityClass::ct].push_back({fe_qa[static_cast<std::size_t>(j)].question, fe_qa[static_cast<std::size_t>(j)].answer});
    if (r.locality[LocalityClass::ct].empty()) {
      r.locality.erase(LocalityClass::ct);
      b.notes.push_back(r.id + ": no ct candidates, class omitted");
    }
    b.explanations.push_back(std::move(r));
  }

  for (const EditRecord& r : b.facts) {
    b.corpus.push_back({r.question, r.answer_true});
    b.corpus.push_back({r.rephrase, r.answer_true});
  }
  for (const EditRecord& r : b.explanations) {
    b.corpus.push_back({r.question, r.answer_true});
    b.corpus.push_back({r.rephrase, r.answer_true});
  }
  std::vector<std::string> texts;
  for (const CorpusEntry& c : b.corpus) {
    texts.push_back(c.prompt);
    texts.push_back(c.answer);
  }
  for (const auto* set : {&b.facts, &b.explanations})
    for (const EditRecord& r : *set) texts.push_back(r.answer_edit);
  b.tokenizer = Tokenizer::build(texts);
  return b;
}

DatasetCheck check_records(const std::vector<EditRecord>& records, const Tokenizer& tok) {
  DatasetCheck c;
  c.records = records.size();
  for (const EditRecord& r : records) {
    for (const std::string* s : {&r.question, &r.answer_true, &r.answer_edit, &r.rephrase, &r.subject})
      c.unknown_tokens += tok.count_unknown(*s);
    const std::vector<int> q = tok.encode(r.question);
    if (r.subject_span.end > q.size() || r.subject_span.empty()) {
      ++c.span_failures;
    } else {
      const std::span<const int> span(q.data() + r.subject_span.begin, r.subject_span.size());
      if (tok.decode(span) != tok.decode(tok.encode(r.subject))) ++c.span_failures;
    }
    for (const auto& [cls, qas] : r.locality)
      for (const LocalityQa& qa : qas) {
        c.unknown_tokens += tok.count_unknown(qa.q) + tok.count_unknown(qa.a);
        if (qa.q == r.question || qa.q == r.rephrase) ++c.leaks;
        if (cls == LocalityClass::td && qa.a == r.answer_edit) ++c.leaks;
      }
  }
  return c;
}

Splits split_records(const std::vector<EditRecord>& records, const std::array<double, 3>& ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw ContractError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ContractError("split ratios must sum to 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(io::derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(records.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_valid = std::min(records.size() - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
  std::vector<std::size_t> parts[3];
  for (std::size_t i = 0; i < order.size(); ++i) parts[i < n_train ? 0 : i < n_train + n_valid ? 1 : 2].push_back(order[i]);
  Splits s;
  std::vector<EditRecord>* outs[3] = {&s.train, &s.valid, &s.test};
  for (int p = 0; p < 3; ++p) {
    std::sort(parts[p].begin(), parts[p].end());
    for (std::size_t i : parts[p]) outs[p]->push_back(records[i]);
  }
  return s;
}

std::string distribution_csv(const std::vector<EditRecord>& records) {
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (const Relation& rel : relation_catalogue()) counts.emplace_back(rel.name, 0);
  for (const EditRecord& r : records) {
    auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == r.type; });
    if (it == counts.end()) counts.emplace_back(r.type, 1);
    else ++it->second;
  }
  std::string out = "type,count\n";
  for (const auto& [type, count] : counts)
    if (count > 0) out += type + "," + std::to_string(count) + "\n";
  return out;
}

void export_dataset(const std::vector<EditRecord>& records, const std::array<double, 3>& ratios, std::uint64_t seed,
                    const std::filesystem::path& dir) {
  const Splits s = split_records(records, ratios, seed);
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<EditRecord>*> files[] = {
      {"train.json", &s.train}, {"valid.json", &s.valid}, {"test.json", &s.test}};
  for (const auto& [name, recs] : files) {
    nlohmann::json arr = nlohmann::json::array();
    for (const EditRecord& r : *recs) arr.push_back(to_json(r));
    io::write_file_atomic(dir / name, arr.dump(2) + "\n");
  }
  io::write_file_atomic(dir / "distribution.csv", distribution_csv(records));
}

std::vector<EditRecord> load_split(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw FormatError(path.string() + ": a split file holds one array of records");
  std::vector<EditRecord> out;
  for (const auto& r : j) out.push_back(record_from_json(r));
  return out;
}

nlohmann::json corpus_to_json(const std::vector<CorpusEntry>& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const CorpusEntry& c : corpus) arr.push_back({{"prompt", c.prompt}, {"answer", c.answer}});
  return arr;
}

std::vector<CorpusEntry> corpus_from_json(const nlohmann::json& j) {
  try {
    std::vector<CorpusEntry> out;
    for (const auto& c : j) out.push_back({c.at("prompt").get<std::string>(), c.at("answer").get<std::string>()});
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed corpus: ") + e.what());
  }
}

}  // namespace medlasa
