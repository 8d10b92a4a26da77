#include "medlasa/benchkit/kg.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "medlasa/benchkit/tokenizer.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

namespace medlasa {

const std::vector<Relation>& relation_catalogue() {
  static const std::vector<Relation> relations{
      {"side_effect", "What side effect is caused by {h}?", "What adverse effect is attributed to {h}?",
       "{t}, because {h} is a {h_kind} that acts on the {h_organ} and disturbs the {t_organ}.", "pharmacology"},
      {"interacts_with", "Which drug interacts with {h}?", "What medication should not be combined with {h}?",
       "{t}, because {h} is a {h_kind} that shares the {h_organ} pathway with the {t_organ}.", "pharmacology"},
      {"treats", "Which disease can be treated with {h}?", "What illness responds to therapy with {h}?",
       "{t}, because {h} is a {h_kind} that acts on the {h_organ} and restores the {t_organ}.", "therapeutics"},
      {"contraindication", "Which condition is a contraindication for {h}?", "In which condition should {h} be avoided?",
       "{t}, because {h} is a {h_kind} that overloads the {h_organ} and weakens the {t_organ}.", "therapeutics"},
      {"symptom", "What symptom is a sign of {h}?", "Which clinical finding indicates {h}?",
       "{t}, because {h} is a {h_kind} that damages the {h_organ} and strains the {t_organ}.", "pathology"},
      {"gene", "Which gene is associated with {h}?", "What gene is linked to {h}?",
       "{t}, because {h} is a {h_kind} expressed in the {h_organ} and regulated in the {t_organ}.", "pathology"},
  };
  return relations;
}

int KnowledgeGraph::find(int h, int r) const {
  for (std::size_t i = 0; i < triples.size(); ++i)
    if (triples[i].h == h && triples[i].r == r) return static_cast<int>(i);
  return -1;
}

namespace {

const std::vector<std::string> kKinds{"blocker", "factor", "compound", "modulator", "regulator", "marker"};
const std::vector<std::string> kOrgans{"liver", "kidney", "heart", "lung", "brain", "skin", "blood", "gut"};
const std::vector<std::string> kSecondWords{"Acid", "Sulfate", "Complex", "Syndrome", "Fever"};

std::set<std::string> reserved_words() {
  std::set<std::string> words{"explain"};
  for (const Relation& r : relation_catalogue())
    for (const std::string* t : {&r.question, &r.rephrase, &r.explanation})
      for (std::string& w : split_words(*t)) words.insert(std::move(w));
  for (const auto* list : {&kKinds, &kOrgans, &kSecondWords})
    for (const std::string& w : *list) words.insert(split_words(w).front());
  return words;
}

std::string make_name(std::mt19937_64& rng) {
  static const std::vector<std::string> onsets{"b", "d", "f", "k", "l", "m", "n", "p", "r",
                                               "s", "t", "v", "z", "br", "tr", "kl", "gr"};
  static const std::vector<std::string> vowels{"a", "e", "i", "o", "u"};
  static const std::vector<std::string> endings{"ine", "ol", "ax", "ide", "ium", "ene", "azole", "mab", "in", "an"};
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::string name = pick(onsets) + pick(vowels) + pick(onsets) + pick(endings);
  name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
  return name;
}

std::string replace_all(std::string s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
  return s;
}

const Relation& relation_of(const KnowledgeGraph& kg, const Triple& t) {
  if (t.r < 0 || static_cast<std::size_t>(t.r) >= kg.relations.size()) throw ContractError("unknown relation id");
  return kg.relations[static_cast<std::size_t>(t.r)];
}

const Entity& entity_of(const KnowledgeGraph& kg, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= kg.entities.size()) throw ContractError("unknown entity id");
  return kg.entities[static_cast<std::size_t>(id)];
}

}  // namespace

KnowledgeGraph gen_synthetic_kg(const KgConfig& config) {
  const auto& catalogue = relation_catalogue();
  if (config.n_relations > catalogue.size())
    throw GenerationError("at most " + std::to_string(catalogue.size()) + " relations have templates");
  if (config.n_triples > 0 && (config.n_entities < 3 || config.tail_pool < 3))
    throw GenerationError("need at least 3 entities and tail pools of at least 3");
  KnowledgeGraph kg;
  kg.relations.assign(catalogue.begin(), catalogue.begin() + static_cast<std::ptrdiff_t>(config.n_relations));

  std::mt19937_64 rng(io::derive_seed(config.seed, "kg/entities"));
  const std::set<std::string> reserved = reserved_words();
  std::set<std::string> used;
  for (std::size_t i = 0; i < config.n_entities; ++i) {
    std::string name;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw GenerationError("cannot generate distinct entity names");
      name = make_name(rng);
      if (reserved.count(split_words(name).front()) || used.count(name)) continue;
      break;
    }
    used.insert(name);
    if (i % 5 == 4) name += " " + kSecondWords[rng() % kSecondWords.size()];
    kg.entities.push_back({name, kKinds[rng() % kKinds.size()], kOrgans[rng() % kOrgans.size()]});
  }

  std::mt19937_64 pool_rng(io::derive_seed(config.seed, "kg/pools"));
  std::vector<int> ids(config.n_entities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  for (std::size_t r = 0; r < config.n_relations; ++r) {
    std::vector<int> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), pool_rng);
    shuffled.resize(std::min(config.tail_pool, shuffled.size()));
    std::sort(shuffled.begin(), shuffled.end());
    kg.tail_pools.push_back(std::move(shuffled));
  }

  std::vector<std::pair<int, int>> pairs;
  for (int h : ids)
    for (std::size_t r = 0; r < config.n_relations; ++r) pairs.emplace_back(h, static_cast<int>(r));
  if (pairs.size() < config.n_triples)
    throw GenerationError("cannot place " + std::to_string(config.n_triples) + " triples with unique (head, relation)");
  std::mt19937_64 triple_rng(io::derive_seed(config.seed, "kg/triples"));
  std::shuffle(pairs.begin(), pairs.end(), triple_rng);
  pairs.resize(config.n_triples);
  std::sort(pairs.begin(), pairs.end(), [](auto a, auto b) { return std::tie(a.second, a.first) < std::tie(b.second, b.first); });
  // Tails cycle through each relation's pool so every pool member gets
  // several heads.
  std::vector<std::size_t> cursor(config.n_relations, 0);
  for (std::size_t r = 0; r < config.n_relations; ++r) cursor[r] = triple_rng() % config.tail_pool;
  for (auto [h, r] : pairs) {
    const auto& pool = kg.tail_pools[static_cast<std::size_t>(r)];
    std::size_t& c = cursor[static_cast<std::size_t>(r)];
    if (pool[c % pool.size()] == h) ++c;
    kg.triples.push_back({h, r, pool[c++ % pool.size()]});
  }
  return kg;
}

KgAudit audit_kg(const KnowledgeGraph& kg) {
  KgAudit audit;
  if (kg.triples.empty()) {
    audit.ok = false;
    audit.problems.push_back("knowledge graph has no triples");
    return audit;
  }
  std::map<int, std::set<int>> tails_by_relation;
  std::map<std::pair<int, int>, std::set<int>> heads_by_tail_relation;
  std::set<int> tails;
  for (const Triple& t : kg.triples) {
    tails_by_relation[t.r].insert(t.t);
    heads_by_tail_relation[{t.t, t.r}].insert(t.h);
    tails.insert(t.t);
  }
  for (std::size_t r = 0; r < kg.relations.size(); ++r)
    if (tails_by_relation[static_cast<int>(r)].size() < 3)
      audit.problems.push_back("relation " + kg.relations[r].name + " has fewer than 3 distinct tails");
  for (int t : tails) {
    bool shared = false;
    for (const auto& [key, heads] : heads_by_tail_relation) shared = shared || (key.first == t && heads.size() >= 2);
    if (!shared) audit.problems.push_back("tail " + kg.entities[static_cast<std::size_t>(t)].name + " has a single head per relation");
  }
  audit.ok = audit.problems.empty();
  return audit;
}

QaItem fill_template(const std::string& templ, const std::string& subject, const std::string& answer) {
  const std::size_t at = templ.find("{h}");
  if (at == std::string::npos) throw ContractError("template has no {h} slot");
  QaItem qa;
  qa.question = replace_all(templ, "{h}", subject);
  qa.answer = answer;
  qa.subject = subject;
  qa.subject_begin = split_words(templ.substr(0, at)).size();
  qa.subject_end = qa.subject_begin + split_words(subject).size();
  return qa;
}

QaItem triple_to_qa(const KnowledgeGraph& kg, const Triple& t) {
  const Relation& rel = relation_of(kg, t);
  if (rel.question.empty()) throw ContractError("relation " + rel.name + " has no question template");
  return fill_template(rel.question, entity_of(kg, t.h).name, entity_of(kg, t.t).name);
}

std::string rephrase(const KnowledgeGraph& kg, const Triple& t) {
  const Relation& rel = relation_of(kg, t);
  if (rel.rephrase.empty()) throw ContractError("relation " + rel.name + " has no rephrase template");
  return replace_all(rel.rephrase, "{h}", entity_of(kg, t.h).name);
}

namespace {

std::string explain_template(const std::string& question) {
  std::string q = question;
  if (!q.empty()) q[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(q[0])));
  return "Explain " + q;
}

}  // namespace

QaItem triple_to_explanation_qa(const KnowledgeGraph& kg, const Triple& t, int tail) {
  const Relation& rel = relation_of(kg, t);
  if (rel.explanation.empty()) throw ContractError("relation " + rel.name + " has no explanation template");
  const Entity& h = entity_of(kg, t.h);
  const Entity& tl = entity_of(kg, tail);
  std::string answer = replace_all(rel.explanation, "{t}", tl.name);
  answer = replace_all(answer, "{h_kind}", h.kind);
  answer = replace_all(answer, "{h_organ}", h.organ);
  answer = replace_all(answer, "{t_organ}", tl.organ);
  answer = replace_all(answer, "{h}", h.name);
  return fill_template(explain_template(rel.question), h.name, answer);
}

std::string explanation_rephrase(const KnowledgeGraph& kg, const Triple& t) {
  return replace_all(explain_template(relation_of(kg, t).rephrase), "{h}", entity_of(kg, t.h).name);
}

int sample_counterfactual(const KnowledgeGraph& kg, const Triple& t, std::mt19937_64& rng) {
  relation_of(kg, t);
  std::vector<int> candidates;
  for (int e : kg.tail_pools.at(static_cast<std::size_t>(t.r)))
    if (e != t.t) candidates.push_back(e);
  if (candidates.empty()) throw GenerationError("no counterfactual candidate for relation " + kg.relations[static_cast<std::size_t>(t.r)].name);
  return candidates[rng() % candidates.size()];
}

nlohmann::json to_json(const KnowledgeGraph& kg) {
  nlohmann::json ents = nlohmann::json::array(), rels = nlohmann::json::array(), triples = nlohmann::json::array();
  for (const Entity& e : kg.entities) ents.push_back({{"name", e.name}, {"kind", e.kind}, {"organ", e.organ}});
  for (const Relation& r : kg.relations)
    rels.push_back({{"name", r.name},
                    {"question", r.question},
                    {"rephrase", r.rephrase},
                    {"explanation", r.explanation},
                    {"topic", r.topic}});
  for (const Triple& t : kg.triples) triples.push_back({t.h, t.r, t.t});
  return {{"entities", ents}, {"relations", rels}, {"triples", triples}, {"tail_pools", kg.tail_pools}};
}

KnowledgeGraph kg_from_json(const nlohmann::json& j) {
  try {
    KnowledgeGraph kg;
    for (const auto& e : j.at("entities"))
      kg.entities.push_back({e.at("name").get<std::string>(), e.at("kind").get<std::string>(),
                             e.at("organ").get<std::string>()});
    for (const auto& r : j.at("relations"))
      kg.relations.push_back({r.at("name").get<std::string>(), r.at("question").get<std::string>(),
                              r.at("rephrase").get<std::string>(), r.at("explanation").get<std::string>(),
                              r.at("topic").get<std::string>()});
    for (const auto& t : j.at("triples")) kg.triples.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>()});
    kg.tail_pools = j.at("tail_pools").get<std::vector<std::vector<int>>>();
    const auto n_e = static_cast<int>(kg.entities.size()), n_r = static_cast<int>(kg.relations.size());
    for (const Triple& t : kg.triples)
      if (t.h < 0 || t.h >= n_e || t.t < 0 || t.t >= n_e || t.r < 0 || t.r >= n_r)
        throw FormatError("triple references an unknown id");
    if (kg.tail_pools.size() != kg.relations.size()) throw FormatError("one tail pool per relation expected");
    return kg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed knowledge graph: ") + e.what());
  }
}

}  // namespace medlasa
