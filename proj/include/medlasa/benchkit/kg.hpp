#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace medlasa {

struct Entity {
  std::string name;   // display form, e.g. "Varomine" or "Kelsol Acid"
  std::string kind;   // pharmacological class word used in explanations
  std::string organ;  // organ word used in explanations
};

/// Surface templates: "{h}" marks the head-entity mention.
struct Relation {
  std::string name;
  std::string question;
  std::string rephrase;
  std::string explanation;  // "{t}", "{h}", "{h_kind}", "{t_organ}" slots
  std::string topic;
};

struct Triple {
  int h = 0;
  int r = 0;
  int t = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct KgConfig {
  std::size_t n_entities = 40;
  std::size_t n_relations = 6;
  std::size_t n_triples = 200;
  std::size_t tail_pool = 7;
  std::uint64_t seed = 0;
};

struct KnowledgeGraph {
  std::vector<Entity> entities;
  std::vector<Relation> relations;
  std::vector<Triple> triples;
  std::vector<std::vector<int>> tail_pools;  // per relation

  /// Index of the triple with this (h, r), or -1.
  int find(int h, int r) const;
};

/// The built-in relation catalogue (six relations, three topics).
const std::vector<Relation>& relation_catalogue();

/// Deterministic KG with unique (h, r) pairs and per-relation tail pools.
/// Throws GenerationError when the pairs cannot be filled.
KnowledgeGraph gen_synthetic_kg(const KgConfig& config);

struct KgAudit {
  bool ok = true;
  std::vector<std::string> problems;
};

/// Every relation has >= 3 distinct tails and every tail has >= 2 distinct
/// heads under some relation.
KgAudit audit_kg(const KnowledgeGraph& kg);

struct QaItem {
  std::string question;
  std::string answer;
  std::string subject;
  /// Word-index span of the subject inside split_words(question).
  std::size_t subject_begin = 0;
  std::size_t subject_end = 0;
};

/// Fills a "{h}" template; the span is located from the words before "{h}".
QaItem fill_template(const std::string& templ, const std::string& subject, const std::string& answer);
QaItem triple_to_qa(const KnowledgeGraph& kg, const Triple& t);
std::string rephrase(const KnowledgeGraph& kg, const Triple& t);
/// Long-target variant: question prefixed with "Explain", explanation answer.
QaItem triple_to_explanation_qa(const KnowledgeGraph& kg, const Triple& t, int tail);
std::string explanation_rephrase(const KnowledgeGraph& kg, const Triple& t);

/// t* != t drawn uniformly from the relation's tail pool.
int sample_counterfactual(const KnowledgeGraph& kg, const Triple& t, std::mt19937_64& rng);

nlohmann::json to_json(const KnowledgeGraph& kg);
KnowledgeGraph kg_from_json(const nlohmann::json& j);

}  // namespace medlasa
