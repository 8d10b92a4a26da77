#include <doctest.h>

#include <complex>
#include <filesystem>
#include <set>

#include "medlasa/benchkit/dataset.hpp"
#include "medlasa/benchkit/tfidf.hpp"
#include "medlasa/errors.hpp"
#include "medlasa/util/io.hpp"

using namespace medlasa;

namespace {

const Benchmark& default_bench() {
  static const Benchmark b = [] {
    BenchConfig c;
    c.seed = 5;
    return build_benchmark(c);
  }();
  return b;
}

KnowledgeGraph primaquine_kg() {
  KnowledgeGraph kg;
  kg.entities = {{"Primaquine", "compound", "liver"}, {"Nausea", "marker", "gut"}, {"Vertigo", "marker", "brain"}};
  kg.relations = {relation_catalogue()[0]};
  kg.triples = {{0, 0, 1}};
  kg.tail_pools = {{1, 2}};
  return kg;
}

// Exhaustive oracle with std::complex arithmetic.
std::vector<int> brute_force_ss(const KnowledgeGraph& kg, const KgEmbedding& e, int i, std::size_t k) {
  auto feature = [&](const Triple& t) {
    std::vector<std::complex<double>> f;
    for (std::size_t j = 0; j < e.dim; ++j)
      f.emplace_back(std::complex<double>(e.re[t.h][j], e.im[t.h][j]) * std::polar(1.0, e.phase[t.r][j]));
    for (std::size_t j = 0; j < e.dim; ++j) f.emplace_back(e.re[t.t][j], e.im[t.t][j]);
    return f;
  };
  const Triple& me = kg.triples[i];
  const auto f = feature(me);
  std::vector<std::pair<double, int>> d;
  for (std::size_t j = 0; j < kg.triples.size(); ++j) {
    const Triple& o = kg.triples[j];
    if (static_cast<int>(j) == i || o.h == me.h || o.t == me.t) continue;
    const auto g = feature(o);
    double s = 0;
    for (std::size_t c = 0; c < f.size(); ++c) s += std::norm(f[c] - g[c]);
    d.emplace_back(s, static_cast<int>(j));
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (std::size_t n = 0; n < std::min(k, d.size()); ++n) out.push_back(d[n].second);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("word splitting and the closed vocabulary") {
  CHECK(split_words("What side effect is caused by Kelsol Acid?") ==
        std::vector<std::string>{"what", "side", "effect", "is", "caused", "by", "kelsol", "acid", "?"});
  CHECK(split_words("  Nausea, because  x.") == std::vector<std::string>{"nausea", ",", "because", "x", "."});
  const std::vector<std::string> texts{"Which gene?", "Gene x"};
  const Tokenizer tok = Tokenizer::build(texts);
  CHECK(tok.size() == 6);
  CHECK(tok.id("<bos>") == Tokenizer::kBos);
  CHECK(tok.encode("which zebra") == std::vector<int>{tok.id("which"), Tokenizer::kUnk});
  CHECK(tok.encode_prompt("gene").front() == Tokenizer::kBos);
  CHECK(tok.count_unknown("which zebra gene") == 1);
  CHECK(tok.decode(tok.encode("Gene X ?")) == "gene x ?");
  const Tokenizer back = Tokenizer::from_json(tok.to_json());
  CHECK(back.encode("which gene x") == tok.encode("which gene x"));
  CHECK_THROWS_AS(tok.word(99), VocabError);
  CHECK_THROWS_AS(Tokenizer::from_json(nlohmann::json{{"words", {"a", "b"}}}), FormatError);
}

TEST_CASE("knowledge graph generation") {
  KgConfig c;
  c.seed = 3;
  const KnowledgeGraph a = gen_synthetic_kg(c);
  const KnowledgeGraph b = gen_synthetic_kg(c);
  CHECK(to_json(a) == to_json(b));
  CHECK(a.entities.size() == 40);
  CHECK(a.triples.size() == 200);
  std::set<std::pair<int, int>> pairs;
  std::set<std::string> names;
  for (const Entity& e : a.entities) names.insert(e.name);
  CHECK(names.size() == 40);
  for (const Triple& t : a.triples) {
    CHECK(pairs.insert({t.h, t.r}).second);
    CHECK(t.h != t.t);
    const auto& pool = a.tail_pools[t.r];
    CHECK(std::find(pool.begin(), pool.end(), t.t) != pool.end());
  }
  CHECK(audit_kg(a).ok);
  CHECK(kg_from_json(to_json(a)).triples == a.triples);

  KgConfig empty = c;
  empty.n_triples = 0;
  const KnowledgeGraph e = gen_synthetic_kg(empty);
  CHECK(e.triples.empty());
  CHECK_FALSE(audit_kg(e).ok);
  KgConfig crowded = c;
  crowded.n_triples = 241;
  CHECK_THROWS_AS(gen_synthetic_kg(crowded), GenerationError);
  KgConfig wide = c;
  wide.n_relations = 7;
  CHECK_THROWS_AS(gen_synthetic_kg(wide), GenerationError);
  BenchConfig bc;
  bc.kg.n_triples = 0;
  CHECK_THROWS_AS(build_benchmark(bc), GenerationError);
}

TEST_CASE("question templates") {
  const KnowledgeGraph kg = primaquine_kg();
  const QaItem qa = triple_to_qa(kg, kg.triples[0]);
  CHECK(qa.question == "What side effect is caused by Primaquine?");
  CHECK(qa.answer == "Nausea");
  const auto words = split_words(qa.question);
  CHECK(words[qa.subject_begin] == "primaquine");
  CHECK(qa.subject_end == qa.subject_begin + 1);
  CHECK(rephrase(kg, kg.triples[0]) == "What adverse effect is attributed to Primaquine?");

  const QaItem two = fill_template("Which gene is associated with {h}?", "Kelsol Acid", "x");
  const auto two_words = split_words(two.question);
  CHECK(std::vector<std::string>(two_words.begin() + static_cast<std::ptrdiff_t>(two.subject_begin),
                                 two_words.begin() + static_cast<std::ptrdiff_t>(two.subject_end)) ==
        std::vector<std::string>{"kelsol", "acid"});

  const KnowledgeGraph big = default_bench().kg;
  for (std::size_t r = 0; r < big.relations.size(); ++r) {
    std::set<std::string> questions;
    std::size_t count = 0;
    for (const Triple& t : big.triples) {
      if (t.r != static_cast<int>(r)) continue;
      ++count;
      questions.insert(triple_to_qa(big, t).question);
      CHECK(rephrase(big, t) != triple_to_qa(big, t).question);
    }
    CHECK(questions.size() == count);
  }
  KnowledgeGraph broken = kg;
  broken.relations[0].rephrase.clear();
  CHECK_THROWS_AS(rephrase(broken, broken.triples[0]), ContractError);
  CHECK_THROWS_AS(fill_template("no slot", "x", "y"), ContractError);
}

TEST_CASE("counterfactual sampling") {
  const KnowledgeGraph kg = primaquine_kg();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) CHECK(sample_counterfactual(kg, kg.triples[0], rng) == 2);

  const KnowledgeGraph& big = default_bench().kg;
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 10000; ++i) {
    const Triple& t = big.triples[static_cast<std::size_t>(i) % big.triples.size()];
    const int star = sample_counterfactual(big, t, a);
    CHECK(star != t.t);
    CHECK(star == sample_counterfactual(big, t, b));
  }
  KnowledgeGraph lonely = kg;
  lonely.tail_pools = {{1}};
  CHECK_THROWS_AS(sample_counterfactual(lonely, lonely.triples[0], rng), GenerationError);
}

TEST_CASE("rotation embedding identities") {
  KgEmbedding e;
  e.dim = 3;
  e.re = {{0.3, -1, 2}, {1, 1, 1}};
  e.im = {{0.5, 0.1, -0.7}, {0, 2, 0}};
  e.phase = {{0, 0, 0}, {0.4, -2.0, 3.1}};
  CHECK(e.score(0, 0, 0) == 0.0);
  CHECK(e.score(1, 0, 1) == 0.0);
  CHECK(e.score(0, 1, 1) < 0.0);
  const auto hr = e.rotated(0, 1);
  double a = 0, b = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    a += hr[j] * hr[j] + hr[3 + j] * hr[3 + j];
    b += e.re[0][j] * e.re[0][j] + e.im[0][j] * e.im[0][j];
  }
  CHECK(std::sqrt(a) == doctest::Approx(std::sqrt(b)).epsilon(1e-15));
}

TEST_CASE("rotation loss gradients match finite differences") {
  KgEmbedding e;
  e.dim = 2;
  e.re = {{0.3, -0.4}, {0.1, 0.8}, {-0.6, 0.2}};
  e.im = {{0.5, 0.1}, {-0.3, 0.2}, {0.4, -0.9}};
  e.phase = {{0.4, -2.0}, {1.2, 0.3}};
  const Triple pos{0, 1, 2};
  const std::vector<Triple> negs{{0, 1, 1}, {2, 1, 2}};
  KgEmbedding g = e;
  for (auto* block : {&g.re, &g.im, &g.phase})
    for (auto& row : *block) std::fill(row.begin(), row.end(), 0.0);
  rotate_pair_loss(e, pos, negs, 1.5, &g);
  for (int block = 0; block < 3; ++block) {
    auto& pe = block == 0 ? e.re : block == 1 ? e.im : e.phase;
    auto& pg = block == 0 ? g.re : block == 1 ? g.im : g.phase;
    for (std::size_t i = 0; i < pe.size(); ++i)
      for (std::size_t j = 0; j < e.dim; ++j) {
        const double keep = pe[i][j];
        pe[i][j] = keep + 1e-5;
        const double up = rotate_pair_loss(e, pos, negs, 1.5, nullptr);
        pe[i][j] = keep - 1e-5;
        const double down = rotate_pair_loss(e, pos, negs, 1.5, nullptr);
        pe[i][j] = keep;
        CHECK(pg[i][j] == doctest::Approx((up - down) / 2e-5).epsilon(1e-6));
      }
  }
}

TEST_CASE("trained embedding separates true from corrupted triples") {
  const Benchmark& b = default_bench();
  CHECK(b.rotate_loss.back() < b.rotate_loss.front());
  std::mt19937_64 rng(2);
  double true_mean = 0, fake_mean = 0;
  for (const Triple& t : b.kg.triples) {
    true_mean += b.embedding.score(t.h, t.r, t.t);
    fake_mean += b.embedding.score(t.h, t.r, static_cast<int>(rng() % b.kg.entities.size()));
    CHECK(b.embedding.score(t.h, t.r, t.t) <= 0.0);
  }
  CHECK(true_mean > fake_mean);
}

TEST_CASE("tf-idf similarity") {
  const std::vector<std::string> docs{"Which gene is linked?", "which gene is linked?", "zzz", "Which drug is linked?"};
  const TfidfIndex idx(docs);
  CHECK(idx.cosine(0, 0) == doctest::Approx(1.0));
  CHECK(idx.cosine(0, 1) == doctest::Approx(1.0));
  CHECK(idx.cosine(0, 2) == 0.0);
  CHECK(idx.cosine(0, 3) == doctest::Approx(idx.cosine(3, 0)));
  CHECK(idx.cosine(0, 3) > 0.3);
  CHECK(TfidfIndex::trigrams("ab") == std::vector<std::string>{" ab", "ab "});
  const std::vector<double> scores{0.5, 0.9, 0.5, 0.1};
  const std::vector<std::size_t> cand{0, 1, 2, 3};
  CHECK(top_k(scores, cand, 3) == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("structural similarity sets match the exhaustive oracle") {
  const Benchmark& b = default_bench();
  for (std::size_t i = 0; i < b.kg.triples.size(); ++i) {
    std::vector<int> got = structural_neighbors(b.kg, b.embedding, static_cast<int>(i), 3);
    std::sort(got.begin(), got.end());
    CHECK(got == brute_force_ss(b.kg, b.embedding, static_cast<int>(i), 3));
  }
}

TEST_CASE("benchmark records") {
  const Benchmark& b = default_bench();
  CHECK(b.facts.size() == 200);
  CHECK(b.explanations.size() == 40);
  CHECK(check_records(b.facts, b.tokenizer).ok());
  CHECK(check_records(b.explanations, b.tokenizer).ok());
  std::set<std::string> corpus_answers;
  for (const CorpusEntry& c : b.corpus) corpus_answers.insert(c.answer);
  for (const EditRecord& r : b.facts) {
    CHECK(r.answer_edit != r.answer_true);
    CHECK(r.locality.size() == 5);
    for (const LocalityQa& qa : r.locality.at(LocalityClass::td)) CHECK(qa.a == r.answer_true);
    for (const LocalityQa& qa : r.locality.at(LocalityClass::em)) CHECK(qa.q.find(r.subject) != std::string::npos);
    for (const auto& [cls, qas] : r.locality) {
      CHECK(qas.size() <= 3);
      for (const LocalityQa& qa : qas) CHECK(corpus_answers.count(qa.a) == 1);
    }
  }
  for (const EditRecord& r : b.explanations) {
    CHECK(r.locality.count(LocalityClass::ts) == 1);
    CHECK(r.locality.count(LocalityClass::td) == 0);
    const std::size_t len = b.tokenizer.encode(r.answer_true).size();
    CHECK(len >= 10);
    CHECK(len <= 20);
    CHECK(b.tokenizer.encode(r.answer_edit).size() <= 20);
    CHECK(r.question.rfind("Explain ", 0) == 0);
  }
  BenchConfig same;
  same.seed = 5;
  const Benchmark again = build_benchmark(same);
  CHECK(again.facts == b.facts);
  CHECK(again.tokenizer.to_json() == b.tokenizer.to_json());
}

TEST_CASE("leak and span checks catch bad records") {
  const Benchmark& b = default_bench();
  EditRecord r = b.facts[0];
  r.locality[LocalityClass::ts].push_back({r.rephrase, r.answer_true});
  r.subject_span = {0, 1};
  r.answer_edit = "Zebra";
  const DatasetCheck c = check_records({r}, b.tokenizer);
  CHECK(c.leaks == 1);
  CHECK(c.span_failures == 1);
  CHECK(c.unknown_tokens == 1);
}

TEST_CASE("dataset export") {
  const Benchmark& b = default_bench();
  const Splits s = split_records(b.facts, {0.6, 0.2, 0.2}, 4);
  CHECK(s.train.size() == 120);
  CHECK(s.valid.size() == 40);
  CHECK(s.test.size() == 40);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.valid, &s.test})
    for (const EditRecord& r : *part) ids.insert(r.id);
  CHECK(ids.size() == 200);
  CHECK_THROWS_AS(split_records(b.facts, {0.6, 0.3, 0.2}, 4), ContractError);

  const auto dir = std::filesystem::temp_directory_path() / "medlasa_export_test";
  std::filesystem::remove_all(dir);
  export_dataset(b.facts, {0.6, 0.2, 0.2}, 4, dir / "a");
  export_dataset(b.facts, {0.6, 0.2, 0.2}, 4, dir / "b");
  for (const char* f : {"train.json", "valid.json", "test.json", "distribution.csv"})
    CHECK(io::read_file(dir / "a" / f) == io::read_file(dir / "b" / f));
  const std::vector<EditRecord> test = load_split(dir / "a" / "test.json");
  CHECK(test == s.test);
  const std::string csv = io::read_file(dir / "a" / "distribution.csv");
  CHECK(csv.rfind("type,count\n", 0) == 0);
  std::size_t total = 0;
  std::istringstream lines(csv.substr(11));
  for (std::string line; std::getline(lines, line);) total += std::stoul(line.substr(line.find(',') + 1));
  CHECK(total == 200);
  io::write_file_atomic(dir / "bad.json", "{\"id\": 1}");
  CHECK_THROWS_AS(load_split(dir / "bad.json"), FormatError);
  std::filesystem::remove_all(dir);
}
