#include "medlasa/benchkit/tokenizer.hpp"

#include <cctype>
#include <set>

#include "medlasa/errors.hpp"

namespace medlasa {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (std::ispunct(c)) out.emplace_back(1, ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokenizer::Tokenizer() : words_{"<bos>", "<unk>"} {
  ids_.emplace("<bos>", kBos);
  ids_.emplace("<unk>", kUnk);
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const std::string& t : texts)
    for (std::string& w : split_words(t)) words.insert(std::move(w));
  Tokenizer tok;
  for (const std::string& w : words) {
    tok.ids_.emplace(w, static_cast<int>(tok.words_.size()));
    tok.words_.push_back(w);
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::vector<int> Tokenizer::encode_prompt(std::string_view text) const {
  std::vector<int> ids{kBos};
  for (int i : encode(text)) ids.push_back(i);
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

std::size_t Tokenizer::count_unknown(std::string_view text) const {
  std::size_t n = 0;
  for (int i : encode(text)) n += i == kUnk;
  return n;
}

int Tokenizer::id(std::string_view word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) throw VocabError("token id outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

nlohmann::json Tokenizer::to_json() const { return {{"words", words_}}; }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok;
  try {
    const auto words = j.at("words").get<std::vector<std::string>>();
    if (words.size() < 2 || words[0] != "<bos>" || words[1] != "<unk>")
      throw FormatError("vocabulary must start with <bos>, <unk>");
    for (std::size_t i = 2; i < words.size(); ++i) {
      if (!tok.ids_.emplace(words[i], static_cast<int>(i)).second) throw FormatError("duplicate vocabulary word");
      tok.words_.push_back(words[i]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary: ") + e.what());
  }
  return tok;
}

}  // namespace medlasa
