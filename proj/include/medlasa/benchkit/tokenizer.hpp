#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace medlasa {

/// Lowercased words (letter/digit runs) and single punctuation marks.
std::vector<std::string> split_words(std::string_view text);

/// Closed word vocabulary. Id 0 is BOS and id 1 is UNK.
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kUnk = 1;

  Tokenizer();
  /// Vocabulary of every word in `texts`, ids assigned in sorted word order.
  static Tokenizer build(std::span<const std::string> texts);

  /// Word ids without BOS; unknown words map to UNK.
  std::vector<int> encode(std::string_view text) const;
  /// BOS followed by encode(text).
  std::vector<int> encode_prompt(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;
  std::size_t count_unknown(std::string_view text) const;

  int id(std::string_view word) const;
  const std::string& word(int id) const;
  std::size_t size() const noexcept { return words_.size(); }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> words_;
  std::map<std::string, int, std::less<>> ids_;
};

}  // namespace medlasa
