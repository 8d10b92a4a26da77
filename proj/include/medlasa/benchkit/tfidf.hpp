#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace medlasa {

/// Character 3-gram TF-IDF vectors over a fixed document set, L2-normalized.
class TfidfIndex {
 public:
  explicit TfidfIndex(std::span<const std::string> docs);

  double cosine(std::size_t a, std::size_t b) const;
  std::size_t size() const noexcept { return vectors_.size(); }

  /// Padded, lowercased character 3-grams of `text`.
  static std::vector<std::string> trigrams(const std::string& text);

 private:
  std::vector<std::map<std::string, double>> vectors_;
};

/// Indices of the k largest scores among `candidates`, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::span<const std::size_t> candidates, std::size_t k);

}  // namespace medlasa
