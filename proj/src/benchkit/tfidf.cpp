#include "medlasa/benchkit/tfidf.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace medlasa {

std::vector<std::string> TfidfIndex::trigrams(const std::string& text) {
  std::string s = " ";
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  s.push_back(' ');
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) out.push_back(s.substr(i, 3));
  return out;
}

TfidfIndex::TfidfIndex(std::span<const std::string> docs) {
  std::vector<std::map<std::string, double>> tf;
  std::map<std::string, double> df;
  for (const std::string& d : docs) {
    std::map<std::string, double> counts;
    for (const std::string& g : trigrams(d)) counts[g] += 1.0;
    for (const auto& [g, _] : counts) df[g] += 1.0;
    tf.push_back(std::move(counts));
  }
  const double n = static_cast<double>(docs.size());
  for (auto& counts : tf) {
    double norm = 0.0;
    for (auto& [g, c] : counts) {
      c *= std::log((1.0 + n) / (1.0 + df[g])) + 1.0;
      norm += c * c;
    }
    norm = std::sqrt(norm);
    if (norm > 0)
      for (auto& [g, c] : counts) c /= norm;
    vectors_.push_back(std::move(counts));
  }
}

double TfidfIndex::cosine(std::size_t a, std::size_t b) const {
  const auto& x = vectors_.at(a);
  const auto& y = vectors_.at(b);
  double dot = 0.0;
  auto i = x.begin();
  auto j = y.begin();
  while (i != x.end() && j != y.end()) {
    if (i->first < j->first) ++i;
    else if (j->first < i->first) ++j;
    else dot += (i++)->second * (j++)->second;
  }
  return dot;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::span<const std::size_t> candidates, std::size_t k) {
  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  order.resize(std::min(k, order.size()));
  return order;
}

}  // namespace medlasa
