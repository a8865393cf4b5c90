#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnnqa/random.hpp"

namespace support {

using Edges = std::vector<std::pair<std::string, std::string>>;

/// Independent evaluation of the scoring formula straight from the edge list.
struct BruteForce {
  std::map<std::string, std::string> parent;

  explicit BruteForce(const Edges& edges) {
    for (const auto& [c, p] : edges) parent[c] = p;
  }

  std::vector<std::string> path(const std::string& w) const {
    std::vector<std::string> up{w};
    while (parent.at(up.back()) != "ROOT") up.push_back(parent.at(up.back()));
    return {up.rbegin(), up.rend()};
  }

  double wup(const std::string& a, const std::string& b) const {
    const auto pa = path(a), pb = path(b);
    std::size_t common = 0;
    while (common < pa.size() && common < pb.size() && pa[common] == pb[common]) ++common;
    return 2.0 * common / static_cast<double>(pa.size() + pb.size());
  }

  double s(const std::string& a, const std::string& b, double t) const {
    if (!parent.contains(a) || !parent.contains(b)) return a == b ? 1.0 : 0.0;
    const double v = wup(a, b);
    return v < t ? 0.1 * v : v;
  }

  static std::set<std::string> words(const std::string& answer) {
    std::istringstream in(answer);
    std::set<std::string> out;
    for (std::string w; in >> w;) out.insert(w);
    return out;
  }

  double score(const std::vector<std::string>& preds, const std::vector<std::string>& truths,
               double t) const {
    double total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto A = words(preds[i]), T = words(truths[i]);
      double left = 1, right = 1;
      for (const auto& a : A) {
        double best = 0;
        for (const auto& x : T) best = std::max(best, s(a, x, t));
        left *= best;
      }
      for (const auto& x : T) {
        double best = 0;
        for (const auto& a : A) best = std::max(best, s(a, x, t));
        right *= best;
      }
      total += std::min(left, right);
    }
    return total / preds.size();
  }
};

inline Edges random_taxonomy(std::size_t nodes, cnnqa::Rng& rng) {
  Edges e{{"n0", "ROOT"}};
  for (std::size_t i = 1; i < nodes; ++i)
    e.emplace_back("n" + std::to_string(i), "n" + std::to_string(rng.index(i)));
  rng.shuffle(e);
  return e;
}

inline std::string random_answer(std::size_t nodes, cnnqa::Rng& rng) {
  std::string out;
  const std::size_t words = 1 + rng.index(3);
  for (std::size_t w = 0; w < words; ++w) {
    if (w) out += " ";
    // Occasionally a word outside the taxonomy.
    out += rng.index(10) == 0 ? "oov" + std::to_string(rng.index(2))
                              : "n" + std::to_string(rng.index(nodes));
  }
  return out;
}

}  // namespace support
