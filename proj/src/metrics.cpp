#include "cnnqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cnnqa/errors.hpp"

namespace cnnqa {

namespace {

constexpr const char* kRootMarker = "ROOT";

std::string fold(const std::string& s) {
  std::string out;
  std::istringstream words(s);
  for (std::string w; words >> w;) {
    if (!out.empty()) out += ' ';
    for (char ch : w) out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

std::set<std::string> word_set(const std::string& answer) {
  std::set<std::string> words;
  std::istringstream in(fold(answer));
  for (std::string w; in >> w;) words.insert(w);
  return words;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b)
    throw DimensionError("predictions (" + std::to_string(a) + ") and truths (" +
                         std::to_string(b) + ") differ in length");
}

}  // namespace

// ---- taxonomy -----------------------------------------------------------

TaxonomyTree TaxonomyTree::from_edges(
    const std::vector<std::pair<std::string, std::string>>& edges) {
  TaxonomyTree t;
  for (const auto& [child, parent] : edges) {
    if (child.empty() || parent.empty()) throw ParseError("taxonomy edge with an empty word");
    if (child == kRootMarker) throw ParseError("'ROOT' is reserved and cannot be a node");
    if (t.parent_.contains(child)) throw DuplicateError("taxonomy node '" + child + "' has two parents");
    if (parent == kRootMarker) {
      if (!t.root_.empty())
        throw ParseError("taxonomy has two roots: '" + t.root_ + "' and '" + child + "'");
      t.root_ = child;
      t.parent_.emplace(child, "");
    } else {
      t.parent_.emplace(child, parent);
    }
  }
  if (t.root_.empty()) throw ParseError("taxonomy has no node with parent ROOT");
  for (const auto& [child, parent] : t.parent_)
    if (!parent.empty() && !t.parent_.contains(parent))
      throw ParseError("taxonomy parent '" + parent + "' of '" + child + "' is not a node");

  // Depths by walking to the root; a walk longer than the node count is a cycle.
  for (const auto& [node, _] : t.parent_) {
    std::vector<std::string> path;
    std::string cur = node;
    while (!t.depth_.contains(cur)) {
      path.push_back(cur);
      if (path.size() > t.parent_.size())
        throw ParseError("taxonomy contains a cycle through '" + node + "'");
      const std::string& up = t.parent_.at(cur);
      if (up.empty()) {
        t.depth_[cur] = 1;
        path.pop_back();
        break;
      }
      cur = up;
    }
    std::size_t d = t.depth_.at(cur);
    for (auto it = path.rbegin(); it != path.rend(); ++it) t.depth_[*it] = ++d;
  }
  return t;
}

std::size_t TaxonomyTree::depth(const std::string& word) const {
  auto it = depth_.find(word);
  if (it == depth_.end()) throw TaxonomyError("word '" + word + "' is not in the taxonomy");
  return it->second;
}

std::optional<std::string> TaxonomyTree::parent(const std::string& word) const {
  auto it = parent_.find(word);
  if (it == parent_.end()) throw TaxonomyError("word '" + word + "' is not in the taxonomy");
  if (it->second.empty()) return std::nullopt;
  return it->second;
}

std::string TaxonomyTree::lowest_common_ancestor(const std::string& a, const std::string& b) const {
  std::string x = a, y = b;
  std::size_t dx = depth(x), dy = depth(y);
  while (dx > dy) x = parent_.at(x), --dx;
  while (dy > dx) y = parent_.at(y), --dy;
  while (x != y) x = parent_.at(x), y = parent_.at(y);
  return x;
}

TaxonomyTree parse_taxonomy(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw ParseError("expected 'child<TAB>parent'", lineno);
    edges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return TaxonomyTree::from_edges(edges);
}

TaxonomyTree load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open taxonomy " + path.string());
  return parse_taxonomy(in);
}

double wup_similarity(const std::string& a, const std::string& b, const TaxonomyTree& tree) {
  const std::string lca = tree.lowest_common_ancestor(a, b);
  return 2.0 * static_cast<double>(tree.depth(lca)) /
         static_cast<double>(tree.depth(a) + tree.depth(b));
}

// ---- scoring ------------------------------------------------------------

double wups_at_t(std::span<const std::string> predictions, std::span<const std::string> truths,
                 const TaxonomyTree& tree, double threshold, WupsOptions options) {
  check_lengths(predictions.size(), truths.size());
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ArgumentError("WUPS threshold must lie in [0, 1]");
  if (predictions.empty()) {
    std::clog << "warning: WUPS over zero samples is vacuously 1.0\n";
    return 1.0;
  }
  auto sim = [&](const std::string& a, const std::string& b) {
    if (!tree.contains(a) || !tree.contains(b)) {
      if (options.strict)
        throw TaxonomyError("'" + (tree.contains(a) ? b : a) + "' is not in the taxonomy");
      return a == b ? 1.0 : 0.0;
    }
    const double s = a == b ? 1.0 : wup_similarity(a, b, tree);
    return s < threshold ? 0.1 * s : s;
  };
  auto directed = [&](const std::set<std::string>& from, const std::set<std::string>& to) {
    double prod = 1.0;
    for (const auto& a : from) {
      double best = 0.0;
      for (const auto& b : to) best = std::max(best, sim(a, b));
      prod *= best;
    }
    return prod;
  };
  double total = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto pred = word_set(predictions[i]);
    const auto truth = word_set(truths[i]);
    total += std::min(directed(pred, truth), directed(truth, pred));
  }
  return total / static_cast<double>(predictions.size());
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> truths) {
  check_lengths(predictions.size(), truths.size());
  if (predictions.empty()) throw ArgumentError("accuracy of zero samples is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (fold(predictions[i]) == fold(truths[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

ScoreReport score(std::span<const std::string> predictions, std::span<const std::string> truths,
                  const TaxonomyTree* tree, WupsOptions options) {
  ScoreReport r;
  r.accuracy = accuracy(predictions, truths);
  r.n = predictions.size();
  if (tree) {
    r.wups_0_0 = wups_at_t(predictions, truths, *tree, 0.0, options);
    r.wups_0_9 = wups_at_t(predictions, truths, *tree, 0.9, options);
  }
  return r;
}

nlohmann::json to_json(const ScoreReport& report) {
  nlohmann::json j{{"accuracy", report.accuracy}, {"n", report.n}};
  if (report.wups_0_0) j["wups_0.0"] = *report.wups_0_0;
  if (report.wups_0_9) j["wups_0.9"] = *report.wups_0_9;
  return j;
}

}  // namespace cnnqa
