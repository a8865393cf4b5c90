#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cnnqa {

/// Single-rooted tree over answer words. The root has depth 1.
class TaxonomyTree {
 public:
  /// (child, parent) pairs; exactly one child has parent "ROOT".
  static TaxonomyTree from_edges(const std::vector<std::pair<std::string, std::string>>& edges);

  bool contains(const std::string& word) const { return parent_.contains(word); }
  std::size_t depth(const std::string& word) const;
  const std::string& root() const { return root_; }
  /// Parent of `word`, or nullopt for the root.
  std::optional<std::string> parent(const std::string& word) const;
  std::string lowest_common_ancestor(const std::string& a, const std::string& b) const;
  std::size_t size() const { return parent_.size(); }

 private:
  std::string root_;
  std::unordered_map<std::string, std::string> parent_;  // root maps to ""
  std::unordered_map<std::string, std::size_t> depth_;
};

/// UTF-8 lines `child<TAB>parent`.
TaxonomyTree parse_taxonomy(std::istream& in);
TaxonomyTree load_taxonomy(const std::filesystem::path& path);

/// 2 depth(lca) / (depth(a) + depth(b)).
double wup_similarity(const std::string& a, const std::string& b, const TaxonomyTree& tree);

struct WupsOptions {
  /// Raise TaxonomyError on words missing from the tree instead of falling
  /// back to exact-match scoring.
  bool strict = false;
};

/// Mean over samples of
///   min( prod_{a in A} max_{t in T} s(a, t),  prod_{t in T} max_{a in A} s(a, t) )
/// where A and T are the word sets of prediction and truth, and s is the
/// Wu-Palmer similarity, multiplied by 0.1 when it falls below `threshold`.
/// Words outside the taxonomy score 1 when identical, 0 otherwise.
/// Empty inputs score 1.0 (vacuous) and log a warning.
double wups_at_t(std::span<const std::string> predictions, std::span<const std::string> truths,
                 const TaxonomyTree& tree, double threshold, WupsOptions options = {});

/// Fraction of case-folded exact matches.
double accuracy(std::span<const std::string> predictions, std::span<const std::string> truths);

struct ScoreReport {
  double accuracy = 0;
  std::optional<double> wups_0_0;
  std::optional<double> wups_0_9;
  std::size_t n = 0;
};

ScoreReport score(std::span<const std::string> predictions, std::span<const std::string> truths,
                  const TaxonomyTree* tree, WupsOptions options = {});

/// {accuracy, wups_0.0, wups_0.9, n}; WUPS keys are omitted without a taxonomy.
nlohmann::json to_json(const ScoreReport& report);

}  // namespace cnnqa
