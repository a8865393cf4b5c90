#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cnnqa/data.hpp"
#include "cnnqa/errors.hpp"
#include "cnnqa/metrics.hpp"
#include "support.hpp"
#include "wups_oracle.hpp"

using namespace cnnqa;

namespace {

using support::BruteForce;
using support::Edges;
using support::random_answer;
using support::random_taxonomy;

const Edges kAnimals = {{"root", "ROOT"}, {"animal", "root"}, {"cat", "animal"}, {"dog", "animal"}};

}  // namespace

TEST_CASE("wup similarity examples") {
  const auto tree = TaxonomyTree::from_edges(kAnimals);
  CHECK(tree.depth("root") == 1);
  CHECK(tree.depth("cat") == 3);
  CHECK(wup_similarity("cat", "dog", tree) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(wup_similarity("cat", "animal", tree) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(wup_similarity("dog", "dog", tree) == 1.0);
  CHECK(tree.lowest_common_ancestor("cat", "dog") == "animal");
  CHECK_THROWS_AS(wup_similarity("cat", "fish", tree), TaxonomyError);
}

TEST_CASE("wups examples") {
  const auto tree = TaxonomyTree::from_edges(kAnimals);
  const std::vector<std::string> pred{"cat"}, truth{"dog"};
  CHECK(wups_at_t(pred, truth, tree, 0.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(wups_at_t(pred, truth, tree, 0.9) == doctest::Approx(0.0667).epsilon(1e-3));
  CHECK(wups_at_t(pred, truth, tree, 0.9) == doctest::Approx(0.2 / 3.0).epsilon(1e-12));
  const std::vector<std::string> same{"cat", "dog animal"};
  CHECK(wups_at_t(same, same, tree, 0.9) == 1.0);
  CHECK(wups_at_t(std::vector<std::string>{}, std::vector<std::string>{}, tree, 0.5) == 1.0);
  CHECK_THROWS_AS(wups_at_t(pred, same, tree, 0.0), DimensionError);
  CHECK_THROWS_AS(wups_at_t(pred, truth, tree, 1.5), ArgumentError);

  const std::vector<std::string> oov{"fish"};
  CHECK(wups_at_t(oov, oov, tree, 0.0) == 1.0);
  CHECK(wups_at_t(oov, truth, tree, 0.0) == 0.0);
  WupsOptions strict;
  strict.strict = true;
  CHECK_THROWS_AS(wups_at_t(oov, truth, tree, 0.0, strict), TaxonomyError);
}

TEST_CASE("accuracy") {
  const std::vector<std::string> t{"a", "b", "c", "d"};
  CHECK(accuracy(std::vector<std::string>{"a", "b", "c", "x"}, t) == 0.75);
  CHECK(accuracy(t, t) == 1.0);
  CHECK(accuracy(std::vector<std::string>{"w", "x", "y", "z"}, t) == 0.0);
  CHECK(accuracy(std::vector<std::string>{"A", "b", "C", "d"}, t) == 1.0);
  CHECK_THROWS_AS(accuracy(std::vector<std::string>{}, std::vector<std::string>{}), ArgumentError);
  CHECK_THROWS_AS(accuracy(std::vector<std::string>{"a"}, t), DimensionError);
}

TEST_CASE("taxonomy errors") {
  CHECK_THROWS_AS(TaxonomyTree::from_edges({{"a", "b"}}), ParseError);
  CHECK_THROWS_AS(TaxonomyTree::from_edges({{"a", "ROOT"}, {"b", "ROOT"}}), ParseError);
  CHECK_THROWS_AS(TaxonomyTree::from_edges({{"a", "ROOT"}, {"b", "a"}, {"b", "a"}}),
                  DuplicateError);
  CHECK_THROWS_AS(TaxonomyTree::from_edges({{"a", "ROOT"}, {"b", "c"}, {"c", "b"}}), ParseError);
  std::istringstream bad("a\tROOT\nb only\n");
  try {
    parse_taxonomy(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_taxonomy("/nonexistent/taxonomy.tsv"), IoError);
}

TEST_CASE("wup and wups properties on random taxonomies") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.index(15);
    const auto tree = TaxonomyTree::from_edges(random_taxonomy(n, rng));
    for (int k = 0; k < 20; ++k) {
      const auto a = "n" + std::to_string(rng.index(n)), b = "n" + std::to_string(rng.index(n));
      const double s = wup_similarity(a, b, tree);
      CHECK(s == wup_similarity(b, a, tree));
      CHECK(s > 0.0);
      CHECK(s <= 1.0);
      CHECK((s == 1.0) == (a == b));
    }
    std::vector<std::string> preds, truths;
    for (int k = 0; k < 8; ++k) {
      preds.push_back(random_answer(n, rng));
      truths.push_back(rng.index(3) == 0 ? preds.back() : random_answer(n, rng));
    }
    double previous = 2.0;
    for (double t : {0.0, 0.2, 0.5, 0.7, 0.9, 1.0}) {
      const double w = wups_at_t(preds, truths, tree, t);
      CHECK(w <= previous);
      previous = w;
    }
    CHECK(wups_at_t(preds, truths, tree, 0.0) >= accuracy(preds, truths));
    CHECK(wups_at_t(truths, truths, tree, 0.0) == accuracy(truths, truths));
  }
}

TEST_CASE("wups matches a brute-force evaluation") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 2 + rng.index(20);
    const auto edges = random_taxonomy(n, rng);
    const auto tree = TaxonomyTree::from_edges(edges);
    const BruteForce oracle(edges);
    std::vector<std::string> preds, truths;
    const std::size_t samples = 1 + rng.index(10);
    for (std::size_t k = 0; k < samples; ++k) {
      preds.push_back(random_answer(n, rng));
      truths.push_back(random_answer(n, rng));
    }
    for (double t : {0.0, 0.9, rng.uniform(0, 1)})
      CHECK(std::abs(wups_at_t(preds, truths, tree, t) - oracle.score(preds, truths, t)) < 1e-9);
  }
}

TEST_CASE("score report JSON") {
  const auto tree = TaxonomyTree::from_edges(kAnimals);
  const std::vector<std::string> p{"cat", "dog"}, t{"cat", "cat"};
  const auto without = to_json(score(p, t, nullptr));
  CHECK(without["accuracy"] == 0.5);
  CHECK(without["n"] == 2);
  CHECK_FALSE(without.contains("wups_0.0"));
  const auto with = to_json(score(p, t, &tree));
  CHECK(with.contains("wups_0.0"));
  CHECK(with.contains("wups_0.9"));
  CHECK(with["wups_0.0"].get<double>() == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
}

TEST_CASE("toy taxonomy covers every synthetic answer") {
  const auto tree =
      load_taxonomy(std::filesystem::path(CNNQA_SOURCE_DIR) / "data" / "toy_taxonomy.tsv");
  SyntheticSpec spec;
  spec.object_types = 8;
  spec.colors = 8;
  spec.feature_dim = 128;
  spec.samples = 3000;
  for (const auto& t : generate_synthetic(spec).triplets) CHECK(tree.contains(t.answer));
}
