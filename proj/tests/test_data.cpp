#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "cnnqa/data.hpp"
#include "cnnqa/errors.hpp"
#include "support.hpp"

using namespace cnnqa;

TEST_CASE("tokenize") {
  CHECK(tokenize("What is on the TABLE ?") ==
        std::vector<std::string>{"what", "is", "on", "the", "table"});
  CHECK(tokenize("  where\tis it?! ") == std::vector<std::string>{"where", "is", "it"});
  CHECK(tokenize("").empty());
}

TEST_CASE("parse triplets") {
  SUBCASE("example line") {
    std::istringstream in("img7\twhat is on the table ?\tknife\n");
    const auto t = parse_triplets(in);
    REQUIRE(t.size() == 1);
    CHECK(t[0] == Triplet{"img7", {"what", "is", "on", "the", "table"}, "knife"});
  }
  SUBCASE("multi-word answers stay one string") {
    std::istringstream in("a\twhat is it\tred chair\n");
    CHECK(parse_triplets(in)[0].answer == "red chair");
  }
  SUBCASE("empty question field reports the line") {
    std::istringstream in("a\twhat\tx\nb\t\ty\n");
    try {
      parse_triplets(in);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("missing field") {
    std::istringstream in("a\twhat is it\n");
    CHECK_THROWS_AS(parse_triplets(in), ParseError);
  }
}

TEST_CASE("triplet files round-trip") {
  support::TempDir dir("triplets");
  const auto ds = generate_synthetic({.samples = 60, .seed = 3});
  std::vector<Triplet> all = ds.triplets;
  all.push_back({"x", {"what", "is", "it"}, "red chair"});
  save_triplets(dir / "t.tsv", all);
  CHECK(load_triplets(dir / "t.tsv") == all);
  CHECK_THROWS_AS(load_triplets(dir / "missing.tsv"), IoError);
}

TEST_CASE("vocabularies") {
  const std::vector<Triplet> train{{"i", {"what", "is", "it"}, "a"},
                                   {"i", {"what", "now"}, "b"},
                                   {"i", {"is", "it"}, "a"}};
  const auto v = build_vocabs(train);
  CHECK(v.answers.size() == 2);
  CHECK(v.answers.answer(0) == "a");
  CHECK(v.questions.size() == 2 + 4);
  CHECK(v.questions.id("<pad>") == kPadToken);
  CHECK(v.questions.id("zebra") == kUnknownToken);
  CHECK(v.questions.encode(std::vector<std::string>{"what", "zebra"}) ==
        std::vector<TokenId>{2, kUnknownToken});

  const std::vector<Triplet> multi{{"i", {"q"}, "red"}, {"i", {"q"}, "red chair"}};
  CHECK(build_vocabs(multi).answers.size() == 2);
  CHECK_THROWS_AS(build_vocabs(std::span<const Triplet>{}), ArgumentError);
  CHECK_THROWS_AS(v.answers.index("zzz"), VocabularyError);

  const std::vector<Triplet> skewed{{"i", {"q"}, "x"}, {"i", {"q"}, "y"}, {"i", {"q"}, "y"},
                                    {"i", {"q"}, "z"}, {"i", {"q"}, "z"}};
  const auto top = build_vocabs(skewed, 2).answers;
  CHECK(top.answers() == std::vector<std::string>{"y", "z"});

  const auto back = Vocab::from_tokens(v.questions.tokens());
  CHECK(back.tokens() == v.questions.tokens());
  CHECK_THROWS_AS(Vocab::from_tokens({"a", "b"}), VocabularyError);
}

TEST_CASE("question shuffling") {
  const auto ds = generate_synthetic({.samples = 200, .seed = 1});
  const auto a = shuffle_question_words(ds.triplets, 5);
  CHECK(a == shuffle_question_words(ds.triplets, 5));
  bool any_changed = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].answer == ds.triplets[i].answer);
    CHECK(a[i].image_id == ds.triplets[i].image_id);
    auto x = a[i].question, y = ds.triplets[i].question;
    any_changed |= x != y;
    std::ranges::sort(x);
    std::ranges::sort(y);
    CHECK(x == y);
  }
  CHECK(any_changed);
  const std::vector<Triplet> single{{"i", {"why"}, "a"}};
  CHECK(shuffle_question_words(single, 9) == single);
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSpec spec;
  spec.colors = 3;
  spec.samples = 1000;
  spec.seed = 7;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a.triplets.size() == 1000);
  CHECK(a.triplets == b.triplets);
  for (const auto& id : a.features.ids()) {
    const auto x = a.features.at(id), y = b.features.at(id);
    CHECK(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  }
}

TEST_CASE("synthetic oracle") {
  const SyntheticWorld world(SyntheticSpec{});
  const Scene two{"s", {{0, 0, 0}, {1, 1, 2}}};
  const auto q = tokenize("how many objects are there");
  CHECK(world.answer(two, q) == "2");
  CHECK(world.answer(two, tokenize("what color is the box")) == world.color_names()[0]);
  CHECK(world.answer(two, tokenize("what is left of the ball")) == "box");
  CHECK(world.answer(two, tokenize("what is the ball left of")) == "nothing");
  CHECK(world.answer(two, tokenize("is the box left of the ball")) == "yes");
  CHECK(world.answer(two, tokenize("is the ball left of the box")) == "no");
  CHECK(world.answer(two, tokenize("what is on the middle")) == "nothing");
  CHECK_FALSE(world.answer(two, tokenize("where is the cup")).has_value());
  CHECK_FALSE(world.answer(two, tokenize("colorless green ideas")).has_value());
}

TEST_CASE("zero noise gives exact block one-hots") {
  SyntheticSpec spec;
  spec.noise = 0;
  spec.samples = 50;
  const auto ds = generate_synthetic(spec);
  const SyntheticWorld world(spec);
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    const auto f = ds.features.at(ds.scenes[i].image_id);
    std::size_t ones = 0;
    for (double v : f) {
      CHECK((v == 0.0 || v == 1.0));
      ones += v == 1.0;
    }
    CHECK(ones == 3 * ds.scenes[i].objects.size());
    const auto expected = world.encode(ds.scenes[i], nullptr);
    CHECK(std::equal(f.begin(), f.end(), expected.begin(), expected.end()));
  }
}

TEST_CASE("generated labels agree with the oracle and noise stays bounded") {
  SyntheticSpec spec;
  spec.samples = 2500;
  spec.seed = 1;
  const auto ds = generate_synthetic(spec);
  const SyntheticWorld world(spec);
  std::set<std::string> answers;
  for (std::size_t i = 0; i < ds.triplets.size(); ++i) {
    CHECK(world.answer(ds.scenes[i], ds.triplets[i].question) == ds.triplets[i].answer);
    answers.insert(ds.triplets[i].answer);
    const auto f = ds.features.at(ds.triplets[i].image_id);
    const auto clean = world.encode(ds.scenes[i], nullptr);
    for (std::size_t k = 0; k < f.size(); ++k) CHECK(std::abs(f[k] - clean[k]) <= spec.noise);
  }
  CHECK(answers.size() <= 30);
}

TEST_CASE("at least a fifth of synthetic questions are order-sensitive") {
  const auto ds = generate_synthetic({.samples = 1000, .seed = 2});
  const SyntheticWorld world(SyntheticSpec{});
  std::size_t sensitive = 0;
  for (std::size_t i = 0; i < ds.triplets.size(); ++i) {
    const auto& q = ds.triplets[i].question;
    auto perm = q;
    std::ranges::sort(perm);
    bool changes = false;
    do {
      const auto other = world.answer(ds.scenes[i], perm);
      changes = other && *other != ds.triplets[i].answer;
    } while (!changes && std::ranges::next_permutation(perm).found);
    sensitive += changes;
  }
  CHECK(static_cast<double>(sensitive) / ds.triplets.size() >= 0.2);
}

TEST_CASE("invalid synthetic specs") {
  const auto bad = [](auto edit) {
    SyntheticSpec s;
    edit(s);
    return s;
  };
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.object_types = 1; })),
                  ArgumentError);
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.colors = 1; })), ArgumentError);
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.max_objects = 4; })),
                  ArgumentError);
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.samples = 0; })), ArgumentError);
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.noise = 0.1; })), ArgumentError);
  CHECK_THROWS_AS(generate_synthetic(bad([](SyntheticSpec& s) { s.feature_dim = 4; })),
                  ArgumentError);
}
