#include <doctest.h>

#include <algorithm>

#include "cnnqa/errors.hpp"
#include "cnnqa/sentence_encoder.hpp"
#include "support.hpp"

using namespace cnnqa;

namespace {

SentenceEncoderConfig small_config() {
  SentenceEncoderConfig c;
  c.max_len = 23;
  c.embed_dim = 4;
  c.feature_maps = {6, 6, 6};
  return c;
}

std::vector<TokenId> random_question(std::size_t len, std::size_t vocab, Rng& rng) {
  std::vector<TokenId> q(len);
  for (auto& t : q) t = static_cast<TokenId>(1 + rng.index(vocab - 1));
  return q;
}

/// Replaces every parameter with U[-0.5, 0.5] (pad row stays zero).
void randomize(SentenceEncoderParams& p, Rng& rng) {
  for (auto& v : p.embeddings.vectors.values()) v = rng.uniform(-0.5, 0.5);
  p.embeddings.vectors.row(kPadToken)[0] = 0;
  std::fill(p.embeddings.vectors.row(kPadToken).begin(), p.embeddings.vectors.row(kPadToken).end(),
            0.0);
  for (auto& s : p.stages) {
    for (auto& v : s.weights.values()) v = rng.uniform(-0.5, 0.5);
    for (auto& v : s.biases.values()) v = rng.uniform(-0.5, 0.5);
  }
}

}  // namespace

TEST_CASE("pad_or_reject") {
  std::vector<TokenId> full(38, 4);
  CHECK(pad_or_reject(full, 38) == full);
  std::vector<TokenId> ten(10, 3);
  const auto padded = pad_or_reject(ten, 38);
  CHECK(padded.size() == 38);
  CHECK(std::count(padded.begin(), padded.end(), kPadToken) == 28);
  CHECK(std::equal(ten.begin(), ten.end(), padded.begin()));
  CHECK_THROWS_AS(pad_or_reject(std::vector<TokenId>(39, 2), 38), ArgumentError);
  CHECK_THROWS_AS(pad_or_reject(std::vector<TokenId>{}, 38), ArgumentError);
}

TEST_CASE("position arithmetic") {
  CHECK(SentenceEncoderConfig{}.output_positions() == 3);
  SentenceEncoderConfig c;
  c.max_len = 23;
  CHECK(c.output_positions() == 2);
  c.max_len = 15;
  CHECK(c.output_positions() == 1);
  // Three conv(3) + pool(2) stages cannot run on 10 tokens.
  c.max_len = 10;
  CHECK_THROWS_AS(c.output_positions(), ArgumentError);
}

TEST_CASE("default configuration gives [3 x 400] for every length") {
  const SentenceEncoderConfig c;
  Rng rng(0);
  const auto params = SentenceEncoderParams::init(c, 50, rng);
  for (std::size_t len = 1; len <= c.max_len; ++len) {
    const auto q = encode_question(random_question(len, 50, rng), params, c);
    CHECK(q.count() == 3);
    CHECK(q.dim() == 400);
  }
}

TEST_CASE("a single real token: output depends only on its row") {
  const auto c = small_config();
  Rng rng(7);
  auto params = SentenceEncoderParams::init(c, 12, rng);
  const std::vector<TokenId> question{5};
  const Tensor before = encode_question(question, params, c).positions;
  for (std::size_t r = 1; r < 12; ++r)
    if (r != 5)
      for (auto& v : params.embeddings.vectors.row(r)) v = rng.uniform(-1, 1);
  CHECK(encode_question(question, params, c).positions == before);
  params.embeddings.vectors.row(5)[0] += 0.5;
  CHECK_FALSE(encode_question(question, params, c).positions == before);
}

TEST_CASE("encoder is sensitive to word order") {
  const auto c = small_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto params = SentenceEncoderParams::init(c, 12, rng);
    randomize(params, rng);
    const std::vector<TokenId> q{2, 3, 4, 5, 6, 7};
    const Tensor base = encode_question(q, params, c).positions;
    bool changed = false;
    auto perm = q;
    while (std::next_permutation(perm.begin(), perm.end()) && !changed)
      changed = !(encode_question(perm, params, c).positions == base);
    CHECK(changed);
  }
}

TEST_CASE("encoder gradients match finite differences") {
  const auto c = small_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto params = SentenceEncoderParams::init(c, 12, rng);
    randomize(params, rng);
    const auto question = random_question(1 + rng.index(c.max_len), 12, rng);
    const Tensor probe = support::random_tensor({2, 6}, rng);
    auto loss = [&] {
      return support::weighted_sum(encode_question(question, params, c).positions, probe);
    };
    auto grad = params.zeros_like();
    encode_question_backward(encode_question_traced(question, params, c), probe, params, grad);

    auto numeric = support::numeric_gradient(params.embeddings.vectors, loss);
    // The padding row is frozen; only real rows are compared.
    for (std::size_t j = 0; j < c.embed_dim; ++j) {
      CHECK(grad.embeddings.vectors.at(kPadToken, j) == 0.0);
      numeric[j] = 0.0;
    }
    CHECK(support::max_relative_error(grad.embeddings.vectors.values(), numeric) < 1e-3);
    for (std::size_t s = 0; s < kSentenceStages; ++s) {
      CHECK(support::max_relative_error(grad.stages[s].weights.values(),
                                        support::numeric_gradient(params.stages[s].weights, loss)) <
            1e-3);
      CHECK(support::max_relative_error(grad.stages[s].biases.values(),
                                        support::numeric_gradient(params.stages[s].biases, loss)) <
            1e-3);
    }
  }
}

TEST_CASE("encoding is deterministic") {
  const auto c = small_config();
  Rng a(3), b(3);
  const auto pa = SentenceEncoderParams::init(c, 12, a);
  const auto pb = SentenceEncoderParams::init(c, 12, b);
  const std::vector<TokenId> q{2, 9, 4};
  CHECK(encode_question(q, pa, c).positions == encode_question(q, pb, c).positions);
}
