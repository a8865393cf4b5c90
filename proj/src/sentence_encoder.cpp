#include "cnnqa/sentence_encoder.hpp"

#include "cnnqa/errors.hpp"

namespace cnnqa {

std::size_t SentenceEncoderConfig::output_positions() const {
  std::size_t len = max_len;
  for (std::size_t stage = 0; stage < kSentenceStages; ++stage) {
    if (len < receptive_field)
      throw ArgumentError("sentence stage " + std::to_string(stage + 1) + " receives " +
                          std::to_string(len) + " positions, fewer than the receptive field " +
                          std::to_string(receptive_field) + " (max_len " +
                          std::to_string(max_len) + " too small)");
    len = len - receptive_field + 1;
    len = (len + 1) / 2;
  }
  return len;
}

void SentenceEncoderConfig::validate() const {
  if (max_len == 0 || embed_dim == 0 || receptive_field == 0)
    throw ArgumentError("sentence encoder sizes must be positive");
  for (auto f : feature_maps)
    if (f == 0) throw ArgumentError("feature map counts must be positive");
  output_positions();
}

SentenceEncoderParams SentenceEncoderParams::zeros_like() const {
  SentenceEncoderParams g{{Tensor(embeddings.vectors.shape())}, {}};
  for (std::size_t i = 0; i < kSentenceStages; ++i) g.stages[i] = stages[i].zeros_like();
  return g;
}

SentenceEncoderParams SentenceEncoderParams::init(const SentenceEncoderConfig& config,
                                                  std::size_t vocab_size, Rng& rng) {
  config.validate();
  if (vocab_size < 2) throw ArgumentError("question vocabulary needs the two reserved tokens");
  SentenceEncoderParams p;
  p.embeddings = EmbeddingTable::init(vocab_size, config.embed_dim, rng);
  std::size_t in_dim = config.embed_dim;
  for (std::size_t i = 0; i < kSentenceStages; ++i) {
    p.stages[i] = ConvLayerParams::init(in_dim, config.feature_maps[i], config.receptive_field,
                                        config.activation, rng);
    in_dim = config.feature_maps[i];
  }
  return p;
}

std::vector<TokenId> pad_or_reject(std::span<const TokenId> tokens, std::size_t max_len) {
  if (tokens.empty()) throw ArgumentError("empty question");
  if (tokens.size() > max_len)
    throw ArgumentError("question of " + std::to_string(tokens.size()) +
                        " tokens is longer than the maximum of " + std::to_string(max_len));
  std::vector<TokenId> padded(tokens.begin(), tokens.end());
  padded.resize(max_len, kPadToken);
  return padded;
}

SentenceTrace encode_question_traced(std::span<const TokenId> tokens,
                                     const SentenceEncoderParams& params,
                                     const SentenceEncoderConfig& config) {
  SentenceTrace t;
  t.padded = pad_or_reject(tokens, config.max_len);
  t.embedded = embed(t.padded, params.embeddings);
  const Tensor* input = &t.embedded;
  for (std::size_t i = 0; i < kSentenceStages; ++i) {
    t.conv[i] = conv1d(*input, params.stages[i]);
    t.pooled[i] = maxpool(t.conv[i]);
    input = &t.pooled[i].output;
  }
  return t;
}

QuestionRepresentation encode_question(std::span<const TokenId> tokens,
                                       const SentenceEncoderParams& params,
                                       const SentenceEncoderConfig& config) {
  return {encode_question_traced(tokens, params, config).output()};
}

void encode_question_backward(const SentenceTrace& trace, const Tensor& grad_output,
                              const SentenceEncoderParams& params, SentenceEncoderParams& grad) {
  Tensor g = grad_output;
  for (std::size_t k = kSentenceStages; k-- > 0;) {
    const Tensor& input = k == 0 ? trace.embedded : trace.pooled[k - 1].output;
    Tensor g_conv = maxpool_backward(g, trace.pooled[k].source, trace.conv[k].rows());
    g = conv1d_backward(input, trace.conv[k], g_conv, params.stages[k], grad.stages[k]);
  }
  for (std::size_t i = 0; i < trace.padded.size(); ++i) {
    const TokenId id = trace.padded[i];
    if (id == kPadToken) continue;
    axpy(1.0, g.row(i), grad.embeddings.vectors.row(id));
  }
}

}  // namespace cnnqa
