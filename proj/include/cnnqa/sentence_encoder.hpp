#pragma once

#include <array>
#include <span>
#include <vector>

#include "cnnqa/layers.hpp"

namespace cnnqa {

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kUnknownToken = 1;

inline constexpr std::size_t kSentenceStages = 3;

struct SentenceEncoderConfig {
  std::size_t max_len = 38;
  std::size_t embed_dim = 50;
  std::array<std::size_t, kSentenceStages> feature_maps{300, 400, 400};
  std::size_t receptive_field = 3;
  Activation activation = Activation::ReLU;

  /// Number of positions left after every conv + pool stage (3 by default:
  /// 38 -> 36 -> 18 -> 16 -> 8 -> 6 -> 3). Throws if a stage runs out of input.
  std::size_t output_positions() const;
  std::size_t output_dim() const { return feature_maps.back(); }
  void validate() const;

  friend bool operator==(const SentenceEncoderConfig&, const SentenceEncoderConfig&) = default;
};

struct SentenceEncoderParams {
  EmbeddingTable embeddings;
  std::array<ConvLayerParams, kSentenceStages> stages;

  SentenceEncoderParams zeros_like() const;
  static SentenceEncoderParams init(const SentenceEncoderConfig& config, std::size_t vocab_size,
                                    Rng& rng);
};

/// The question as a short sequence of segments [P x d_qt].
struct QuestionRepresentation {
  Tensor positions;

  std::size_t count() const { return positions.rows(); }
  std::size_t dim() const { return positions.cols(); }
};

/// Right-pads with kPadToken up to max_len. Empty or over-long questions throw.
std::vector<TokenId> pad_or_reject(std::span<const TokenId> tokens, std::size_t max_len);

/// Intermediate activations kept for the backward pass.
struct SentenceTrace {
  std::vector<TokenId> padded;
  Tensor embedded;
  std::array<Tensor, kSentenceStages> conv;
  std::array<PoolResult, kSentenceStages> pooled;

  const Tensor& output() const { return pooled.back().output; }
};

SentenceTrace encode_question_traced(std::span<const TokenId> tokens,
                                     const SentenceEncoderParams& params,
                                     const SentenceEncoderConfig& config);

QuestionRepresentation encode_question(std::span<const TokenId> tokens,
                                       const SentenceEncoderParams& params,
                                       const SentenceEncoderConfig& config);

/// Accumulates into `grad`. Padding positions never contribute to the
/// embedding gradient, which keeps the padding row frozen at zero.
void encode_question_backward(const SentenceTrace& trace, const Tensor& grad_output,
                              const SentenceEncoderParams& params, SentenceEncoderParams& grad);

}  // namespace cnnqa
