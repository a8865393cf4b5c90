#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnnqa/random.hpp"
#include "cnnqa/tensor.hpp"

namespace cnnqa {

using TokenId = std::uint32_t;

enum class Activation { ReLU, Sigmoid, Identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// Applies the activation in place.
void activate(Activation a, std::span<double> values);
/// grad *= f'(pre-activation), expressed through the activation output.
void activation_backward(Activation a, std::span<const double> output, std::span<double> grad);

enum class Phase { Train, Eval };

/// Shared-weight convolution unit over consecutive sequence positions.
/// Row f of `weights` holds the filter of feature map f laid out as
/// receptive_field consecutive input rows.
struct ConvLayerParams {
  Tensor weights;  // [F x receptive_field * d_in]
  Tensor biases;   // [F]
  std::size_t receptive_field = 3;
  Activation activation = Activation::ReLU;

  std::size_t feature_maps() const { return weights.rows(); }
  std::size_t input_dim() const { return weights.cols() / receptive_field; }
  void validate() const;
  ConvLayerParams zeros_like() const;

  static ConvLayerParams init(std::size_t input_dim, std::size_t feature_maps,
                              std::size_t receptive_field, Activation activation, Rng& rng);
};

struct EmbeddingTable {
  Tensor vectors;  // [V x dim]; row 0 is the padding token

  std::size_t vocab_size() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }

  /// Rows uniform on [-0.1, 0.1]; the padding row is zero.
  static EmbeddingTable init(std::size_t vocab_size, std::size_t dim, Rng& rng);
};

struct DenseParams {
  Tensor weights;  // [d_out x d_in]
  Tensor bias;     // [d_out]
  Activation activation = Activation::ReLU;

  std::size_t input_dim() const { return weights.cols(); }
  std::size_t output_dim() const { return weights.rows(); }
  void validate() const;
  DenseParams zeros_like() const;

  static DenseParams init(std::size_t input_dim, std::size_t output_dim, Activation activation,
                          Rng& rng);
};

/// Fills with U[-r, r], r = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// ---- embedding ----------------------------------------------------------

Tensor embed(std::span<const TokenId> ids, const EmbeddingTable& table);
/// Scatters grad_out rows into grad.vectors.
void embed_backward(std::span<const TokenId> ids, const Tensor& grad_out, EmbeddingTable& grad);

// ---- convolution --------------------------------------------------------

/// Valid convolution: [L x d_in] -> [(L - receptive_field + 1) x F].
Tensor conv1d(const Tensor& seq, const ConvLayerParams& params);

/// Returns the gradient w.r.t. seq and accumulates parameter gradients.
Tensor conv1d_backward(const Tensor& seq, const Tensor& output, const Tensor& grad_output,
                       const ConvLayerParams& params, ConvLayerParams& grad);

// ---- max-pooling --------------------------------------------------------

struct PoolResult {
  Tensor output;                    // [ceil(L/2) x F]
  std::vector<std::size_t> source;  // input row feeding each output entry
};

/// Pairwise max with stride two; an unpaired last row is copied through and
/// ties pick the earlier row.
PoolResult maxpool(const Tensor& seq);
Tensor maxpool_backward(const Tensor& grad_output, std::span<const std::size_t> source,
                        std::size_t input_rows);

/// Per-column max over all rows, giving a [1 x F] output (earliest row wins ties).
/// maxpool_backward undoes it.
PoolResult max_over_positions(const Tensor& seq);

// ---- dense --------------------------------------------------------------

Tensor dense(const Tensor& x, const DenseParams& params);
Tensor dense_backward(const Tensor& x, const Tensor& output, const Tensor& grad_output,
                      const DenseParams& params, DenseParams& grad);

// ---- dropout ------------------------------------------------------------

struct DropoutResult {
  Tensor output;
  std::vector<double> mask;  // per-entry scale (0 or 1/(1-p)); empty means identity
};

/// Inverted dropout. Eval phase is the identity.
DropoutResult dropout(const Tensor& x, double p, Phase phase, Rng& rng);
Tensor dropout_backward(const Tensor& grad_output, std::span<const double> mask);

// ---- softmax / NLL head -------------------------------------------------

Tensor softmax(const Tensor& logits);

struct SoftmaxNll {
  Tensor probs;
  double loss = 0;
};

SoftmaxNll softmax_nll(const Tensor& logits, std::size_t target);
/// probs - one_hot(target)
Tensor softmax_nll_backward(const Tensor& probs, std::size_t target);

}  // namespace cnnqa
