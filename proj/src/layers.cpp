#include "cnnqa/layers.hpp"

#include <algorithm>
#include <cmath>

#include "cnnqa/errors.hpp"

namespace cnnqa {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "identity") return Activation::Identity;
  throw ArgumentError("unknown activation '" + name + "'");
}

void activate(Activation a, std::span<double> values) {
  switch (a) {
    case Activation::ReLU:
      for (auto& v : values) v = v > 0 ? v : 0.0;
      break;
    case Activation::Sigmoid:
      for (auto& v : values) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case Activation::Identity:
      break;
  }
}

void activation_backward(Activation a, std::span<const double> output, std::span<double> grad) {
  switch (a) {
    case Activation::ReLU:
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(output[i] > 0)) grad[i] = 0.0;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= output[i] * (1.0 - output[i]);
      break;
    case Activation::Identity:
      break;
  }
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = rng.uniform(-r, r);
}

// ---- parameter blocks ---------------------------------------------------

void ConvLayerParams::validate() const {
  if (receptive_field == 0) throw ArgumentError("receptive field must be positive");
  if (weights.rank() != 2 || biases.rank() != 1)
    throw DimensionError("conv params need a weight matrix and a bias vector");
  if (weights.cols() % receptive_field != 0)
    throw DimensionError("conv weight columns " + std::to_string(weights.cols()) +
                         " not a multiple of receptive field " + std::to_string(receptive_field));
  if (biases.size() != weights.rows())
    throw DimensionError("conv biases " + biases.shape_string() + " vs weights " +
                         weights.shape_string());
}

ConvLayerParams ConvLayerParams::zeros_like() const {
  return {Tensor(weights.shape()), Tensor(biases.shape()), receptive_field, activation};
}

ConvLayerParams ConvLayerParams::init(std::size_t input_dim, std::size_t feature_maps,
                                      std::size_t receptive_field, Activation activation,
                                      Rng& rng) {
  ConvLayerParams p{Tensor::zeros(feature_maps, receptive_field * input_dim),
                    Tensor({feature_maps}), receptive_field, activation};
  glorot_uniform(p.weights, receptive_field * input_dim, feature_maps, rng);
  return p;
}

EmbeddingTable EmbeddingTable::init(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  EmbeddingTable t{Tensor::zeros(vocab_size, dim)};
  for (std::size_t r = 1; r < vocab_size; ++r)
    for (auto& v : t.vectors.row(r)) v = rng.uniform(-0.1, 0.1);
  return t;
}

void DenseParams::validate() const {
  if (weights.rank() != 2 || bias.rank() != 1 || bias.size() != weights.rows())
    throw DimensionError("dense bias " + bias.shape_string() + " vs weights " +
                         weights.shape_string());
}

DenseParams DenseParams::zeros_like() const {
  return {Tensor(weights.shape()), Tensor(bias.shape()), activation};
}

DenseParams DenseParams::init(std::size_t input_dim, std::size_t output_dim,
                              Activation activation, Rng& rng) {
  DenseParams p{Tensor::zeros(output_dim, input_dim), Tensor({output_dim}), activation};
  glorot_uniform(p.weights, input_dim, output_dim, rng);
  return p;
}

// ---- embedding ----------------------------------------------------------

Tensor embed(std::span<const TokenId> ids, const EmbeddingTable& table) {
  if (ids.empty()) throw ArgumentError("embed: empty token sequence");
  Tensor out = Tensor::zeros(ids.size(), table.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.vocab_size())
      throw VocabularyError("token id " + std::to_string(ids[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of size " +
                            std::to_string(table.vocab_size()));
    std::ranges::copy(table.vectors.row(ids[i]), out.row(i).begin());
  }
  return out;
}

void embed_backward(std::span<const TokenId> ids, const Tensor& grad_out, EmbeddingTable& grad) {
  if (grad_out.rows() != ids.size() || grad_out.cols() != grad.dim())
    throw DimensionError("embed_backward: upstream " + grad_out.shape_string());
  for (std::size_t i = 0; i < ids.size(); ++i) axpy(1.0, grad_out.row(i), grad.vectors.row(ids[i]));
}

// ---- convolution --------------------------------------------------------

Tensor conv1d(const Tensor& seq, const ConvLayerParams& params) {
  params.validate();
  const std::size_t s = params.receptive_field;
  const std::size_t d = params.input_dim();
  if (seq.rank() != 2 || seq.cols() != d)
    throw DimensionError("conv1d: sequence " + seq.shape_string() + " vs filter input dim " +
                         std::to_string(d));
  if (seq.rows() < s)
    throw ArgumentError("conv1d: sequence of length " + std::to_string(seq.rows()) +
                        " shorter than receptive field " + std::to_string(s));
  const std::size_t positions = seq.rows() - s + 1;
  const std::size_t maps = params.feature_maps();
  Tensor out = Tensor::zeros(positions, maps);
  // Window i is the contiguous slice of rows i..i+s-1.
  for (std::size_t i = 0; i < positions; ++i) {
    auto window = seq.values().subspan(i * d, s * d);
    auto row = out.row(i);
    for (std::size_t f = 0; f < maps; ++f) row[f] = dot(params.weights.row(f), window) + params.biases[f];
    activate(params.activation, row);
  }
  return out;
}

Tensor conv1d_backward(const Tensor& seq, const Tensor& output, const Tensor& grad_output,
                       const ConvLayerParams& params, ConvLayerParams& grad) {
  const std::size_t s = params.receptive_field;
  const std::size_t d = params.input_dim();
  const std::size_t maps = params.feature_maps();
  if (grad_output.rows() != output.rows() || grad_output.cols() != maps)
    throw DimensionError("conv1d_backward: upstream " + grad_output.shape_string());
  Tensor grad_seq(seq.shape());
  std::vector<double> g(maps);
  for (std::size_t i = 0; i < output.rows(); ++i) {
    std::ranges::copy(grad_output.row(i), g.begin());
    activation_backward(params.activation, output.row(i), g);
    auto window = seq.values().subspan(i * d, s * d);
    auto grad_window = grad_seq.values().subspan(i * d, s * d);
    for (std::size_t f = 0; f < maps; ++f) {
      if (g[f] == 0.0) continue;
      grad.biases[f] += g[f];
      axpy(g[f], window, grad.weights.row(f));
      axpy(g[f], params.weights.row(f), grad_window);
    }
  }
  return grad_seq;
}

// ---- max-pooling --------------------------------------------------------

PoolResult maxpool(const Tensor& seq) {
  if (seq.empty()) throw ArgumentError("maxpool: empty sequence");
  if (seq.rank() != 2) throw DimensionError("maxpool: expected [L x F], got " + seq.shape_string());
  const std::size_t len = seq.rows();
  const std::size_t maps = seq.cols();
  const std::size_t out_len = (len + 1) / 2;
  PoolResult r{Tensor::zeros(out_len, maps), std::vector<std::size_t>(out_len * maps)};
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t a = 2 * i;
    const std::size_t b = 2 * i + 1;
    for (std::size_t f = 0; f < maps; ++f) {
      std::size_t src = a;
      if (b < len && seq.at(b, f) > seq.at(a, f)) src = b;
      r.output.at(i, f) = seq.at(src, f);
      r.source[i * maps + f] = src;
    }
  }
  return r;
}

Tensor maxpool_backward(const Tensor& grad_output, std::span<const std::size_t> source,
                        std::size_t input_rows) {
  const std::size_t maps = grad_output.cols();
  if (source.size() != grad_output.size())
    throw DimensionError("maxpool_backward: routing table does not match upstream");
  Tensor grad = Tensor::zeros(input_rows, maps);
  for (std::size_t i = 0; i < grad_output.rows(); ++i)
    for (std::size_t f = 0; f < maps; ++f)
      grad.at(source[i * maps + f], f) += grad_output.at(i, f);
  return grad;
}

PoolResult max_over_positions(const Tensor& seq) {
  if (seq.empty()) throw ArgumentError("max_over_positions: empty sequence");
  const std::size_t maps = seq.cols();
  PoolResult r{Tensor::zeros(1, maps), std::vector<std::size_t>(maps, 0)};
  for (std::size_t f = 0; f < maps; ++f) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < seq.rows(); ++i)
      if (seq.at(i, f) > seq.at(best, f)) best = i;
    r.output.at(0, f) = seq.at(best, f);
    r.source[f] = best;
  }
  return r;
}

// ---- dense --------------------------------------------------------------

Tensor dense(const Tensor& x, const DenseParams& params) {
  params.validate();
  if (x.size() != params.input_dim())
    throw DimensionError("dense: input " + x.shape_string() + " vs weights " +
                         params.weights.shape_string());
  Tensor out({params.output_dim()});
  for (std::size_t r = 0; r < params.output_dim(); ++r)
    out[r] = dot(params.weights.row(r), x.values()) + params.bias[r];
  activate(params.activation, out.values());
  return out;
}

Tensor dense_backward(const Tensor& x, const Tensor& output, const Tensor& grad_output,
                      const DenseParams& params, DenseParams& grad) {
  if (grad_output.size() != params.output_dim())
    throw DimensionError("dense_backward: upstream " + grad_output.shape_string());
  std::vector<double> g(grad_output.values().begin(), grad_output.values().end());
  activation_backward(params.activation, output.values(), g);
  Tensor grad_x({x.size()});
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g[r] == 0.0) continue;
    grad.bias[r] += g[r];
    axpy(g[r], x.values(), grad.weights.row(r));
    axpy(g[r], params.weights.row(r), grad_x.values());
  }
  return grad_x;
}

// ---- dropout ------------------------------------------------------------

DropoutResult dropout(const Tensor& x, double p, Phase phase, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ArgumentError("dropout probability must lie in [0, 1)");
  if (phase == Phase::Eval || p == 0.0) return {x, {}};
  DropoutResult r{x, std::vector<double>(x.size())};
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    r.output[i] *= r.mask[i];
  }
  return r;
}

Tensor dropout_backward(const Tensor& grad_output, std::span<const double> mask) {
  if (mask.empty()) return grad_output;
  if (mask.size() != grad_output.size())
    throw DimensionError("dropout_backward: mask does not match upstream");
  Tensor g = grad_output;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  return g;
}

// ---- softmax / NLL ------------------------------------------------------

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw ArgumentError("softmax: empty logits");
  const double mx = *std::ranges::max_element(logits.values());
  Tensor probs({logits.size()});
  double total = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) total += probs[k] = std::exp(logits[k] - mx);
  for (auto& v : probs.values()) v /= total;
  return probs;
}

SoftmaxNll softmax_nll(const Tensor& logits, std::size_t target) {
  if (logits.size() < 2) throw ArgumentError("softmax_nll: need at least two classes");
  if (target >= logits.size())
    throw ArgumentError("softmax_nll: target " + std::to_string(target) + " outside " +
                        std::to_string(logits.size()) + " classes");
  const double mx = *std::ranges::max_element(logits.values());
  double total = 0;
  for (double l : logits.values()) total += std::exp(l - mx);
  const double log_norm = std::log(total);
  SoftmaxNll r{softmax(logits), log_norm - (logits[target] - mx)};
  return r;
}

Tensor softmax_nll_backward(const Tensor& probs, std::size_t target) {
  Tensor g = probs;
  g[target] -= 1.0;
  return g;
}

}  // namespace cnnqa
