#include "cnnqa/fusion.hpp"

#include <algorithm>

#include "cnnqa/errors.hpp"

namespace cnnqa {

void MultimodalConvParams::validate() const {
  if (weights.rank() != 2 || biases.rank() != 1)
    throw DimensionError("multimodal params need a weight matrix and a bias vector");
  if (weights.cols() % 3 != 0)
    throw DimensionError("multimodal weight columns " + std::to_string(weights.cols()) +
                         " not a multiple of 3");
  if (biases.size() != weights.rows())
    throw DimensionError("multimodal biases " + biases.shape_string() + " vs weights " +
                         weights.shape_string());
}

MultimodalConvParams MultimodalConvParams::zeros_like() const {
  return {Tensor(weights.shape()), Tensor(biases.shape()), activation};
}

MultimodalConvParams MultimodalConvParams::init(std::size_t joint_dim, std::size_t feature_maps,
                                                Activation activation, Rng& rng) {
  MultimodalConvParams p{Tensor::zeros(feature_maps, 3 * joint_dim), Tensor({feature_maps}),
                         activation};
  glorot_uniform(p.weights, 3 * joint_dim, feature_maps, rng);
  return p;
}

Tensor FuseTrace::result() const {
  auto row = pooled.output.row(0);
  return Tensor::vector({row.begin(), row.end()});
}

namespace {

void check_dims(const QuestionRepresentation& question, const Tensor& image) {
  if (question.positions.rank() != 2)
    throw DimensionError("question representation must be [P x d], got " +
                         question.positions.shape_string());
  if (image.size() != question.dim())
    throw DimensionError("image vector " + image.shape_string() + " vs question segments " +
                         question.positions.shape_string());
}

}  // namespace

FuseTrace fuse_traced(const QuestionRepresentation& question, const Tensor& image,
                      const MultimodalConvParams& params) {
  params.validate();
  check_dims(question, image);
  const std::size_t d = question.dim();
  const std::size_t pairs_plus_one = question.count();
  if (pairs_plus_one < 2)
    throw ArgumentError("multimodal convolution needs at least two question segments, got " +
                        std::to_string(pairs_plus_one));
  if (params.joint_dim() != d)
    throw DimensionError("multimodal weights " + params.weights.shape_string() +
                         " vs segment dim " + std::to_string(d));
  const std::size_t positions = pairs_plus_one - 1;
  const std::size_t maps = params.feature_maps();
  FuseTrace t;
  t.inputs = Tensor::zeros(positions, 3 * d);
  t.outputs = Tensor::zeros(positions, maps);
  for (std::size_t i = 0; i < positions; ++i) {
    auto in = t.inputs.row(i);
    std::ranges::copy(question.positions.row(i), in.begin());
    std::ranges::copy(image.values(), in.begin() + d);
    std::ranges::copy(question.positions.row(i + 1), in.begin() + 2 * d);
    auto out = t.outputs.row(i);
    for (std::size_t f = 0; f < maps; ++f) out[f] = dot(params.weights.row(f), in) + params.biases[f];
    activate(params.activation, out);
  }
  t.pooled = max_over_positions(t.outputs);
  return t;
}

Tensor fuse(const QuestionRepresentation& question, const Tensor& image,
            const MultimodalConvParams& params) {
  return fuse_traced(question, image, params).result();
}

FuseGrad fuse_backward(const FuseTrace& trace, const Tensor& grad_output,
                       const MultimodalConvParams& params, MultimodalConvParams& grad) {
  const std::size_t maps = params.feature_maps();
  const std::size_t d = params.joint_dim();
  const std::size_t positions = trace.outputs.rows();
  if (grad_output.size() != maps)
    throw DimensionError("fuse_backward: upstream " + grad_output.shape_string());
  Tensor g_out = maxpool_backward(Tensor::matrix(1, maps, grad_output.storage()),
                                  trace.pooled.source, positions);
  FuseGrad result{Tensor::zeros(positions + 1, d), Tensor({d})};
  std::vector<double> g_in(3 * d);
  for (std::size_t i = 0; i < positions; ++i) {
    auto g = g_out.row(i);
    activation_backward(params.activation, trace.outputs.row(i), g);
    std::ranges::fill(g_in, 0.0);
    for (std::size_t f = 0; f < maps; ++f) {
      if (g[f] == 0.0) continue;
      grad.biases[f] += g[f];
      axpy(g[f], trace.inputs.row(i), grad.weights.row(f));
      axpy(g[f], params.weights.row(f), g_in);
    }
    std::span<const double> gi(g_in);
    axpy(1.0, gi.subspan(0, d), result.question.row(i));
    axpy(1.0, gi.subspan(d, d), result.image.values());
    axpy(1.0, gi.subspan(2 * d, d), result.question.row(i + 1));
  }
  return result;
}

ConcatTrace fuse_concat_ablation_traced(const QuestionRepresentation& question,
                                        const Tensor& image) {
  check_dims(question, image);
  ConcatTrace t;
  t.pooled_question = max_over_positions(question.positions);
  auto pooled = t.pooled_question.output.row(0);
  std::vector<double> out(pooled.begin(), pooled.end());
  out.insert(out.end(), image.values().begin(), image.values().end());
  t.output = Tensor::vector(std::move(out));
  return t;
}

Tensor fuse_concat_ablation(const QuestionRepresentation& question, const Tensor& image) {
  return fuse_concat_ablation_traced(question, image).output;
}

FuseGrad fuse_concat_ablation_backward(const ConcatTrace& trace, const Tensor& grad_output,
                                       std::size_t question_positions) {
  const std::size_t d = trace.pooled_question.output.cols();
  if (grad_output.size() != 2 * d)
    throw DimensionError("fuse_concat_ablation_backward: upstream " + grad_output.shape_string());
  auto g = grad_output.values();
  std::vector<double> gq(g.begin(), g.begin() + d);
  std::vector<double> gi(g.begin() + d, g.end());
  return {maxpool_backward(Tensor::matrix(1, d, std::move(gq)), trace.pooled_question.source,
                           question_positions),
          Tensor::vector(std::move(gi))};
}

}  // namespace cnnqa
