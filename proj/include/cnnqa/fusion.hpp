#pragma once

#include <vector>

#include "cnnqa/layers.hpp"
#include "cnnqa/sentence_encoder.hpp"

namespace cnnqa {

/// Multimodal convolution unit. Each filter row spans three d-dim blocks:
/// question segment i, image vector, question segment i+1.
struct MultimodalConvParams {
  Tensor weights;  // [F_mm x 3d]
  Tensor biases;   // [F_mm]
  Activation activation = Activation::ReLU;

  std::size_t feature_maps() const { return weights.rows(); }
  std::size_t joint_dim() const { return weights.cols() / 3; }
  void validate() const;
  MultimodalConvParams zeros_like() const;

  static MultimodalConvParams init(std::size_t joint_dim, std::size_t feature_maps,
                                   Activation activation, Rng& rng);
};

struct FuseTrace {
  Tensor inputs;   // [(P-1) x 3d], row i = q_i || im || q_{i+1}
  Tensor outputs;  // [(P-1) x F_mm]
  PoolResult pooled;

  Tensor result() const;  // [F_mm]
};

FuseTrace fuse_traced(const QuestionRepresentation& question, const Tensor& image,
                      const MultimodalConvParams& params);

/// Joint representation: the shared unit over every consecutive question
/// pair, max-pooled across the P-1 positions.
Tensor fuse(const QuestionRepresentation& question, const Tensor& image,
            const MultimodalConvParams& params);

struct FuseGrad {
  Tensor question;  // [P x d]
  Tensor image;     // [d]
};

FuseGrad fuse_backward(const FuseTrace& trace, const Tensor& grad_output,
                       const MultimodalConvParams& params, MultimodalConvParams& grad);

struct ConcatTrace {
  PoolResult pooled_question;
  Tensor output;  // [2d]
};

ConcatTrace fuse_concat_ablation_traced(const QuestionRepresentation& question,
                                        const Tensor& image);

/// Parameter-free ablation: max over question positions, then concatenated
/// with the image vector.
Tensor fuse_concat_ablation(const QuestionRepresentation& question, const Tensor& image);

FuseGrad fuse_concat_ablation_backward(const ConcatTrace& trace, const Tensor& grad_output,
                                       std::size_t question_positions);

}  // namespace cnnqa
