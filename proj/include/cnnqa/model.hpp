#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnnqa/fusion.hpp"
#include "cnnqa/image_encoder.hpp"
#include "cnnqa/layers.hpp"
#include "cnnqa/sentence_encoder.hpp"

namespace cnnqa {

enum class Mode { Full, ConcatAblation, LanguageOnly };

std::string to_string(Mode m);
/// Accepts "full", "concat" and "language".
Mode parse_mode(const std::string& name);

struct ModelConfig {
  SentenceEncoderConfig sentence;
  std::size_t joint_dim = 400;    // d: image mapping output and question segment width
  std::size_t fusion_maps = 400;  // F_mm
  std::size_t feature_dim = 4096;
  std::size_t vocab_size = 2;  // question vocabulary including pad and unknown
  std::size_t answer_count = 2;
  double dropout = 0.1;
  Mode mode = Mode::Full;
  Activation activation = Activation::ReLU;
  std::uint64_t seed = 0;

  void validate() const;
  /// Width of the vector the softmax classifier reads.
  std::size_t classifier_input_dim() const;
  /// The sentence config with the model-wide activation applied.
  SentenceEncoderConfig sentence_config() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// All trainable parameters. The image mapping exists unless the mode is
/// LanguageOnly; the multimodal layer exists only in Full mode.
struct ModelParams {
  SentenceEncoderParams sentence;
  std::optional<DenseParams> image;
  std::optional<MultimodalConvParams> fusion;
  DenseParams classifier;  // identity activation, K logits

  ModelParams zeros_like() const;
};

ModelParams init_params(const ModelConfig& config);

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Canonical flattened layout. The padding row of the embedding table is a
/// constant, not a parameter, and is left out.
std::vector<ParamGroup> parameter_layout(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

std::vector<double> flatten(const ModelParams& params);
ModelParams unflatten(std::span<const double> values, const ModelConfig& config);
/// params += alpha * values, with `values` in the flattened layout.
void add_scaled(ModelParams& params, double alpha, std::span<const double> values);

// ---- evaluation ---------------------------------------------------------

struct ForwardTrace {
  SentenceTrace sentence;
  std::vector<double> image_feature;
  Tensor image_mapped;
  FuseTrace fused;
  ConcatTrace concatenated;
  PoolResult pooled_question;
  Tensor joint;
  DropoutResult dropped;
  Tensor logits;
  Tensor probs;
};

/// p(a | q, I). `image_feature` is ignored (and may be empty) in LanguageOnly
/// mode. Dropout is drawn from `rng` only in the Train phase.
ForwardTrace forward(std::span<const TokenId> question, std::span<const double> image_feature,
                     const ModelParams& params, const ModelConfig& config, Phase phase, Rng& rng);

ForwardTrace forward(std::span<const TokenId> question, const std::string& image_id,
                     const ImageFeatureStore& store, const ModelParams& params,
                     const ModelConfig& config, Phase phase, Rng& rng);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

std::size_t predict(std::span<const TokenId> question, std::span<const double> image_feature,
                    const ModelParams& params, const ModelConfig& config);

/// Accumulates d(-log p[target]) into `grad`.
void backward(const ForwardTrace& trace, std::size_t target, const ModelParams& params,
              const ModelConfig& config, ModelParams& grad);

/// One encoded supervision sample.
struct Example {
  std::vector<TokenId> question;
  std::span<const double> image;  // empty in LanguageOnly mode
  std::size_t target = 0;
};

struct LossAndGradient {
  double loss = 0;                // mean NLL over the batch
  std::vector<double> gradient;   // mean gradient, flattened layout
};

/// Mean loss and gradient. One seed per sample is drawn from `rng` in batch
/// order, so dropout masks do not depend on the thread count. Per-sample
/// gradients are summed in fixed blocks and then by a pairwise tree whose
/// shape depends only on the batch size.
LossAndGradient loss_and_gradients(std::span<const Example> batch, const ModelParams& params,
                                   const ModelConfig& config, Rng& rng, unsigned threads = 1);

/// Buffers reused across calls to loss_and_gradients_into.
struct GradientWorkspace {
  std::vector<ModelParams> leaves;
  std::vector<std::vector<double>> partial;
  std::vector<double> losses;
  std::vector<std::uint64_t> seeds;
};

/// Same result as loss_and_gradients, bit for bit; the mean gradient is
/// written to `gradient` and the mean loss returned.
double loss_and_gradients_into(std::span<const Example> batch, const ModelParams& params,
                               const ModelConfig& config, Rng& rng, unsigned threads,
                               GradientWorkspace& workspace, std::vector<double>& gradient);

/// Loss without gradients, Eval phase (no dropout).
double mean_loss(std::span<const Example> batch, const ModelParams& params,
                 const ModelConfig& config);

std::vector<std::size_t> predict_batch(std::span<const Example> batch, const ModelParams& params,
                                       const ModelConfig& config, unsigned threads = 1);

// ---- checkpoints --------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::vector<std::string> question_vocab;  // token by index
  std::vector<std::string> answers;         // answer string by class
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Magic, format version, JSON header (config and vocabularies), then the
/// parameter tensors in canonical order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects a checkpoint whose config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace cnnqa
