#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnnqa/data.hpp"
#include "cnnqa/metrics.hpp"
#include "cnnqa/model.hpp"

namespace cnnqa {

struct TrainConfig {
  std::size_t batch_size = 100;
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double lr_decay = 1.0;             // multiplier applied after every epoch
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  std::size_t eval_every = 1;        // epochs between metric evaluations
  unsigned threads = 1;
  std::filesystem::path checkpoint_path;  // empty: no file written
  std::filesystem::path log_path;         // empty: no JSONL log

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// theta - lr * grad
std::vector<double> sgd_step(std::span<const double> params, std::span<const double> grad,
                             double learning_rate);
void sgd_step_in_place(std::span<double> params, std::span<const double> grad,
                       double learning_rate);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0;
  double learning_rate = 0;
  std::optional<double> train_accuracy;
  std::optional<double> eval_accuracy;
  double wall_seconds = 0;
};

nlohmann::json to_json(const EpochLog& log);

/// Encodes triplets against fixed vocabularies. Samples whose answer is not a
/// class are skipped. Images are looked up unless the mode is LanguageOnly.
std::vector<Example> encode_examples(std::span<const Triplet> triplets, const Vocab& vocab,
                                     const AnswerVocab& answers, const ImageFeatureStore* features,
                                     Mode mode);

struct EvalSet {
  std::span<const Triplet> triplets;
  const ImageFeatureStore* features = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Minibatch SGD. Vocabularies come from `train_set`; `model_config`'s
/// vocab_size and answer_count are filled in from them. Epoch order is a
/// shuffle seeded by (seed, epoch) only, so the run is reproducible.
TrainResult train(std::span<const Triplet> train_set, const ImageFeatureStore* features,
                  ModelConfig model_config, const TrainConfig& config,
                  std::optional<EvalSet> eval = std::nullopt,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct Evaluation {
  std::vector<std::string> predictions;
  std::vector<std::string> truths;
  ScoreReport report;
};

Evaluation evaluate(const Checkpoint& checkpoint, std::span<const Triplet> triplets,
                    const ImageFeatureStore* features, const TaxonomyTree* taxonomy = nullptr,
                    unsigned threads = 1, WupsOptions options = {});

std::string predict_answer(const Checkpoint& checkpoint, std::span<const std::string> question,
                           std::span<const double> image_feature);

// ---- gradient check -----------------------------------------------------

/// Small model for finite-difference checks: vocab 12, max_len 23, embedding
/// 4, feature maps 6/6/6, d = 6, F_mm = 6, feature_dim 5, K = 3, no dropout.
ModelConfig tiny_model_config(Mode mode);

struct GradientCheckOptions {
  double step = 1e-5;
  std::size_t samples = 3;
  /// Test hook: corrupts the analytic gradient so the harness must fail.
  bool corrupt_backward = false;
};

struct GradientCheckReport {
  double max_relative_error = 0;
  std::size_t worst_index = 0;
  std::string worst_group;
  std::size_t worst_offset = 0;  // position within the group
  double analytic = 0;
  double numeric = 0;
  std::size_t parameters = 0;

  bool passed(double tolerance = 1e-3) const { return max_relative_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, 1e-6), guarding coordinates whose true gradient
/// is at the level of finite-difference round-off.
double relative_error(double analytic, double numeric);

/// Random parameters and a random batch; compares backprop with central
/// differences on every coordinate. Requires dropout 0.
GradientCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed,
                                   GradientCheckOptions options = {});

}  // namespace cnnqa
