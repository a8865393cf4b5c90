#include "cnnqa/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cnnqa/errors.hpp"

namespace cnnqa {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ArgumentError("batch size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ArgumentError("learning rate must be a finite non-negative number");
  if (!(lr_decay > 0.0)) throw ArgumentError("lr_decay must be positive");
  if (eval_every == 0) throw ArgumentError("eval_every must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"train_seed", c.seed},
                     {"lr_decay", c.lr_decay},
                     {"checkpoint_every", c.checkpoint_every},
                     {"eval_every", c.eval_every},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("train_seed", d.seed);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.threads = j.value("threads", d.threads);
}

std::vector<double> sgd_step(std::span<const double> params, std::span<const double> grad,
                             double learning_rate) {
  std::vector<double> out(params.begin(), params.end());
  sgd_step_in_place(out, grad, learning_rate);
  return out;
}

void sgd_step_in_place(std::span<double> params, std::span<const double> grad,
                       double learning_rate) {
  if (params.size() != grad.size())
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters vs " +
                         std::to_string(grad.size()) + " gradient entries");
  axpy(-learning_rate, grad, params);
}

nlohmann::json to_json(const EpochLog& log) {
  nlohmann::json j{{"epoch", log.epoch},
                   {"mean_loss", log.mean_loss},
                   {"learning_rate", log.learning_rate},
                   {"wall_time", log.wall_seconds}};
  if (log.train_accuracy) j["train_accuracy"] = *log.train_accuracy;
  if (log.eval_accuracy) j["eval_accuracy"] = *log.eval_accuracy;
  return j;
}

std::vector<Example> encode_examples(std::span<const Triplet> triplets, const Vocab& vocab,
                                     const AnswerVocab& answers, const ImageFeatureStore* features,
                                     Mode mode) {
  if (mode != Mode::LanguageOnly && !features)
    throw ArgumentError("image features are required in " + to_string(mode) + " mode");
  std::vector<Example> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    auto target = answers.find(t.answer);
    if (!target) continue;
    Example ex{vocab.encode(t.question), {}, *target};
    if (mode != Mode::LanguageOnly) ex.image = features->at(t.image_id);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

constexpr std::uint64_t kDropoutStream = 0x64726f706f7574ULL;

/// Like encode_examples but keeps every triplet; unknown answers get a
/// placeholder target that can never be predicted correctly.
std::vector<Example> encode_for_eval(std::span<const Triplet> triplets, const Vocab& vocab,
                                     const AnswerVocab& answers, const ImageFeatureStore* features,
                                     Mode mode, std::vector<bool>* known) {
  if (mode != Mode::LanguageOnly && !features)
    throw ArgumentError("image features are required in " + to_string(mode) + " mode");
  std::vector<Example> out;
  for (const auto& t : triplets) {
    auto target = answers.find(t.answer);
    if (known) known->push_back(target.has_value());
    Example ex{vocab.encode(t.question), {}, target.value_or(0)};
    if (mode != Mode::LanguageOnly) ex.image = features->at(t.image_id);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TrainResult train(std::span<const Triplet> train_set, const ImageFeatureStore* features,
                  ModelConfig model_config, const TrainConfig& config,
                  std::optional<EvalSet> eval,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ArgumentError("training set is empty");
  auto vocabs = build_vocabs(train_set);
  model_config.vocab_size = vocabs.questions.size();
  model_config.answer_count = vocabs.answers.size();
  if (model_config.mode != Mode::LanguageOnly && features &&
      features->feature_dim() != model_config.feature_dim)
    throw DimensionError("feature file has dimension " + std::to_string(features->feature_dim()) +
                         ", model expects " + std::to_string(model_config.feature_dim));
  model_config.validate();

  const auto examples =
      encode_examples(train_set, vocabs.questions, vocabs.answers, features, model_config.mode);
  std::vector<Example> eval_examples;
  std::vector<bool> eval_known;
  if (eval)
    eval_examples = encode_for_eval(eval->triplets, vocabs.questions, vocabs.answers,
                                    eval->features, model_config.mode, &eval_known);

  TrainResult result;
  result.checkpoint = {model_config, init_params(model_config), vocabs.questions.tokens(),
                       vocabs.answers.answers()};

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    if (!log_file) throw IoError("cannot write training log " + config.log_path.string());
  }

  double lr = config.learning_rate;
  std::vector<std::size_t> order(examples.size());
  std::vector<Example> batch;
  GradientWorkspace workspace;
  std::vector<double> gradient;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(config.seed, epoch));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(mix_seed(config.seed ^ kDropoutStream, epoch));

    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      const double loss = loss_and_gradients_into(batch, result.checkpoint.params, model_config,
                                                  dropout_rng, config.threads, workspace, gradient);
      loss_sum += loss * static_cast<double>(batch.size());
      add_scaled(result.checkpoint.params, -lr, gradient);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(examples.size());
    entry.learning_rate = lr;
    if (eval && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      const auto predicted =
          predict_batch(eval_examples, result.checkpoint.params, model_config, config.threads);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < predicted.size(); ++i)
        if (eval_known[i] && predicted[i] == eval_examples[i].target) ++hits;
      entry.eval_accuracy =
          eval_examples.empty() ? 0.0 : static_cast<double>(hits) / eval_examples.size();
    }
    entry.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(entry);
    if (log_file) log_file << to_json(entry).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(entry);

    if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 &&
        epoch % config.checkpoint_every == 0)
      save_checkpoint(config.checkpoint_path, result.checkpoint);
    lr *= config.lr_decay;
  }
  if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, result.checkpoint);
  return result;
}

Evaluation evaluate(const Checkpoint& checkpoint, std::span<const Triplet> triplets,
                    const ImageFeatureStore* features, const TaxonomyTree* taxonomy,
                    unsigned threads, WupsOptions options) {
  const auto vocab = Vocab::from_tokens(checkpoint.question_vocab);
  const auto answers = AnswerVocab::from_answers(checkpoint.answers);
  const auto examples =
      encode_for_eval(triplets, vocab, answers, features, checkpoint.config.mode, nullptr);
  const auto predicted = predict_batch(examples, checkpoint.params, checkpoint.config, threads);
  Evaluation ev;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    ev.predictions.push_back(answers.answer(predicted[i]));
    ev.truths.push_back(triplets[i].answer);
  }
  ev.report = score(ev.predictions, ev.truths, taxonomy, options);
  return ev;
}

std::string predict_answer(const Checkpoint& checkpoint, std::span<const std::string> question,
                           std::span<const double> image_feature) {
  const auto vocab = Vocab::from_tokens(checkpoint.question_vocab);
  const auto ids = vocab.encode(question);
  return checkpoint.answers.at(predict(ids, image_feature, checkpoint.params, checkpoint.config));
}

// ---- gradient check -----------------------------------------------------

ModelConfig tiny_model_config(Mode mode) {
  ModelConfig c;
  c.sentence.max_len = 23;
  c.sentence.embed_dim = 4;
  c.sentence.feature_maps = {6, 6, 6};
  c.joint_dim = 6;
  c.fusion_maps = 6;
  c.feature_dim = 5;
  c.vocab_size = 12;
  c.answer_count = 3;
  c.dropout = 0.0;
  c.mode = mode;
  return c;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

GradientCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed,
                                   GradientCheckOptions options) {
  config.validate();
  if (config.dropout != 0.0) throw ArgumentError("gradient_check needs dropout 0");
  if (options.samples == 0) throw ArgumentError("gradient_check needs at least one sample");

  ModelConfig cfg = config;
  cfg.seed = seed;
  Rng rng(mix_seed(seed, 17));
  std::vector<double> theta = flatten(init_params(cfg));
  for (auto& v : theta) v = rng.uniform(-0.5, 0.5);
  const ModelParams params = unflatten(theta, cfg);

  std::vector<std::vector<double>> images(options.samples);
  std::vector<Example> batch;
  GradientWorkspace workspace;
  std::vector<double> gradient;
  for (std::size_t s = 0; s < options.samples; ++s) {
    Example ex;
    const std::size_t len = 1 + rng.index(cfg.sentence.max_len);
    for (std::size_t i = 0; i < len; ++i)
      ex.question.push_back(static_cast<TokenId>(1 + rng.index(cfg.vocab_size - 1)));
    images[s].resize(cfg.feature_dim);
    for (auto& v : images[s]) v = rng.uniform(-1.0, 1.0);
    if (cfg.mode != Mode::LanguageOnly) ex.image = images[s];
    ex.target = rng.index(cfg.answer_count);
    batch.push_back(std::move(ex));
  }

  Rng unused(0);
  auto analytic = loss_and_gradients(batch, params, cfg, unused).gradient;
  if (options.corrupt_backward)
    for (auto& g : analytic) g *= 1.01;
  const auto numeric = finite_difference_gradient(
      [&](std::span<const double> x) { return mean_loss(batch, unflatten(x, cfg), cfg); }, theta,
      options.step);

  GradientCheckReport report;
  report.parameters = theta.size();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double err = relative_error(analytic[i], numeric[i]);
    if (i == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.analytic = analytic[i];
      report.numeric = numeric[i];
    }
  }
  for (const auto& group : parameter_layout(cfg))
    if (report.worst_index >= group.offset && report.worst_index < group.offset + group.size) {
      report.worst_group = group.name;
      report.worst_offset = report.worst_index - group.offset;
    }
  return report;
}

}  // namespace cnnqa
