#include "cnnqa/model.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "cnnqa/errors.hpp"

namespace cnnqa {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Full: return "full";
    case Mode::ConcatAblation: return "concat";
    case Mode::LanguageOnly: return "language";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "full") return Mode::Full;
  if (name == "concat") return Mode::ConcatAblation;
  if (name == "language") return Mode::LanguageOnly;
  throw ArgumentError("unknown mode '" + name + "' (expected full, concat or language)");
}

// ---- config -------------------------------------------------------------

SentenceEncoderConfig ModelConfig::sentence_config() const {
  SentenceEncoderConfig s = sentence;
  s.activation = activation;
  return s;
}

void ModelConfig::validate() const {
  sentence.validate();
  if (answer_count < 2) throw ArgumentError("need at least two answer classes");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must lie in [0, 1)");
  if (vocab_size < 2) throw ArgumentError("question vocabulary needs the two reserved tokens");
  if (joint_dim == 0 || fusion_maps == 0 || feature_dim == 0)
    throw ArgumentError("model dimensions must be positive");
  if (mode != Mode::LanguageOnly && sentence.output_dim() != joint_dim)
    throw DimensionError("question segment width " + std::to_string(sentence.output_dim()) +
                         " must equal the joint dimension " + std::to_string(joint_dim));
  if (mode == Mode::Full && sentence.output_positions() < 2)
    throw ArgumentError("multimodal convolution needs at least two question segments; max_len " +
                        std::to_string(sentence.max_len) + " leaves " +
                        std::to_string(sentence.output_positions()));
}

std::size_t ModelConfig::classifier_input_dim() const {
  switch (mode) {
    case Mode::Full: return fusion_maps;
    case Mode::ConcatAblation: return 2 * joint_dim;
    case Mode::LanguageOnly: return sentence.output_dim();
  }
  return 0;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"max_len", c.sentence.max_len},
      {"embed_dim", c.sentence.embed_dim},
      {"feature_maps", c.sentence.feature_maps},
      {"receptive_field", c.sentence.receptive_field},
      {"joint_dim", c.joint_dim},
      {"fusion_maps", c.fusion_maps},
      {"feature_dim", c.feature_dim},
      {"vocab_size", c.vocab_size},
      {"answer_count", c.answer_count},
      {"dropout", c.dropout},
      {"mode", to_string(c.mode)},
      {"activation", to_string(c.activation)},
      {"seed", c.seed},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.sentence.max_len = j.value("max_len", d.sentence.max_len);
  c.sentence.embed_dim = j.value("embed_dim", d.sentence.embed_dim);
  c.sentence.feature_maps = j.value("feature_maps", d.sentence.feature_maps);
  c.sentence.receptive_field = j.value("receptive_field", d.sentence.receptive_field);
  c.joint_dim = j.value("joint_dim", d.joint_dim);
  c.fusion_maps = j.value("fusion_maps", d.fusion_maps);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.answer_count = j.value("answer_count", d.answer_count);
  c.dropout = j.value("dropout", d.dropout);
  c.mode = parse_mode(j.value("mode", to_string(d.mode)));
  c.activation = parse_activation(j.value("activation", to_string(d.activation)));
  c.sentence.activation = c.activation;
  c.seed = j.value("seed", d.seed);
}

// ---- parameters ---------------------------------------------------------

ModelParams ModelParams::zeros_like() const {
  ModelParams g;
  g.sentence = sentence.zeros_like();
  if (image) g.image = image->zeros_like();
  if (fusion) g.fusion = fusion->zeros_like();
  g.classifier = classifier.zeros_like();
  return g;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams p;
  p.sentence = SentenceEncoderParams::init(config.sentence_config(), config.vocab_size, rng);
  if (config.mode != Mode::LanguageOnly)
    p.image = DenseParams::init(config.feature_dim, config.joint_dim, config.activation, rng);
  if (config.mode == Mode::Full)
    p.fusion = MultimodalConvParams::init(config.joint_dim, config.fusion_maps, config.activation,
                                          rng);
  p.classifier = DenseParams::init(config.classifier_input_dim(), config.answer_count,
                                   Activation::Identity, rng);
  return p;
}

namespace {

struct TensorSlot {
  std::string name;
  Tensor* tensor;
  std::size_t skip_rows;  // leading rows that are constants, not parameters
};

std::vector<TensorSlot> tensor_slots(ModelParams& p) {
  std::vector<TensorSlot> slots{{"embeddings", &p.sentence.embeddings.vectors, 1}};
  for (std::size_t i = 0; i < kSentenceStages; ++i) {
    const std::string prefix = "conv" + std::to_string(i + 1);
    slots.push_back({prefix + ".weights", &p.sentence.stages[i].weights, 0});
    slots.push_back({prefix + ".biases", &p.sentence.stages[i].biases, 0});
  }
  if (p.image) {
    slots.push_back({"image.weights", &p.image->weights, 0});
    slots.push_back({"image.bias", &p.image->bias, 0});
  }
  if (p.fusion) {
    slots.push_back({"multimodal.weights", &p.fusion->weights, 0});
    slots.push_back({"multimodal.biases", &p.fusion->biases, 0});
  }
  slots.push_back({"classifier.weights", &p.classifier.weights, 0});
  slots.push_back({"classifier.bias", &p.classifier.bias, 0});
  return slots;
}

std::vector<TensorSlot> tensor_slots(const ModelParams& p) {
  return tensor_slots(const_cast<ModelParams&>(p));
}

/// Zero-valued parameters with the shapes implied by `config`.
ModelParams shaped_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  const auto s = config.sentence_config();
  p.sentence.embeddings.vectors = Tensor::zeros(config.vocab_size, s.embed_dim);
  std::size_t in_dim = s.embed_dim;
  for (std::size_t i = 0; i < kSentenceStages; ++i) {
    p.sentence.stages[i] = {Tensor::zeros(s.feature_maps[i], s.receptive_field * in_dim),
                            Tensor({s.feature_maps[i]}), s.receptive_field, s.activation};
    in_dim = s.feature_maps[i];
  }
  if (config.mode != Mode::LanguageOnly)
    p.image = DenseParams{Tensor::zeros(config.joint_dim, config.feature_dim),
                          Tensor({config.joint_dim}), config.activation};
  if (config.mode == Mode::Full)
    p.fusion = MultimodalConvParams{Tensor::zeros(config.fusion_maps, 3 * config.joint_dim),
                                    Tensor({config.fusion_maps}), config.activation};
  p.classifier = DenseParams{Tensor::zeros(config.answer_count, config.classifier_input_dim()),
                             Tensor({config.answer_count}), Activation::Identity};
  return p;
}

}  // namespace

std::vector<ParamGroup> parameter_layout(const ModelConfig& config) {
  ModelParams shaped = shaped_params(config);
  std::vector<ParamGroup> groups;
  std::size_t offset = 0;
  for (const auto& slot : tensor_slots(shaped)) {
    const std::size_t n = slot.tensor->size() - slot.skip_rows * slot.tensor->cols();
    groups.push_back({slot.name, offset, n});
    offset += n;
  }
  return groups;
}

std::size_t parameter_count(const ModelConfig& config) {
  const auto layout = parameter_layout(config);
  return layout.back().offset + layout.back().size;
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> out;
  for (const auto& slot : tensor_slots(params)) {
    auto v = slot.tensor->values().subspan(slot.skip_rows * slot.tensor->cols());
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void add_scaled(ModelParams& params, double alpha, std::span<const double> values) {
  std::size_t offset = 0;
  auto slots = tensor_slots(params);
  for (auto& slot : slots) offset += slot.tensor->size() - slot.skip_rows * slot.tensor->cols();
  if (offset != values.size())
    throw DimensionError("add_scaled: expected " + std::to_string(offset) + " values, got " +
                         std::to_string(values.size()));
  offset = 0;
  for (auto& slot : slots) {
    auto dst = slot.tensor->values().subspan(slot.skip_rows * slot.tensor->cols());
    axpy(alpha, values.subspan(offset, dst.size()), dst);
    offset += dst.size();
  }
}

ModelParams unflatten(std::span<const double> values, const ModelConfig& config) {
  ModelParams p = shaped_params(config);
  std::size_t offset = 0;
  for (auto& slot : tensor_slots(p)) {
    auto dst = slot.tensor->values().subspan(slot.skip_rows * slot.tensor->cols());
    if (offset + dst.size() > values.size())
      throw DimensionError("unflatten: " + std::to_string(values.size()) +
                           " values are too few for the configured model");
    std::copy_n(values.begin() + offset, dst.size(), dst.begin());
    offset += dst.size();
  }
  if (offset != values.size())
    throw DimensionError("unflatten: expected " + std::to_string(offset) + " values, got " +
                         std::to_string(values.size()));
  return p;
}

// ---- forward / backward -------------------------------------------------

ForwardTrace forward(std::span<const TokenId> question, std::span<const double> image_feature,
                     const ModelParams& params, const ModelConfig& config, Phase phase, Rng& rng) {
  ForwardTrace t;
  t.sentence = encode_question_traced(question, params.sentence, config.sentence_config());
  const QuestionRepresentation q{t.sentence.output()};
  if (config.mode != Mode::LanguageOnly) {
    if (image_feature.size() != config.feature_dim)
      throw DimensionError("image feature of length " + std::to_string(image_feature.size()) +
                           ", expected " + std::to_string(config.feature_dim));
    t.image_feature.assign(image_feature.begin(), image_feature.end());
    t.image_mapped = map_image(image_feature, *params.image);
  }
  switch (config.mode) {
    case Mode::Full:
      t.fused = fuse_traced(q, t.image_mapped, *params.fusion);
      t.joint = t.fused.result();
      break;
    case Mode::ConcatAblation:
      t.concatenated = fuse_concat_ablation_traced(q, t.image_mapped);
      t.joint = t.concatenated.output;
      break;
    case Mode::LanguageOnly: {
      t.pooled_question = max_over_positions(q.positions);
      auto row = t.pooled_question.output.row(0);
      t.joint = Tensor::vector({row.begin(), row.end()});
      break;
    }
  }
  t.dropped = dropout(t.joint, config.dropout, phase, rng);
  t.logits = dense(t.dropped.output, params.classifier);
  t.probs = softmax(t.logits);
  return t;
}

ForwardTrace forward(std::span<const TokenId> question, const std::string& image_id,
                     const ImageFeatureStore& store, const ModelParams& params,
                     const ModelConfig& config, Phase phase, Rng& rng) {
  std::span<const double> feature;
  if (config.mode != Mode::LanguageOnly) feature = store.at(image_id);
  return forward(question, feature, params, config, phase, rng);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::size_t predict(std::span<const TokenId> question, std::span<const double> image_feature,
                    const ModelParams& params, const ModelConfig& config) {
  Rng unused(0);
  return argmax(forward(question, image_feature, params, config, Phase::Eval, unused).probs.values());
}

void backward(const ForwardTrace& trace, std::size_t target, const ModelParams& params,
              const ModelConfig& config, ModelParams& grad) {
  if (target >= config.answer_count)
    throw ArgumentError("target class " + std::to_string(target) + " outside " +
                        std::to_string(config.answer_count) + " answers");
  Tensor g_logits = softmax_nll_backward(trace.probs, target);
  Tensor g_dropped = dense_backward(trace.dropped.output, trace.logits, g_logits,
                                    params.classifier, grad.classifier);
  Tensor g_joint = dropout_backward(g_dropped, trace.dropped.mask);
  const std::size_t positions = trace.sentence.output().rows();
  Tensor g_question;
  switch (config.mode) {
    case Mode::Full: {
      FuseGrad fg = fuse_backward(trace.fused, g_joint, *params.fusion, *grad.fusion);
      map_image_backward(trace.image_feature, trace.image_mapped, fg.image, *params.image,
                         *grad.image);
      g_question = std::move(fg.question);
      break;
    }
    case Mode::ConcatAblation: {
      FuseGrad cg = fuse_concat_ablation_backward(trace.concatenated, g_joint, positions);
      map_image_backward(trace.image_feature, trace.image_mapped, cg.image, *params.image,
                         *grad.image);
      g_question = std::move(cg.question);
      break;
    }
    case Mode::LanguageOnly:
      g_question = maxpool_backward(Tensor::matrix(1, g_joint.size(), g_joint.storage()),
                                    trace.pooled_question.source, positions);
      break;
  }
  encode_question_backward(trace.sentence, g_question, params.sentence, grad.sentence);
}

namespace {

constexpr std::size_t kLeafSize = 8;

template <typename Fn>
void run_parallel(std::size_t jobs, unsigned threads, Fn&& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs)));
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs; ++j) fn(j);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs;) {
          try {
            fn(j);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

namespace {

bool same_shapes(const ModelParams& a, const ModelParams& b) {
  const auto sa = tensor_slots(a), sb = tensor_slots(b);
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (sa[i].tensor->shape() != sb[i].tensor->shape()) return false;
  return true;
}

void flatten_into(const ModelParams& params, std::vector<double>& out) {
  out.clear();
  for (const auto& slot : tensor_slots(params)) {
    auto v = slot.tensor->values().subspan(slot.skip_rows * slot.tensor->cols());
    out.insert(out.end(), v.begin(), v.end());
  }
}

}  // namespace

double loss_and_gradients_into(std::span<const Example> batch, const ModelParams& params,
                               const ModelConfig& config, Rng& rng, unsigned threads,
                               GradientWorkspace& ws, std::vector<double>& gradient) {
  if (batch.empty()) throw ArgumentError("loss_and_gradients: empty batch");
  for (const auto& ex : batch)
    if (ex.target >= config.answer_count)
      throw ArgumentError("target class " + std::to_string(ex.target) + " outside " +
                          std::to_string(config.answer_count) + " answers");
  ws.seeds.resize(batch.size());
  for (auto& s : ws.seeds) s = rng.next_u64();

  const std::size_t leaves = (batch.size() + kLeafSize - 1) / kLeafSize;
  ws.losses.assign(batch.size(), 0.0);
  if (ws.leaves.size() > leaves) ws.leaves.resize(leaves);
  for (auto& g : ws.leaves)
    if (!same_shapes(g, params)) g = params.zeros_like();
  while (ws.leaves.size() < leaves) ws.leaves.push_back(params.zeros_like());
  ws.partial.resize(leaves);

  run_parallel(leaves, threads, [&](std::size_t leaf) {
    ModelParams& grad = ws.leaves[leaf];
    for (auto& slot : tensor_slots(grad)) slot.tensor->fill(0.0);
    const std::size_t end = std::min(batch.size(), (leaf + 1) * kLeafSize);
    for (std::size_t i = leaf * kLeafSize; i < end; ++i) {
      Rng sample_rng(ws.seeds[i]);
      auto trace = forward(batch[i].question, batch[i].image, params, config, Phase::Train,
                           sample_rng);
      ws.losses[i] = -std::log(trace.probs[batch[i].target]);
      backward(trace, batch[i].target, params, config, grad);
    }
    flatten_into(grad, ws.partial[leaf]);
  });

  for (std::size_t step = 1; step < leaves; step *= 2)
    for (std::size_t i = 0; i + step < leaves; i += 2 * step)
      axpy(1.0, ws.partial[i + step], ws.partial[i]);

  const double scale = 1.0 / static_cast<double>(batch.size());
  gradient.resize(ws.partial[0].size());
  for (std::size_t i = 0; i < gradient.size(); ++i) gradient[i] = ws.partial[0][i] * scale;
  double loss = 0;
  for (double l : ws.losses) loss += l;
  return loss * scale;
}

LossAndGradient loss_and_gradients(std::span<const Example> batch, const ModelParams& params,
                                   const ModelConfig& config, Rng& rng, unsigned threads) {
  GradientWorkspace ws;
  LossAndGradient r;
  r.loss = loss_and_gradients_into(batch, params, config, rng, threads, ws, r.gradient);
  return r;
}

double mean_loss(std::span<const Example> batch, const ModelParams& params,
                 const ModelConfig& config) {
  if (batch.empty()) throw ArgumentError("mean_loss: empty batch");
  Rng unused(0);
  double total = 0;
  for (const auto& ex : batch) {
    auto trace = forward(ex.question, ex.image, params, config, Phase::Eval, unused);
    total += softmax_nll(trace.logits, ex.target).loss;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<std::size_t> predict_batch(std::span<const Example> batch, const ModelParams& params,
                                       const ModelConfig& config, unsigned threads) {
  std::vector<std::size_t> out(batch.size());
  run_parallel(batch.size(), threads, [&](std::size_t i) {
    out[i] = predict(batch[i].question, batch[i].image, params, config);
  });
  return out;
}

// ---- checkpoints --------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'N', 'N', 'Q', 'A', 'C', 'K', 'P'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"config", ckpt.config},
                        {"question_vocab", ckpt.question_vocab},
                        {"answers", ckpt.answers}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto slots = tensor_slots(ckpt.params);
  write_u32(out, static_cast<std::uint32_t>(slots.size()));
  for (const auto& slot : slots) write_tensor(out, *slot.tensor);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw ParseError("not a checkpoint file: " + path.string());
  const auto version = read_u32(in);
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  std::string text(read_u64(in), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size())))
    throw IoError("truncated checkpoint header in " + path.string());
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.question_vocab = header.at("question_vocab").get<std::vector<std::string>>();
    ckpt.answers = header.at("answers").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what());
  }
  ckpt.config.validate();
  ckpt.params = shaped_params(ckpt.config);
  auto slots = tensor_slots(ckpt.params);
  const auto count = read_u32(in);
  if (count != slots.size())
    throw DimensionError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                         std::to_string(slots.size()));
  for (auto& slot : slots) {
    Tensor t = read_tensor(in);
    if (t.shape() != slot.tensor->shape())
      throw DimensionError("checkpoint tensor " + slot.name + " has shape " + t.shape_string() +
                           ", config needs " + slot.tensor->shape_string());
    *slot.tensor = std::move(t);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (nlohmann::json(ckpt.config) != nlohmann::json(expected))
    throw ArgumentError("checkpoint config does not match the requested model config: " +
                        nlohmann::json(ckpt.config).dump() + " vs " +
                        nlohmann::json(expected).dump());
  return ckpt;
}

}  // namespace cnnqa
