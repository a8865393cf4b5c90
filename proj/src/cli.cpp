#include "cnnqa/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cnnqa/data.hpp"
#include "cnnqa/errors.hpp"
#include "cnnqa/metrics.hpp"
#include "cnnqa/model.hpp"
#include "cnnqa/trainer.hpp"

namespace cnnqa {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Bad flags or configuration; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- configuration ------------------------------------------------------

/// Collects the flags that were given on the command line as JSON overrides.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key,
                   const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    setters_.push_back([opt, value, key](json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
    return opt;
  }

  json collect() const {
    json j = json::object();
    for (const auto& set : setters_) set(j);
    return j;
  }

 private:
  std::vector<std::function<void(json&)>> setters_;
};

json read_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  return j;
}

/// defaults <- file <- flags; unknown keys are rejected.
json merge_config(json defaults, const json& file, const json& flags) {
  for (const json* layer : {&file, &flags})
    for (const auto& [key, value] : layer->items()) {
      if (!defaults.contains(key)) throw UsageError("unknown config key '" + key + "'");
      defaults[key] = value;
    }
  return defaults;
}

template <class Fn>
auto resolving(Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

ImageFeatureStore load_feature_file(const std::string& path) {
  if (fs::path(path).extension() == ".bin") return load_features_binary(path);
  return load_features(path);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// ---- synth --------------------------------------------------------------

struct SynthArgs {
  Overrides overrides;
  std::string config;
  std::string out;
};

void setup_synth(CLI::App* cmd, SynthArgs& a) {
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--config", a.config, "JSON config file");
  a.overrides.add<std::size_t>(cmd, "--samples", "samples", "Training samples (default 1000)");
  a.overrides.add<std::size_t>(cmd, "--test-samples", "test_samples",
                               "Extra held-out samples from the same world (default 0)");
  a.overrides.add<std::uint64_t>(cmd, "--seed", "seed", "Generator seed (default 7)");
  a.overrides.add<std::size_t>(cmd, "--objects", "objects", "Object types (default 3)");
  a.overrides.add<std::size_t>(cmd, "--colors", "colors", "Colors (default 2)");
  a.overrides.add<std::size_t>(cmd, "--max-objects", "max_objects",
                               "Objects per scene, at most (default 3)");
  a.overrides.add<std::size_t>(cmd, "--feature-dim", "feature_dim", "Feature length (default 64)");
  a.overrides.add<double>(cmd, "--noise", "noise", "Uniform noise magnitude (default 0.05)");
}

int run_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticSpec d;
  json defaults{{"samples", d.samples},     {"test_samples", 0},
                {"seed", d.seed},           {"objects", d.object_types},
                {"colors", d.colors},       {"max_objects", d.max_objects},
                {"feature_dim", d.feature_dim}, {"noise", d.noise}};
  const json resolved = merge_config(defaults, read_config_file(a.config), a.overrides.collect());
  const SyntheticSpec spec = resolving([&] {
    SyntheticSpec s;
    s.samples = resolved.at("samples").get<std::size_t>() +
                resolved.at("test_samples").get<std::size_t>();
    s.seed = resolved.at("seed");
    s.object_types = resolved.at("objects");
    s.colors = resolved.at("colors");
    s.max_objects = resolved.at("max_objects");
    s.feature_dim = resolved.at("feature_dim");
    s.noise = resolved.at("noise");
    s.validate();
    return s;
  });
  const std::size_t train_count = resolved.at("samples");

  const auto ds = generate_synthetic(spec);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_triplets(dir / "triplets.tsv", ds.triplets);
  save_features(dir / "features.tsv", ds.features);
  write_json(dir / "scenes.json", scenes_to_json(SyntheticWorld(spec), ds.scenes));
  write_json(dir / "synth_config.json", resolved);
  std::span<const Triplet> all(ds.triplets);
  if (train_count < all.size()) {
    save_triplets(dir / "train.tsv", all.first(train_count));
    save_triplets(dir / "test.tsv", all.subspan(train_count));
  }
  out << "wrote " << ds.triplets.size() << " triplets";
  if (train_count < all.size())
    out << " (" << train_count << " train, " << all.size() - train_count << " test)";
  out << ", " << ds.features.size() << " feature vectors of length " << spec.feature_dim
      << ", " << build_vocabs(all).answers.size() << " answer classes to " << dir.string()
      << '\n';
  return kExitOk;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  Overrides overrides;
  std::string config, train, features, eval, eval_features, out;
};

void setup_train(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--train", a.train, "Training triplets (TSV)")->required();
  cmd->add_option("--features", a.features, "Image features (.tsv or .bin)");
  cmd->add_option("--eval", a.eval, "Held-out triplets scored after each eval interval");
  cmd->add_option("--eval-features", a.eval_features,
                  "Features for --eval (default: --features)");
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--config", a.config, "JSON config file");
  auto& o = a.overrides;
  o.add<std::string>(cmd, "--mode", "mode", "full | concat | language");
  o.add<std::size_t>(cmd, "--max-len", "max_len", "Padded question length");
  o.add<std::size_t>(cmd, "--embed-dim", "embed_dim", "Word embedding size");
  o.add<std::vector<std::size_t>>(cmd, "--feature-maps", "feature_maps",
                                  "Feature maps of the three sentence stages")
      ->expected(3);
  o.add<std::size_t>(cmd, "--receptive-field", "receptive_field", "Sentence conv width");
  o.add<std::size_t>(cmd, "--joint-dim", "joint_dim", "Image mapping size d");
  o.add<std::size_t>(cmd, "--fusion-maps", "fusion_maps", "Multimodal feature maps");
  o.add<std::size_t>(cmd, "--feature-dim", "feature_dim",
                     "Image feature length (default: taken from --features)");
  o.add<double>(cmd, "--dropout", "dropout", "Dropout probability");
  o.add<std::string>(cmd, "--activation", "activation", "relu | sigmoid | identity");
  o.add<std::uint64_t>(cmd, "--model-seed", "seed", "Parameter initialization seed");
  o.add<std::size_t>(cmd, "--batch-size", "batch_size", "Minibatch size");
  o.add<double>(cmd, "--lr", "learning_rate", "Learning rate");
  o.add<std::size_t>(cmd, "--epochs", "epochs", "Epochs");
  o.add<std::uint64_t>(cmd, "--seed", "train_seed", "Shuffle and dropout seed");
  o.add<double>(cmd, "--lr-decay", "lr_decay", "Learning-rate factor per epoch");
  o.add<std::size_t>(cmd, "--checkpoint-every", "checkpoint_every",
                     "Epochs between checkpoints (0: final only)");
  o.add<std::size_t>(cmd, "--eval-every", "eval_every", "Epochs between --eval scores");
  o.add<unsigned>(cmd, "--threads", "threads", "Worker threads");
}

int run_train(const TrainArgs& a, std::ostream& out) {
  json defaults = ModelConfig{};
  defaults.update(json(TrainConfig{}));
  const json file = read_config_file(a.config);
  const json flags = a.overrides.collect();
  json resolved = merge_config(defaults, file, flags);
  auto [model, tc] = resolving([&] {
    ModelConfig m = resolved.get<ModelConfig>();
    TrainConfig t = resolved.get<TrainConfig>();
    t.validate();
    return std::pair{m, t};
  });
  if (model.mode != Mode::LanguageOnly && a.features.empty())
    throw UsageError("--features is required unless --mode language");

  const auto train_set = load_triplets(a.train);
  std::optional<ImageFeatureStore> features, eval_features;
  if (!a.features.empty() && model.mode != Mode::LanguageOnly) {
    features = load_feature_file(a.features);
    if (!file.contains("feature_dim") && !flags.contains("feature_dim"))
      model.feature_dim = features->feature_dim();
  }
  std::vector<Triplet> eval_set;
  std::optional<EvalSet> eval;
  if (!a.eval.empty()) {
    eval_set = load_triplets(a.eval);
    if (!a.eval_features.empty() && model.mode != Mode::LanguageOnly)
      eval_features = load_feature_file(a.eval_features);
    eval = EvalSet{eval_set, eval_features ? &*eval_features : (features ? &*features : nullptr)};
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  tc.checkpoint_path = dir / "checkpoint.bin";
  tc.log_path = dir / "train_log.jsonl";

  const auto started = std::chrono::steady_clock::now();
  auto result = train(train_set, features ? &*features : nullptr, model, tc, eval,
                      [&](const EpochLog& e) {
                        out << "epoch " << e.epoch << '/' << tc.epochs << "  loss "
                            << fixed(e.mean_loss, 6);
                        if (e.eval_accuracy) out << "  eval_accuracy " << fixed(*e.eval_accuracy, 4);
                        out << '\n' << std::flush;
                      });

  json run = result.checkpoint.config;
  run.update(json(tc));
  run["paths"] = {{"train", a.train},
                  {"features", a.features},
                  {"eval", a.eval},
                  {"checkpoint", tc.checkpoint_path.string()},
                  {"log", tc.log_path.string()}};
  write_json(dir / "run_config.json", run);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  out << "trained " << result.checkpoint.config.answer_count << "-class "
      << to_string(result.checkpoint.config.mode) << " model on " << train_set.size()
      << " triplets in " << fixed(seconds, 1) << " s; checkpoint " << tc.checkpoint_path.string()
      << '\n';
  return kExitOk;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, test, features, taxonomy, predictions;
  std::optional<std::uint64_t> shuffle_seed;
  bool strict = false;
  unsigned threads = 1;
};

void setup_eval(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--test", a.test, "Triplets to score (TSV)")->required();
  cmd->add_option("--features", a.features, "Image features (.tsv or .bin)");
  cmd->add_option("--taxonomy", a.taxonomy, "child<TAB>parent file; enables WUPS");
  cmd->add_option("--shuffle-questions", a.shuffle_seed,
                  "Permute each question's words with this seed before scoring");
  cmd->add_flag("--strict-wups", a.strict, "Fail on answers missing from the taxonomy");
  cmd->add_option("--predictions", a.predictions, "Also write per-sample predictions (TSV)");
  cmd->add_option("--threads", a.threads, "Worker threads");
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.config.mode != Mode::LanguageOnly && a.features.empty())
    throw UsageError("--features is required for a " + to_string(ckpt.config.mode) + " model");
  auto test = load_triplets(a.test);
  if (a.shuffle_seed) test = shuffle_question_words(test, *a.shuffle_seed);
  std::optional<ImageFeatureStore> features;
  if (ckpt.config.mode != Mode::LanguageOnly) features = load_feature_file(a.features);
  std::optional<TaxonomyTree> taxonomy;
  if (!a.taxonomy.empty()) taxonomy = load_taxonomy(a.taxonomy);

  const auto ev = evaluate(ckpt, test, features ? &*features : nullptr,
                           taxonomy ? &*taxonomy : nullptr, a.threads, {a.strict});
  if (!a.predictions.empty()) {
    std::ofstream pred(a.predictions);
    for (std::size_t i = 0; i < test.size(); ++i) {
      std::string q;
      for (const auto& w : test[i].question) q += (q.empty() ? "" : " ") + w;
      pred << test[i].image_id << '\t' << q << '\t' << ev.predictions[i] << '\t' << ev.truths[i]
           << '\n';
    }
    if (!pred) throw IoError("cannot write " + a.predictions);
  }
  out << to_json(ev.report).dump(2) << '\n';
  return kExitOk;
}

// ---- predict ------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint, question, image, features;
};

void setup_predict(CLI::App* cmd, PredictArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--question", a.question, "Question text")->required();
  cmd->add_option("--image", a.image, "Image id in --features");
  cmd->add_option("--features", a.features, "Image features (.tsv or .bin)");
}

int run_predict(const PredictArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto words = tokenize(a.question);
  if (words.empty()) throw UsageError("--question has no words");
  std::vector<double> image;
  if (ckpt.config.mode != Mode::LanguageOnly) {
    if (a.features.empty() || a.image.empty())
      throw UsageError("--image and --features are required for a " +
                       to_string(ckpt.config.mode) + " model");
    const auto store = load_feature_file(a.features);
    const auto row = store.at(a.image);
    image.assign(row.begin(), row.end());
  }
  out << predict_answer(ckpt, words, image) << '\n';
  return kExitOk;
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
  std::vector<std::string> modes;
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  double step = 1e-5;
  double tolerance = 1e-3;
  bool corrupt = false;
};

void setup_gradcheck(CLI::App* cmd, GradcheckArgs& a) {
  cmd->add_option("--mode", a.modes, "Modes to check (default: all three)");
  cmd->add_option("--seeds", a.seeds, "Random instances per mode");
  cmd->add_option("--first-seed", a.first_seed, "Seed of the first instance");
  cmd->add_option("--step", a.step, "Central-difference step");
  cmd->add_option("--tolerance", a.tolerance, "Largest accepted relative error");
  cmd->add_flag("--corrupt-backward", a.corrupt, "")->group("");
}

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<Mode> modes;
  resolving([&] {
    for (const auto& m : a.modes) modes.push_back(parse_mode(m));
    if (modes.empty()) modes = {Mode::Full, Mode::ConcatAblation, Mode::LanguageOnly};
    if (a.seeds == 0) throw ArgumentError("--seeds must be positive");
    return 0;
  });
  bool all_passed = true;
  for (Mode mode : modes) {
    GradientCheckReport worst;
    std::uint64_t worst_seed = a.first_seed;
    for (std::size_t i = 0; i < a.seeds; ++i) {
      const std::uint64_t seed = a.first_seed + i;
      const auto r =
          gradient_check(tiny_model_config(mode), seed, {a.step, 3, a.corrupt});
      if (i == 0 || r.max_relative_error > worst.max_relative_error) {
        worst = r;
        worst_seed = seed;
      }
    }
    const bool passed = worst.passed(a.tolerance);
    all_passed = all_passed && passed;
    std::ostringstream err;
    err << std::setprecision(3) << worst.max_relative_error;
    out << (passed ? "PASS " : "FAIL ") << to_string(mode) << ": max relative error "
        << err.str() << " over " << a.seeds << " seeds; worst " << worst.worst_group << '['
        << worst.worst_offset << "] at seed " << worst_seed << " (analytic "
        << worst.analytic << ", numeric " << worst.numeric << ")\n";
  }
  return all_passed ? kExitOk : kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional image question answering: data, training and evaluation",
               "cnnqa"};
  app.require_subcommand(1);

  SynthArgs synth;
  TrainArgs train_args;
  EvalArgs eval;
  PredictArgs predict;
  GradcheckArgs gradcheck;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene question dataset");
  auto* train_cmd = app.add_subcommand("train", "Train a model with minibatch SGD");
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint; prints a JSON report");
  auto* predict_cmd = app.add_subcommand("predict", "Answer a single question");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare backprop with finite differences");
  setup_synth(synth_cmd, synth);
  setup_train(train_cmd, train_args);
  setup_eval(eval_cmd, eval);
  setup_predict(predict_cmd, predict);
  setup_gradcheck(grad_cmd, gradcheck);

  std::vector<std::string> argv_storage{"cnnqa"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, out);
    if (train_cmd->parsed()) return run_train(train_args, out);
    if (eval_cmd->parsed()) return run_eval(eval, out);
    if (predict_cmd->parsed()) return run_predict(predict, out);
    return run_gradcheck(gradcheck, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace cnnqa
