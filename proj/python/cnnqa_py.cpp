#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <set>
#include <sstream>

#include "cnnqa/cli.hpp"
#include "cnnqa/errors.hpp"
#include "cnnqa/trainer.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace cnnqa;

namespace {

using TripletTuple = std::tuple<std::string, std::string, std::string>;

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::vector<Triplet> to_triplets(const std::vector<TripletTuple>& rows) {
  std::vector<Triplet> out;
  out.reserve(rows.size());
  for (const auto& [image, question, answer] : rows)
    out.push_back({image, tokenize(question), answer});
  return out;
}

std::vector<TripletTuple> from_triplets(const std::vector<Triplet>& triplets) {
  std::vector<TripletTuple> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) out.emplace_back(t.image_id, join(t.question), t.answer);
  return out;
}

py::array_t<double> to_array(std::span<const double> values) {
  py::array_t<double> a(static_cast<py::ssize_t>(values.size()));
  std::copy(values.begin(), values.end(), a.mutable_data());
  return a;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw DimensionError("expected a one-dimensional feature vector");
  return {a.data(), a.data() + a.size()};
}

const std::set<std::string> kTrainKeys = {"batch_size",       "learning_rate", "epochs",
                                          "train_seed",       "lr_decay",      "checkpoint_every",
                                          "eval_every",       "threads"};

std::pair<ModelConfig, TrainConfig> split_config(const py::dict& config) {
  const auto j = from_python(config);
  const auto model_keys = nlohmann::json(ModelConfig{});
  for (const auto& [key, value] : j.items())
    if (!model_keys.contains(key) && !kTrainKeys.contains(key))
      throw ArgumentError("unknown config key '" + key + "'");
  return {j.get<ModelConfig>(), j.get<TrainConfig>()};
}

py::dict gradient_report(const GradientCheckReport& r) {
  return py::dict("max_relative_error"_a = r.max_relative_error, "worst_index"_a = r.worst_index,
                  "worst_group"_a = r.worst_group, "worst_offset"_a = r.worst_offset,
                  "analytic"_a = r.analytic, "numeric"_a = r.numeric,
                  "parameters"_a = r.parameters, "passed"_a = r.passed());
}

}  // namespace

PYBIND11_MODULE(_cnnqa, m) {
  m.doc() = "Convolutional image question answering: model, training and metrics";

  static py::exception<Error> base(m, "CnnqaError");
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ArgumentError>(m, "ArgumentError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<VocabularyError>(m, "VocabularyError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<DuplicateError>(m, "DuplicateError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<TaxonomyError>(m, "TaxonomyError", base);

  m.def("tokenize", &tokenize, "text"_a);

  // ---- data -------------------------------------------------------------

  py::class_<ImageFeatureStore>(m, "FeatureStore")
      .def(py::init<std::size_t>(), "feature_dim"_a)
      .def_property_readonly("feature_dim", &ImageFeatureStore::feature_dim)
      .def("__len__", &ImageFeatureStore::size)
      .def("__contains__", &ImageFeatureStore::contains)
      .def("__getitem__",
           [](const ImageFeatureStore& s, const std::string& id) { return to_array(s.at(id)); })
      .def("add",
           [](ImageFeatureStore& s, const std::string& id,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& v) {
             s.add(id, from_array(v));
           })
      .def("ids", &ImageFeatureStore::ids)
      .def("save", [](const ImageFeatureStore& s, const std::filesystem::path& p) {
        save_features(p, s);
      });

  m.def("load_features", [](const std::filesystem::path& p) {
    return p.extension() == ".bin" ? load_features_binary(p) : load_features(p);
  });
  m.def("load_triplets",
        [](const std::filesystem::path& p) { return from_triplets(load_triplets(p)); });
  m.def("save_triplets", [](const std::filesystem::path& p, const std::vector<TripletTuple>& rows) {
    save_triplets(p, to_triplets(rows));
  });
  m.def("shuffle_questions",
        [](const std::vector<TripletTuple>& rows, std::uint64_t seed) {
          return from_triplets(shuffle_question_words(to_triplets(rows), seed));
        },
        "triplets"_a, "seed"_a);

  m.def(
      "synthetic",
      [](std::size_t samples, std::uint64_t seed, std::size_t objects, std::size_t colors,
         std::size_t max_objects, std::size_t feature_dim, double noise) {
        SyntheticSpec spec;
        spec.samples = samples;
        spec.seed = seed;
        spec.object_types = objects;
        spec.colors = colors;
        spec.max_objects = max_objects;
        spec.feature_dim = feature_dim;
        spec.noise = noise;
        auto ds = generate_synthetic(spec);
        return py::make_tuple(from_triplets(ds.triplets), std::move(ds.features));
      },
      "samples"_a = 1000, "seed"_a = 7, "objects"_a = 3, "colors"_a = 2, "max_objects"_a = 3,
      "feature_dim"_a = 64, "noise"_a = 0.05,
      "Synthetic scenes: returns ([(image_id, question, answer)], FeatureStore).");

  // ---- metrics ----------------------------------------------------------

  py::class_<TaxonomyTree>(m, "Taxonomy")
      .def(py::init(&TaxonomyTree::from_edges), "edges"_a,
           "Build from (child, parent) pairs; the root's parent is 'ROOT'.")
      .def_static("load", &load_taxonomy, "path"_a)
      .def("__contains__", &TaxonomyTree::contains)
      .def("__len__", &TaxonomyTree::size)
      .def_property_readonly("root", &TaxonomyTree::root)
      .def("depth", &TaxonomyTree::depth)
      .def("lowest_common_ancestor", &TaxonomyTree::lowest_common_ancestor)
      .def("wup", [](const TaxonomyTree& t, const std::string& a, const std::string& b) {
        return wup_similarity(a, b, t);
      });

  m.def("accuracy",
        [](const std::vector<std::string>& p, const std::vector<std::string>& t) {
          return accuracy(p, t);
        },
        "predictions"_a, "truths"_a);
  m.def(
      "wups",
      [](const std::vector<std::string>& p, const std::vector<std::string>& t,
         const TaxonomyTree& tree, double threshold, bool strict) {
        return wups_at_t(p, t, tree, threshold, WupsOptions{strict});
      },
      "predictions"_a, "truths"_a, "taxonomy"_a, "threshold"_a, "strict"_a = false);

  // ---- model ------------------------------------------------------------

  m.def(
      "sentence_output_shape",
      [](std::size_t length, std::size_t max_len, std::size_t embed_dim,
         std::array<std::size_t, 3> feature_maps, std::uint64_t seed) {
        SentenceEncoderConfig c;
        c.max_len = max_len;
        c.embed_dim = embed_dim;
        c.feature_maps = feature_maps;
        Rng rng(seed);
        const auto params = SentenceEncoderParams::init(c, 8, rng);
        std::vector<TokenId> q(length);
        for (auto& t : q) t = static_cast<TokenId>(1 + rng.index(7));
        const auto out = encode_question(q, params, c);
        return py::make_tuple(out.count(), out.dim());
      },
      "length"_a, "max_len"_a = 38, "embed_dim"_a = 50,
      "feature_maps"_a = std::array<std::size_t, 3>{300, 400, 400}, "seed"_a = 0,
      "Shape (positions, width) of the sentence encoding for a random question.");

  m.def(
      "gradient_check",
      [](const std::string& mode, std::uint64_t seed, double step, bool corrupt) {
        GradientCheckOptions o;
        o.step = step;
        o.corrupt_backward = corrupt;
        return gradient_report(gradient_check(tiny_model_config(parse_mode(mode)), seed, o));
      },
      "mode"_a = "full", "seed"_a = 0, "step"_a = 1e-5, "corrupt"_a = false);

  py::class_<Checkpoint>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); })
      .def_property_readonly("config", [](const Checkpoint& c) { return to_python(c.config); })
      .def_property_readonly("answers", [](const Checkpoint& c) { return c.answers; })
      .def_property_readonly("vocabulary", [](const Checkpoint& c) { return c.question_vocab; })
      .def_property_readonly("parameter_count",
                             [](const Checkpoint& c) { return parameter_count(c.config); })
      .def_property_readonly("parameters",
                             [](const Checkpoint& c) { return to_array(flatten(c.params)); })
      .def(
          "predict",
          [](const Checkpoint& c, const std::string& question, const py::object& image) {
            std::vector<double> feature;
            if (!image.is_none())
              feature = from_array(image.cast<py::array_t<double, py::array::c_style |
                                                                     py::array::forcecast>>());
            return predict_answer(c, tokenize(question), feature);
          },
          "question"_a, "image"_a = py::none())
      .def(
          "evaluate",
          [](const Checkpoint& c, const std::vector<TripletTuple>& rows,
             const ImageFeatureStore* features, const TaxonomyTree* taxonomy, unsigned threads) {
            const auto ev = evaluate(c, to_triplets(rows), features, taxonomy, threads);
            auto report = to_python(to_json(ev.report));
            report["predictions"] = ev.predictions;
            return report;
          },
          "triplets"_a, "features"_a = nullptr, "taxonomy"_a = nullptr, "threads"_a = 1);

  m.def(
      "train",
      [](const std::vector<TripletTuple>& rows, const ImageFeatureStore* features,
         const py::dict& config, const py::object& eval_rows,
         const ImageFeatureStore* eval_features) {
        auto [model, train_cfg] = split_config(config);
        if (features && !config.contains("feature_dim")) model.feature_dim = features->feature_dim();
        const auto triplets = to_triplets(rows);
        std::vector<Triplet> eval_triplets;
        std::optional<EvalSet> eval;
        if (!eval_rows.is_none()) {
          eval_triplets = to_triplets(eval_rows.cast<std::vector<TripletTuple>>());
          eval = EvalSet{eval_triplets, eval_features ? eval_features : features};
        }
        TrainResult result;
        {
          py::gil_scoped_release release;
          result = train(triplets, features, model, train_cfg, eval);
        }
        py::list log;
        for (const auto& e : result.log) log.append(to_python(to_json(e)));
        return py::make_tuple(std::move(result.checkpoint), log);
      },
      "triplets"_a, "features"_a = nullptr, "config"_a = py::dict(), "eval"_a = py::none(),
      "eval_features"_a = nullptr,
      "Minibatch SGD. Config keys are the model and training keys of the CLI config file. "
      "Returns (Model, per-epoch log).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "args"_a, "Run a cnnqa command in process; returns (exit_code, stdout, stderr).");
}
