#include "cnnqa/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "cnnqa/errors.hpp"
#include "cnnqa/sentence_encoder.hpp"

namespace cnnqa {

// ---- triplets -----------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    while (!current.empty() &&
           (current.back() == '?' || current.back() == '.' || current.back() == '!'))
      current.pop_back();
    if (!current.empty()) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)))
      flush();
    else
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  flush();
  return tokens;
}

namespace {

std::string normalize_answer(std::string_view text) {
  std::string out;
  std::istringstream words{std::string(text)};
  for (std::string w; words >> w;) {
    if (!out.empty()) out += ' ';
    for (char ch : w) out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

}  // namespace

std::vector<Triplet> parse_triplets(std::istream& in) {
  std::vector<Triplet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw ParseError("expected three tab-separated fields", lineno);
    Triplet t;
    t.image_id = line.substr(0, t1);
    t.question = tokenize(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    t.answer = normalize_answer(std::string_view(line).substr(t2 + 1));
    if (t.image_id.empty()) throw ParseError("missing image id", lineno);
    if (t.question.empty()) throw ParseError("missing question", lineno);
    if (t.answer.empty()) throw ParseError("missing answer", lineno);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triplet file " + path.string());
  return parse_triplets(in);
}

std::string format_triplet(const Triplet& t) {
  std::string line = t.image_id + '\t';
  for (std::size_t i = 0; i < t.question.size(); ++i) line += (i ? " " : "") + t.question[i];
  return line + '\t' + t.answer;
}

void save_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write triplet file " + path.string());
  for (const auto& t : triplets) out << format_triplet(t) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---- vocabularies -------------------------------------------------------

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[kPadToken] != "<pad>" || tokens[kUnknownToken] != "<unk>")
    throw VocabularyError("vocabulary must start with <pad> and <unk>");
  Vocab v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.index_.contains(tokens[i])) throw DuplicateError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

TokenId Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknownToken : it->second;
}

std::vector<TokenId> Vocab::encode(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

AnswerVocab AnswerVocab::from_answers(const std::vector<std::string>& answers) {
  AnswerVocab v;
  for (const auto& a : answers) {
    if (v.contains(a)) throw DuplicateError("duplicate answer class '" + a + "'");
    v.add(a);
  }
  return v;
}

std::size_t AnswerVocab::add(const std::string& answer) {
  auto [it, inserted] = index_.emplace(answer, answers_.size());
  if (inserted) answers_.push_back(answer);
  return it->second;
}

std::optional<std::size_t> AnswerVocab::find(const std::string& answer) const {
  auto it = index_.find(answer);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t AnswerVocab::index(const std::string& answer) const {
  auto it = index_.find(answer);
  if (it == index_.end()) throw VocabularyError("answer '" + answer + "' is not a known class");
  return it->second;
}

Vocabularies build_vocabs(std::span<const Triplet> train, std::size_t max_answer_classes) {
  if (train.empty()) throw ArgumentError("build_vocabs: empty training set");
  Vocabularies v;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : train) {
    for (const auto& w : t.question) v.questions.add(w);
    if (counts[t.answer]++ == 0) order.push_back(t.answer);
  }
  if (max_answer_classes > 0 && order.size() > max_answer_classes) {
    std::vector<std::string> ranked = order;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const auto& a, const auto& b) { return counts[a] > counts[b]; });
    ranked.resize(max_answer_classes);
    std::unordered_map<std::string, bool> keep;
    for (const auto& a : ranked) keep[a] = true;
    std::erase_if(order, [&](const auto& a) { return !keep.contains(a); });
  }
  for (const auto& a : order) v.answers.add(a);
  return v;
}

std::vector<Triplet> shuffle_question_words(std::span<const Triplet> triplets, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Triplet> out(triplets.begin(), triplets.end());
  for (auto& t : out) rng.shuffle(t.question);
  return out;
}

// ---- synthetic world ----------------------------------------------------

namespace {

const std::array<const char*, 8> kObjectNames = {"box", "ball", "cup", "chair",
                                                 "book", "lamp", "vase", "shoe"};
const std::array<const char*, 8> kColorNames = {"red",   "green", "blue", "yellow",
                                                "black", "white", "pink", "brown"};

enum class Template { Color, Count, CountColor, Where, OnSlot, LeftOf, LeftOfMirror, Relation };

struct TemplateDef {
  Template kind;
  std::vector<std::string> pattern;  // "{obj}", "{obj2}", "{color}", "{loc}" are slots
  unsigned weight;
};

const std::vector<TemplateDef>& templates() {
  static const std::vector<TemplateDef> defs = {
      {Template::Color, {"what", "color", "is", "the", "{obj}"}, 3},
      {Template::Count, {"how", "many", "objects", "are", "there"}, 1},
      {Template::CountColor, {"how", "many", "{color}", "objects", "are", "there"}, 1},
      {Template::Where, {"where", "is", "the", "{obj}"}, 2},
      {Template::OnSlot, {"what", "is", "on", "the", "{loc}"}, 2},
      {Template::LeftOf, {"what", "is", "left", "of", "the", "{obj}"}, 2},
      {Template::LeftOfMirror, {"what", "is", "the", "{obj}", "left", "of"}, 2},
      {Template::Relation, {"is", "the", "{obj}", "left", "of", "the", "{obj2}"}, 4},
  };
  return defs;
}

const SceneObject* find_object(const Scene& scene, std::size_t type) {
  for (const auto& o : scene.objects)
    if (o.type == type) return &o;
  return nullptr;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (object_types < 2 || object_types > kObjectNames.size())
    throw ArgumentError("object_types must lie in [2, " + std::to_string(kObjectNames.size()) + "]");
  if (colors < 2 || colors > kColorNames.size())
    throw ArgumentError("colors must lie in [2, " + std::to_string(kColorNames.size()) + "]");
  if (max_objects < 1 || max_objects > std::min(kSceneSlots, object_types))
    throw ArgumentError("max_objects must lie in [1, " +
                        std::to_string(std::min(kSceneSlots, object_types)) + "]");
  if (samples == 0) throw ArgumentError("samples must be positive");
  if (!(noise >= 0.0 && noise <= 0.05)) throw ArgumentError("noise must lie in [0, 0.05]");
  const std::size_t layout = object_types * (1 + colors + kSceneSlots);
  if (feature_dim < layout)
    throw ArgumentError("feature_dim " + std::to_string(feature_dim) +
                        " is smaller than the scene layout of " + std::to_string(layout));
}

SyntheticWorld::SyntheticWorld(const SyntheticSpec& spec) : spec_(spec) {
  spec_.validate();
  objects_.assign(kObjectNames.begin(), kObjectNames.begin() + spec_.object_types);
  colors_.assign(kColorNames.begin(), kColorNames.begin() + spec_.colors);
}

const std::vector<std::string>& SyntheticWorld::location_names() {
  static const std::vector<std::string> names = {"left", "middle", "right"};
  return names;
}

std::optional<std::size_t> SyntheticWorld::object_id(const std::string& name) const {
  auto it = std::ranges::find(objects_, name);
  if (it == objects_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - objects_.begin());
}

std::optional<std::size_t> SyntheticWorld::color_id(const std::string& name) const {
  auto it = std::ranges::find(colors_, name);
  if (it == colors_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - colors_.begin());
}

std::vector<double> SyntheticWorld::encode(const Scene& scene, Rng* noise) const {
  std::vector<double> f(spec_.feature_dim, 0.0);
  const std::size_t block = block_size();
  for (const auto& o : scene.objects) {
    const std::size_t base = o.type * block;
    f[base] = 1.0;
    f[base + 1 + o.color] = 1.0;
    f[base + 1 + colors_.size() + o.slot] = 1.0;
  }
  if (noise && spec_.noise > 0)
    for (auto& v : f) v += noise->uniform(-spec_.noise, spec_.noise);
  return f;
}

std::optional<std::string> SyntheticWorld::answer(const Scene& scene,
                                                  std::span<const std::string> question) const {
  const auto& locs = location_names();
  for (const auto& def : templates()) {
    if (def.pattern.size() != question.size()) continue;
    std::optional<std::size_t> obj, obj2, color, loc;
    bool ok = true;
    for (std::size_t i = 0; ok && i < question.size(); ++i) {
      const auto& p = def.pattern[i];
      const auto& w = question[i];
      if (p == "{obj}")
        ok = (obj = object_id(w)).has_value();
      else if (p == "{obj2}")
        ok = (obj2 = object_id(w)).has_value();
      else if (p == "{color}")
        ok = (color = color_id(w)).has_value();
      else if (p == "{loc}") {
        auto it = std::ranges::find(locs, w);
        ok = it != locs.end();
        if (ok) loc = static_cast<std::size_t>(it - locs.begin());
      } else
        ok = p == w;
    }
    if (!ok) continue;

    const SceneObject* x = obj ? find_object(scene, *obj) : nullptr;
    switch (def.kind) {
      case Template::Color:
        if (!x) return std::nullopt;
        return colors_[x->color];
      case Template::Count:
        return std::to_string(scene.objects.size());
      case Template::CountColor:
        return std::to_string(std::ranges::count_if(
            scene.objects, [&](const SceneObject& o) { return o.color == *color; }));
      case Template::Where:
        if (!x) return std::nullopt;
        return locs[x->slot];
      case Template::OnSlot:
        for (const auto& o : scene.objects)
          if (o.slot == *loc) return objects_[o.type];
        return "nothing";
      case Template::LeftOf: {
        if (!x) return std::nullopt;
        const SceneObject* best = nullptr;
        for (const auto& o : scene.objects)
          if (o.slot < x->slot && (!best || o.slot > best->slot)) best = &o;
        return best ? objects_[best->type] : "nothing";
      }
      case Template::LeftOfMirror: {
        if (!x) return std::nullopt;
        const SceneObject* best = nullptr;
        for (const auto& o : scene.objects)
          if (o.slot > x->slot && (!best || o.slot < best->slot)) best = &o;
        return best ? objects_[best->type] : "nothing";
      }
      case Template::Relation: {
        const SceneObject* y = find_object(scene, *obj2);
        if (!x || !y) return std::nullopt;
        return x->slot < y->slot ? "yes" : "no";
      }
    }
  }
  return std::nullopt;
}

Scene SyntheticWorld::random_scene(const std::string& image_id, Rng& rng) const {
  Scene s{image_id, {}};
  const std::size_t count = 1 + rng.index(spec_.max_objects);
  std::vector<std::size_t> types(objects_.size());
  std::vector<std::size_t> slots(kSceneSlots);
  for (std::size_t i = 0; i < types.size(); ++i) types[i] = i;
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(types);
  rng.shuffle(slots);
  for (std::size_t i = 0; i < count; ++i)
    s.objects.push_back({types[i], rng.index(colors_.size()), slots[i]});
  std::ranges::sort(s.objects, {}, &SceneObject::slot);
  return s;
}

std::vector<std::string> SyntheticWorld::random_question(const Scene& scene, Rng& rng) const {
  const auto& defs = templates();
  unsigned total = 0;
  for (const auto& d : defs) total += d.weight;
  while (true) {
    auto pick = static_cast<unsigned>(rng.index(total));
    const TemplateDef* def = &defs.front();
    for (const auto& d : defs) {
      if (pick < d.weight) {
        def = &d;
        break;
      }
      pick -= d.weight;
    }
    if (def->kind == Template::Relation && scene.objects.size() < 2) continue;

    const auto& x = scene.objects[rng.index(scene.objects.size())];
    const SceneObject* y = nullptr;
    if (def->kind == Template::Relation) {
      do y = &scene.objects[rng.index(scene.objects.size())];
      while (y->type == x.type);
    }
    const std::size_t color = rng.index(colors_.size());
    const std::size_t loc = rng.index(kSceneSlots);

    std::vector<std::string> q;
    for (const auto& p : def->pattern) {
      if (p == "{obj}")
        q.push_back(objects_[x.type]);
      else if (p == "{obj2}")
        q.push_back(objects_[y->type]);
      else if (p == "{color}")
        q.push_back(colors_[color]);
      else if (p == "{loc}")
        q.push_back(location_names()[loc]);
      else
        q.push_back(p);
    }
    return q;
  }
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  const SyntheticWorld world(spec);
  Rng scene_rng(mix_seed(spec.seed, 0));
  Rng noise_rng(mix_seed(spec.seed, 1));
  SyntheticDataset ds{{}, ImageFeatureStore(spec.feature_dim), {}};
  for (std::size_t i = 0; i < spec.samples; ++i) {
    Scene scene = world.random_scene(spec.id_prefix + std::to_string(i), scene_rng);
    auto question = world.random_question(scene, scene_rng);
    auto answer = world.answer(scene, question);
    if (!answer) throw Error("synthetic generator produced an unanswerable question");
    ds.features.add(scene.image_id, world.encode(scene, &noise_rng));
    ds.triplets.push_back({scene.image_id, std::move(question), *answer});
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

nlohmann::json scenes_to_json(const SyntheticWorld& world, std::span<const Scene> scenes) {
  const auto& spec = world.spec();
  nlohmann::json j;
  j["objects"] = world.object_names();
  j["colors"] = world.color_names();
  j["locations"] = SyntheticWorld::location_names();
  j["layout"] = {{"block_size", world.block_size()},
                 {"blocks", "one per object type: present, color one-hot, location one-hot"},
                 {"feature_dim", spec.feature_dim},
                 {"noise", spec.noise}};
  j["seed"] = spec.seed;
  auto& list = j["scenes"] = nlohmann::json::array();
  for (const auto& s : scenes) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects)
      objs.push_back({{"object", world.object_names()[o.type]},
                      {"color", world.color_names()[o.color]},
                      {"location", SyntheticWorld::location_names()[o.slot]}});
    list.push_back({{"image_id", s.image_id}, {"objects", std::move(objs)}});
  }
  return j;
}

}  // namespace cnnqa
