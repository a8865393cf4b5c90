#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cnnqa/image_encoder.hpp"
#include "cnnqa/layers.hpp"

namespace cnnqa {

/// One (image, question, answer) sample. Answers may span several words and
/// still form a single class.
struct Triplet {
  std::string image_id;
  std::vector<std::string> question;
  std::string answer;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Lowercase, split on whitespace, strip trailing `?`, `.` and `!`.
std::vector<std::string> tokenize(std::string_view text);

/// `image_id<TAB>question text<TAB>answer text`, one per line.
std::vector<Triplet> parse_triplets(std::istream& in);
std::vector<Triplet> load_triplets(const std::filesystem::path& path);
void save_triplets(const std::filesystem::path& path, std::span<const Triplet> triplets);
std::string format_triplet(const Triplet& t);

/// Question tokens. Index 0 is padding and index 1 the unknown token.
class Vocab {
 public:
  Vocab();
  /// Rebuilds from a token-by-index list (as stored in checkpoints).
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  TokenId add(const std::string& token);
  /// Unknown tokens map to kUnknownToken.
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<TokenId> encode(std::span<const std::string> words) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// The closed answer set; class indices follow first occurrence.
class AnswerVocab {
 public:
  static AnswerVocab from_answers(const std::vector<std::string>& answers);

  std::size_t add(const std::string& answer);
  std::optional<std::size_t> find(const std::string& answer) const;
  std::size_t index(const std::string& answer) const;  // throws if absent
  const std::string& answer(std::size_t index) const { return answers_.at(index); }
  bool contains(const std::string& answer) const { return index_.contains(answer); }
  std::size_t size() const { return answers_.size(); }
  const std::vector<std::string>& answers() const { return answers_; }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Vocabularies {
  Vocab questions;
  AnswerVocab answers;
};

/// Builds both vocabularies from training triplets only. With
/// `max_answer_classes` > 0 only the most frequent answers become classes
/// (ties by first occurrence).
Vocabularies build_vocabs(std::span<const Triplet> train, std::size_t max_answer_classes = 0);

/// Applies an independent seeded uniform permutation to each question.
std::vector<Triplet> shuffle_question_words(std::span<const Triplet> triplets, std::uint64_t seed);

// ---- synthetic scenes ---------------------------------------------------

inline constexpr std::size_t kSceneSlots = 3;  // left, middle, right

struct SyntheticSpec {
  std::size_t object_types = 3;
  std::size_t colors = 2;
  std::size_t max_objects = 3;
  std::size_t samples = 1000;
  std::size_t feature_dim = 64;
  double noise = 0.05;
  std::uint64_t seed = 7;
  std::string id_prefix = "img";

  void validate() const;
};

struct SceneObject {
  std::size_t type = 0;
  std::size_t color = 0;
  std::size_t slot = 0;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::string image_id;
  std::vector<SceneObject> objects;  // sorted left to right
};

/// Vocabulary of the synthetic world plus its two oracles: the feature
/// encoder and the ground-truth answer function.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(const SyntheticSpec& spec);

  const SyntheticSpec& spec() const { return spec_; }
  const std::vector<std::string>& object_names() const { return objects_; }
  const std::vector<std::string>& color_names() const { return colors_; }
  static const std::vector<std::string>& location_names();

  /// One block per object type: [present | color one-hot | location one-hot].
  std::size_t block_size() const { return 1 + colors_.size() + kSceneSlots; }
  std::size_t layout_size() const { return objects_.size() * block_size(); }

  /// Exact block one-hot encoding plus U[-noise, noise] per entry when a
  /// noise stream is given.
  std::vector<double> encode(const Scene& scene, Rng* noise) const;

  /// Ground truth for any question matching one of the templates; nullopt
  /// when the question does not parse or refers to an absent object.
  std::optional<std::string> answer(const Scene& scene, std::span<const std::string> question) const;

  Scene random_scene(const std::string& image_id, Rng& rng) const;
  /// Draws a template question that is answerable for `scene`.
  std::vector<std::string> random_question(const Scene& scene, Rng& rng) const;

 private:
  std::optional<std::size_t> object_id(const std::string& name) const;
  std::optional<std::size_t> color_id(const std::string& name) const;

  SyntheticSpec spec_;
  std::vector<std::string> objects_;
  std::vector<std::string> colors_;
};

struct SyntheticDataset {
  std::vector<Triplet> triplets;
  ImageFeatureStore features;
  std::vector<Scene> scenes;  // scenes[i] belongs to triplets[i]
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Sidecar describing the world and every scene.
nlohmann::json scenes_to_json(const SyntheticWorld& world, std::span<const Scene> scenes);

}  // namespace cnnqa
