#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cnnqa/layers.hpp"

namespace cnnqa {

/// Precomputed image features keyed by image id. Read-only once loaded.
class ImageFeatureStore {
 public:
  explicit ImageFeatureStore(std::size_t feature_dim = 4096) : feature_dim_(feature_dim) {}

  void add(const std::string& id, std::vector<double> features);

  bool contains(const std::string& id) const { return index_.contains(id); }
  std::span<const double> at(const std::string& id) const;

  std::size_t size() const { return ids_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  /// Ids in insertion order.
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::size_t feature_dim_;
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Text format, one record per line: `image_id<TAB>v1,v2,...,vD`.
/// With no expected dimension the first record fixes it.
ImageFeatureStore load_features(const std::filesystem::path& path,
                                std::optional<std::size_t> feature_dim = std::nullopt);
ImageFeatureStore parse_features(std::istream& in,
                                 std::optional<std::size_t> feature_dim = std::nullopt);
/// Writes shortest round-trip decimal representations.
void save_features(const std::filesystem::path& path, const ImageFeatureStore& store);

/// Binary variant: magic, id table, then one [N x D] tensor block.
void save_features_binary(const std::filesystem::path& path, const ImageFeatureStore& store);
ImageFeatureStore load_features_binary(const std::filesystem::path& path);

/// Nonlinear projection of a raw feature vector to the joint dimension.
Tensor map_image(std::span<const double> features, const DenseParams& params);
/// Accumulates weight and bias gradients; the stored features stay frozen.
void map_image_backward(std::span<const double> features, const Tensor& output,
                        const Tensor& grad_output, const DenseParams& params, DenseParams& grad);

}  // namespace cnnqa
