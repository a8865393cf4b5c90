#include "cnnqa/image_encoder.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cnnqa/errors.hpp"

namespace cnnqa {

namespace {

constexpr char kBinaryMagic[8] = {'C', 'N', 'N', 'Q', 'A', 'F', 'T', '1'};

std::vector<double> parse_reals(std::string_view text, std::size_t line) {
  std::vector<double> values;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p <= end) {
    const char* comma = std::find(p, end, ',');
    double v = 0;
    auto [ptr, ec] = std::from_chars(p, comma, v);
    if (ec != std::errc() || ptr != comma)
      throw ParseError("malformed real '" + std::string(p, comma) + "'", line);
    values.push_back(v);
    p = comma + 1;
  }
  return values;
}

}  // namespace

void ImageFeatureStore::add(const std::string& id, std::vector<double> features) {
  if (features.size() != feature_dim_)
    throw DimensionError("image '" + id + "' has " + std::to_string(features.size()) +
                         " features, expected " + std::to_string(feature_dim_));
  if (index_.contains(id)) throw DuplicateError("duplicate image id '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  rows_.push_back(std::move(features));
}

std::span<const double> ImageFeatureStore::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ArgumentError("unknown image id '" + id + "'");
  return rows_[it->second];
}

ImageFeatureStore parse_features(std::istream& in, std::optional<std::size_t> feature_dim) {
  std::optional<ImageFeatureStore> store;
  if (feature_dim) store.emplace(*feature_dim);
  std::unordered_map<std::string, std::size_t> first_seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ParseError("expected 'image_id<TAB>v1,...,vD'", lineno);
    std::string id = line.substr(0, tab);
    auto values = parse_reals(std::string_view(line).substr(tab + 1), lineno);
    if (!store) store.emplace(values.size());
    if (auto it = first_seen.find(id); it != first_seen.end())
      throw DuplicateError("duplicate image id '" + id + "' on lines " +
                           std::to_string(it->second) + " and " + std::to_string(lineno));
    if (values.size() != store->feature_dim())
      throw DimensionError("line " + std::to_string(lineno) + ": image '" + id + "' has " +
                           std::to_string(values.size()) + " values, expected " +
                           std::to_string(store->feature_dim()));
    first_seen.emplace(id, lineno);
    store->add(id, std::move(values));
  }
  return store ? std::move(*store) : ImageFeatureStore(feature_dim.value_or(4096));
}

ImageFeatureStore load_features(const std::filesystem::path& path,
                                std::optional<std::size_t> feature_dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file " + path.string());
  return parse_features(in, feature_dim);
}

void save_features(const std::filesystem::path& path, const ImageFeatureStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  char buf[64];
  for (const auto& id : store.ids()) {
    out << id << '\t';
    bool first = true;
    for (double v : store.at(id)) {
      if (!first) out << ',';
      first = false;
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void save_features_binary(const std::filesystem::path& path, const ImageFeatureStore& store) {
  if (store.size() == 0) throw ArgumentError("cannot write an empty binary feature file");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  write_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& id : store.ids()) {
    write_u32(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  std::vector<double> block;
  block.reserve(store.size() * store.feature_dim());
  for (const auto& id : store.ids()) {
    auto row = store.at(id);
    block.insert(block.end(), row.begin(), row.end());
  }
  write_tensor(out, Tensor::matrix(store.size(), store.feature_dim(), std::move(block)));
  if (!out) throw IoError("failed writing " + path.string());
}

ImageFeatureStore load_features_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kBinaryMagic))
    throw ParseError("not a binary feature file: " + path.string());
  const auto count = read_u32(in);
  std::vector<std::string> ids(count);
  for (auto& id : ids) {
    id.resize(read_u32(in));
    if (!in.read(id.data(), static_cast<std::streamsize>(id.size())))
      throw IoError("truncated id table in " + path.string());
  }
  Tensor block = read_tensor(in);
  if (block.rank() != 2 || block.rows() != count)
    throw DimensionError("feature block " + block.shape_string() + " does not match " +
                         std::to_string(count) + " ids");
  ImageFeatureStore store(block.cols());
  for (std::size_t i = 0; i < count; ++i) {
    auto row = block.row(i);
    store.add(ids[i], {row.begin(), row.end()});
  }
  return store;
}

Tensor map_image(std::span<const double> features, const DenseParams& params) {
  return dense(Tensor::vector({features.begin(), features.end()}), params);
}

void map_image_backward(std::span<const double> features, const Tensor& output,
                        const Tensor& grad_output, const DenseParams& params, DenseParams& grad) {
  std::vector<double> g(grad_output.values().begin(), grad_output.values().end());
  activation_backward(params.activation, output.values(), g);
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g[r] == 0.0) continue;
    grad.bias[r] += g[r];
    axpy(g[r], features, grad.weights.row(r));
  }
}

}  // namespace cnnqa
