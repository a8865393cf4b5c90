#include "cnnqa/tensor.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "cnnqa/errors.hpp"

namespace cnnqa {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 3)
    throw DimensionError("tensor rank must be 1..3, got " + std::to_string(shape.size()));
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive");
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (product(shape_) != data_.size())
    throw DimensionError("shape " + shape_string() + " does not hold " +
                         std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw DimensionError("rows() on tensor of shape " + shape_string());
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw DimensionError("cols() on tensor of shape " + shape_string());
}

std::span<double> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? " x " : "") << shape_[i];
  os << ']';
  return os.str();
}

// Four independent accumulators let the compiler vectorize without
// reassociating, so results stay identical across optimisation levels.
double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  const double* x = a.data();
  const double* y = b.data();
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const double* src = x.data();
  double* dst = y.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += alpha * src[i];
}

Tensor matvec(const Tensor& weights, const Tensor& x) {
  if (weights.rank() != 2 || x.rank() != 1 || weights.cols() != x.size())
    throw DimensionError("matvec: matrix " + weights.shape_string() + " vs vector " +
                         x.shape_string());
  Tensor out({weights.rows()});
  for (std::size_t r = 0; r < weights.rows(); ++r) out[r] = dot(weights.row(r), x.values());
  return out;
}

MatvecGrad matvec_backward(const Tensor& weights, const Tensor& x, const Tensor& grad_out) {
  if (weights.rank() != 2 || x.size() != weights.cols() || grad_out.size() != weights.rows())
    throw DimensionError("matvec_backward: matrix " + weights.shape_string() + ", vector " +
                         x.shape_string() + ", upstream " + grad_out.shape_string());
  MatvecGrad g{Tensor(weights.shape()), Tensor({x.size()})};
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const double go = grad_out[r];
    if (go == 0.0) continue;
    axpy(go, x.values(), g.weights.row(r));
    axpy(go, weights.row(r), g.input.values());
  }
  return g;
}

Tensor concat(const std::vector<Tensor>& segments) {
  if (segments.empty()) throw ArgumentError("concat: empty segment list");
  std::vector<double> out;
  for (const auto& s : segments) {
    if (s.empty()) throw ArgumentError("concat: empty segment");
    out.insert(out.end(), s.values().begin(), s.values().end());
  }
  return Tensor::vector(std::move(out));
}

std::vector<Tensor> concat_backward(const Tensor& grad_out, std::span<const std::size_t> lengths) {
  std::size_t total = 0;
  for (auto n : lengths) total += n;
  if (total != grad_out.size())
    throw DimensionError("concat_backward: segment lengths sum to " + std::to_string(total) +
                         " but upstream is " + grad_out.shape_string());
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (auto n : lengths) {
    auto piece = grad_out.values().subspan(offset, n);
    parts.push_back(Tensor::vector({piece.begin(), piece.end()}));
    offset += n;
  }
  return parts;
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x,
    double h) {
  if (!(h > 0)) throw ArgumentError("finite_difference_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_difference_gradient: non-finite value at coordinate " +
                         std::to_string(i));
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

// ---- serialization ------------------------------------------------------

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("unexpected end of stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.rank() == 0) throw ArgumentError("write_tensor: empty tensor");
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.values()) write_f64(out, v);
  if (!out) throw IoError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  const auto rank = read_u32(in);
  if (rank == 0 || rank > 3) throw ParseError("tensor block has invalid rank " + std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = read_u32(in);
    if (e == 0) throw ParseError("tensor block has zero extent");
    n *= e;
  }
  std::vector<double> data(n);
  for (auto& v : data) v = read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace cnnqa
