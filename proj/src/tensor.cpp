#include "sinktrack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "sinktrack/error.hpp"

namespace sinktrack {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t element_count(const Shape& shape) {
  if (shape.empty() || shape.size() > 3) {
    throw DimensionError("tensor rank must be 1..3, got shape " + shape_to_string(shape));
  }
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(element_count(shape_), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::vector<float> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<float> flat;
  flat.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged rows in Tensor::from_rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(flat));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return 1;
  return std::accumulate(shape_.begin(), shape_.end() - 1, std::size_t{1}, std::multiplies<>());
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<const float> Tensor::row(std::size_t i) const {
  return std::span<const float>(data_).subspan(i * cols(), cols());
}

std::span<float> Tensor::row(std::size_t i) { return std::span<float>(data_).subspan(i * cols(), cols()); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t n = b.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) vec_matmul(a.row(i), b, out.row(i));
  require_finite(out, "matmul");
  return out;
}

void vec_matmul(std::span<const float> x, const Tensor& b, std::span<float> out) {
  const std::size_t k = b.rows();
  const std::size_t n = b.cols();
  if (x.size() != k || out.size() != n) {
    throw DimensionError("vec_matmul shape mismatch: [" + std::to_string(x.size()) + "] x " +
                         shape_to_string(b.shape()));
  }
  const float* bd = b.data().data();
  for (std::size_t j = 0; j < n; ++j) {
    float acc = 0.0f;
    for (std::size_t p = 0; p < k; ++p) acc += x[p] * bd[p * n + j];
    out[j] = acc;
  }
}

void softmax_inplace(std::span<float> x) {
  if (x.empty()) throw DimensionError("softmax of empty vector");
  float mx = x[0];
  for (float v : x) {
    if (!std::isfinite(v)) throw NumericError("softmax input is not finite");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (float& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  const auto inv = static_cast<float>(1.0 / sum);
  for (float& v : x) v *= inv;
}

Tensor softmax_row(const Tensor& x) {
  if (x.rank() != 1) throw DimensionError("softmax_row expects a vector, got " + shape_to_string(x.shape()));
  Tensor out = x;
  softmax_inplace(out.data());
  return out;
}

void layernorm_inplace(std::span<float> x, std::span<const float> gain, std::span<const float> bias,
                       float eps) {
  if (gain.size() != x.size() || bias.size() != x.size()) {
    throw DimensionError("layernorm length mismatch: x=" + std::to_string(x.size()) + " gain=" +
                         std::to_string(gain.size()) + " bias=" + std::to_string(bias.size()));
  }
  if (!(eps > 0.0f)) throw InputError("layernorm eps must be positive");
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv_std = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>((x[i] - mean) * inv_std) * gain[i] + bias[i];
  }
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() != 1) throw DimensionError("layernorm expects a vector, got " + shape_to_string(x.shape()));
  Tensor out = x;
  layernorm_inplace(out.data(), gain.data(), bias.data(), eps);
  require_finite(out, "layernorm");
  return out;
}

Tensor mean_pool_rows(const Tensor& x) {
  if (x.empty() || x.rows() == 0) throw DimensionError("mean_pool_rows of an empty matrix");
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  std::vector<double> acc(d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < d; ++j) acc[j] += r[j];
  }
  Tensor out({d});
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(m));
  return out;
}

float l1_norm(std::span<const float> x) {
  float s = 0.0f;
  for (float v : x) s += std::fabs(v);
  return s;
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_to_string(x.shape()));
  }
  const std::size_t d = x.cols();
  std::vector<float> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  return Tensor::matrix(end - begin, d, std::move(data));
}

}  // namespace sinktrack
