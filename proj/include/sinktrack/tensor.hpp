#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sinktrack {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Dense row-major float32 array of rank 1..3.
class Tensor {
 public:
  Tensor() = default;
  // Zero-filled.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor vector(std::vector<float> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const std::vector<float>& values() const { return data_; }

  std::span<const float> row(std::size_t i) const;
  std::span<float> row(std::size_t i);

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  float& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws NumericError naming `what` when any element is NaN/Inf.
void require_finite(const Tensor& t, const char* what);

// a[m×k] · b[k×n]. The k-loop runs left to right for every output element, so
// results are bit-reproducible and equal to the naive triple loop.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row vector x[k] · b[k×n] written into `out` (length n), same accumulation
// order as matmul.
void vec_matmul(std::span<const float> x, const Tensor& b, std::span<float> out);

// Numerically stable softmax (max subtraction).
Tensor softmax_row(const Tensor& x);
void softmax_inplace(std::span<float> x);

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
void layernorm_inplace(std::span<float> x, std::span<const float> gain,
                       std::span<const float> bias, float eps);

Tensor mean_pool_rows(const Tensor& x);

float l1_norm(std::span<const float> x);
inline float l1_norm(const Tensor& x) { return l1_norm(x.data()); }

// Exact (erf) GELU.
float gelu(float x);

// Returns the row range [begin, end) as a new matrix.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

}  // namespace sinktrack
