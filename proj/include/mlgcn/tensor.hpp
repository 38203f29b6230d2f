#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mlgcn {

/// Row-major N x C feature store. Rows are points, columns are channels.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// N x k x C, the result of gathering features over a KNN graph.
template <class T>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t n, std::size_t k, std::size_t c, T fill = T{0})
      : n_(n), k_(k), c_(c), data_(n * k * c, fill) {}

  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t c() const noexcept { return c_; }

  T& operator()(std::size_t i, std::size_t j, std::size_t ch) noexcept {
    return data_[(i * k_ + j) * c_ + ch];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t ch) const noexcept {
    return data_[(i * k_ + j) * c_ + ch];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t n_ = 0, k_ = 0, c_ = 0;
  std::vector<T> data_;
};

enum class Activation { kRelu, kIdentity };

/// One shared MLP layer: the same C_in x C_out weights applied to every row.
template <class T>
struct DenseLayer {
  std::string name;
  Matrix<T> weight;  // in x out
  std::vector<T> bias;
  Matrix<T> grad_weight;
  std::vector<T> grad_bias;
  Activation activation = Activation::kRelu;

  DenseLayer() = default;
  DenseLayer(std::string layer_name, std::size_t in, std::size_t out,
             Activation act = Activation::kRelu)
      : name(std::move(layer_name)),
        weight(in, out),
        bias(out, T{0}),
        grad_weight(in, out),
        grad_bias(out, T{0}),
        activation(act) {}

  std::size_t in_channels() const noexcept { return weight.rows(); }
  std::size_t out_channels() const noexcept { return weight.cols(); }
  std::size_t parameter_count() const noexcept { return weight.rows() * weight.cols() + bias.size(); }

  void zero_grad();
  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero bias.
  void init_kaiming(std::uint64_t seed);
};

/// Input and post-activation output retained for the backward pass.
template <class T>
struct DenseCache {
  Matrix<T> input;
  Matrix<T> output;
  bool valid = false;
};

/// Argmax positions recorded by a max-pool; `pooled` is the size of the
/// reduced axis (k for neighborhood pooling, N for global pooling).
struct PoolIndexCache {
  std::size_t rows = 0;
  std::size_t pooled = 0;
  std::size_t channels = 0;
  std::vector<std::uint32_t> argmax;  // rows x channels
  bool valid = false;
};

template <class T>
Matrix<T> dense_forward(const DenseLayer<T>& layer, const Matrix<T>& x, DenseCache<T>* cache = nullptr);

/// Returns dL/dx and accumulates into layer.grad_weight / grad_bias.
template <class T>
Matrix<T> dense_backward(DenseLayer<T>& layer, const DenseCache<T>& cache, const Matrix<T>& grad_out);

template <class T>
Matrix<T> neighborhood_maxpool(const Tensor3<T>& gathered, PoolIndexCache* cache = nullptr);

template <class T>
Tensor3<T> neighborhood_maxpool_backward(const PoolIndexCache& cache, const Matrix<T>& grad_out);

/// N x C -> 1 x C per-channel max.
template <class T>
Matrix<T> global_maxpool(const Matrix<T>& x, PoolIndexCache* cache = nullptr);

template <class T>
Matrix<T> global_maxpool_backward(const PoolIndexCache& cache, const Matrix<T>& grad_out);

template <class T>
Matrix<T> concat_channels(const Matrix<T>& a, const Matrix<T>& b);

/// Inverse of concat_channels: first `left_cols` columns, then the rest.
template <class T>
std::pair<Matrix<T>, Matrix<T>> split_channels(const Matrix<T>& m, std::size_t left_cols);

/// Throws NonFinite if any entry is NaN/Inf.
template <class T>
void require_finite(const Matrix<T>& m, const char* what);

template <class U, class T>
Matrix<U> cast_matrix(const Matrix<T>& m) {
  Matrix<U> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
  return out;
}

}  // namespace mlgcn
