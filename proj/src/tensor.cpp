#include "mlgcn/tensor.hpp"

#include <cmath>
#include <random>

#include "mlgcn/error.hpp"

namespace mlgcn {

template <class T>
void DenseLayer<T>::zero_grad() {
  grad_weight.fill(T{0});
  std::fill(grad_bias.begin(), grad_bias.end(), T{0});
}

template <class T>
void DenseLayer<T>::init_kaiming(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(in_channels()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : weight.values()) w = static_cast<T>(dist(rng));
  std::fill(bias.begin(), bias.end(), T{0});
  zero_grad();
}

template <class T>
void require_finite(const Matrix<T>& m, const char* what) {
  for (T v : m.values()) {
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, what);
  }
}

template <class T>
Matrix<T> dense_forward(const DenseLayer<T>& layer, const Matrix<T>& x, DenseCache<T>* cache) {
  const std::size_t cin = layer.in_channels(), cout = layer.out_channels();
  if (x.cols() != cin) {
    fail(ErrorCode::kShapeMismatch, layer.name + ": expected " + std::to_string(cin) + " input channels, got " +
                                        std::to_string(x.cols()));
  }
  Matrix<T> out(x.rows(), cout);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto o = out.row(i);
    std::copy(layer.bias.begin(), layer.bias.end(), o.begin());
    auto xi = x.row(i);
    for (std::size_t p = 0; p < cin; ++p) {
      const T xv = xi[p];
      auto w = layer.weight.row(p);
      for (std::size_t j = 0; j < cout; ++j) o[j] += xv * w[j];
    }
    for (const T v : o) {
      if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, layer.name + ": non-finite activation in row " + std::to_string(i));
    }
    if (layer.activation == Activation::kRelu) {
      for (auto& v : o) v = v > T{0} ? v : T{0};
    }
  }
  if (cache) {
    cache->input = x;
    cache->output = out;
    cache->valid = true;
  }
  return out;
}

template <class T>
Matrix<T> dense_backward(DenseLayer<T>& layer, const DenseCache<T>& cache, const Matrix<T>& grad_out) {
  if (!cache.valid) fail(ErrorCode::kMissingForwardCache, layer.name);
  const std::size_t cin = layer.in_channels(), cout = layer.out_channels();
  if (grad_out.rows() != cache.input.rows() || grad_out.cols() != cout)
    fail(ErrorCode::kShapeMismatch, layer.name + ": gradient shape does not match forward output");

  Matrix<T> grad_x(cache.input.rows(), cin);
  std::vector<T> g(cout);
  for (std::size_t i = 0; i < grad_out.rows(); ++i) {
    auto go = grad_out.row(i);
    if (layer.activation == Activation::kRelu) {
      auto y = cache.output.row(i);
      for (std::size_t j = 0; j < cout; ++j) g[j] = y[j] > T{0} ? go[j] : T{0};
    } else {
      std::copy(go.begin(), go.end(), g.begin());
    }
    for (std::size_t j = 0; j < cout; ++j) layer.grad_bias[j] += g[j];
    auto xi = cache.input.row(i);
    auto gx = grad_x.row(i);
    for (std::size_t p = 0; p < cin; ++p) {
      auto w = layer.weight.row(p);
      auto gw = layer.grad_weight.row(p);
      const T xv = xi[p];
      T acc{0};
      for (std::size_t j = 0; j < cout; ++j) {
        gw[j] += xv * g[j];
        acc += g[j] * w[j];
      }
      gx[p] = acc;
    }
  }
  return grad_x;
}

template <class T>
Matrix<T> neighborhood_maxpool(const Tensor3<T>& gathered, PoolIndexCache* cache) {
  const std::size_t n = gathered.n(), k = gathered.k(), c = gathered.c();
  if (k == 0) fail(ErrorCode::kShapeMismatch, "neighborhood_maxpool needs k >= 1");
  Matrix<T> out(n, c);
  std::vector<std::uint32_t> arg(n * c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out(i, ch) = gathered(i, 0, ch);
    for (std::size_t j = 1; j < k; ++j) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        // strict > keeps the smallest j on ties
        if (gathered(i, j, ch) > out(i, ch)) {
          out(i, ch) = gathered(i, j, ch);
          arg[i * c + ch] = static_cast<std::uint32_t>(j);
        }
      }
    }
  }
  if (cache) *cache = PoolIndexCache{n, k, c, std::move(arg), true};
  return out;
}

template <class T>
Tensor3<T> neighborhood_maxpool_backward(const PoolIndexCache& cache, const Matrix<T>& grad_out) {
  if (!cache.valid) fail(ErrorCode::kMissingForwardCache, "neighborhood_maxpool");
  if (grad_out.rows() != cache.rows || grad_out.cols() != cache.channels)
    fail(ErrorCode::kShapeMismatch, "neighborhood_maxpool_backward");
  Tensor3<T> grad(cache.rows, cache.pooled, cache.channels);
  for (std::size_t i = 0; i < cache.rows; ++i) {
    for (std::size_t ch = 0; ch < cache.channels; ++ch)
      grad(i, cache.argmax[i * cache.channels + ch], ch) += grad_out(i, ch);
  }
  return grad;
}

template <class T>
Matrix<T> global_maxpool(const Matrix<T>& x, PoolIndexCache* cache) {
  if (x.rows() == 0) fail(ErrorCode::kShapeMismatch, "global_maxpool needs N >= 1");
  const std::size_t c = x.cols();
  Matrix<T> out(1, c);
  std::vector<std::uint32_t> arg(c, 0);
  auto o = out.row(0);
  auto first = x.row(0);
  std::copy(first.begin(), first.end(), o.begin());
  for (std::size_t i = 1; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (r[ch] > o[ch]) {
        o[ch] = r[ch];
        arg[ch] = static_cast<std::uint32_t>(i);
      }
    }
  }
  if (cache) *cache = PoolIndexCache{1, x.rows(), c, std::move(arg), true};
  return out;
}

template <class T>
Matrix<T> global_maxpool_backward(const PoolIndexCache& cache, const Matrix<T>& grad_out) {
  if (!cache.valid) fail(ErrorCode::kMissingForwardCache, "global_maxpool");
  if (grad_out.rows() != 1 || grad_out.cols() != cache.channels)
    fail(ErrorCode::kShapeMismatch, "global_maxpool_backward");
  Matrix<T> grad(cache.pooled, cache.channels);
  for (std::size_t ch = 0; ch < cache.channels; ++ch) grad(cache.argmax[ch], ch) += grad_out(0, ch);
  return grad;
}

template <class T>
Matrix<T> concat_channels(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() == 0) return b;
  if (b.cols() == 0) return a;
  if (a.rows() != b.rows()) fail(ErrorCode::kShapeMismatch, "concat_channels: row counts differ");
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    auto ra = a.row(i);
    auto rb = b.row(i);
    std::copy(ra.begin(), ra.end(), o.begin());
    std::copy(rb.begin(), rb.end(), o.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

template <class T>
std::pair<Matrix<T>, Matrix<T>> split_channels(const Matrix<T>& m, std::size_t left_cols) {
  if (left_cols > m.cols()) fail(ErrorCode::kShapeMismatch, "split_channels: split point past last column");
  Matrix<T> a(m.rows(), left_cols), b(m.rows(), m.cols() - left_cols);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    std::copy(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(left_cols), a.row(i).begin());
    std::copy(r.begin() + static_cast<std::ptrdiff_t>(left_cols), r.end(), b.row(i).begin());
  }
  return {std::move(a), std::move(b)};
}

#define MLGCN_INSTANTIATE_TENSOR(T)                                                          \
  template struct DenseLayer<T>;                                                             \
  template void require_finite<T>(const Matrix<T>&, const char*);                            \
  template Matrix<T> dense_forward<T>(const DenseLayer<T>&, const Matrix<T>&, DenseCache<T>*); \
  template Matrix<T> dense_backward<T>(DenseLayer<T>&, const DenseCache<T>&, const Matrix<T>&); \
  template Matrix<T> neighborhood_maxpool<T>(const Tensor3<T>&, PoolIndexCache*);            \
  template Tensor3<T> neighborhood_maxpool_backward<T>(const PoolIndexCache&, const Matrix<T>&); \
  template Matrix<T> global_maxpool<T>(const Matrix<T>&, PoolIndexCache*);                   \
  template Matrix<T> global_maxpool_backward<T>(const PoolIndexCache&, const Matrix<T>&);    \
  template Matrix<T> concat_channels<T>(const Matrix<T>&, const Matrix<T>&);                 \
  template std::pair<Matrix<T>, Matrix<T>> split_channels<T>(const Matrix<T>&, std::size_t);

MLGCN_INSTANTIATE_TENSOR(float)
MLGCN_INSTANTIATE_TENSOR(double)

#undef MLGCN_INSTANTIATE_TENSOR

}  // namespace mlgcn
