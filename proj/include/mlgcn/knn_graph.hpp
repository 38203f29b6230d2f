#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "mlgcn/pointset.hpp"
#include "mlgcn/tensor.hpp"

namespace mlgcn {

/// Directed KNN graph with self-loops. Every node has exactly k neighbors,
/// ordered by ascending squared distance, lower index first on ties; the node
/// itself is always at position 0.
class KnnGraph {
 public:
  KnnGraph(std::size_t n_nodes, std::size_t k, std::vector<std::uint32_t> neighbors);

  std::size_t n_nodes() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }

  std::span<const std::uint32_t> neighbors(std::size_t i) const noexcept {
    return {index_.data() + i * k_, k_};
  }
  std::span<const std::uint32_t> flat() const noexcept { return index_; }

  friend bool operator==(const KnnGraph&, const KnnGraph&) = default;

 private:
  std::size_t n_;
  std::size_t k_;
  std::vector<std::uint32_t> index_;
};

/// O(N^2 log k) reference construction.
KnnGraph build_knn_bruteforce(const PointCloud& cloud, std::size_t k);

/// kd-tree construction; list-for-list identical to the brute-force build.
KnnGraph build_knn_indexed(const PointCloud& cloud, std::size_t k);

/// Debug dump, one line per node: `i: j0 j1 ... j(k-1)`.
void write_graph(std::ostream& out, const KnnGraph& graph);

/// out[i][j] = features[neighbors(i)[j]].
template <class T>
Tensor3<T> gather_neighbors(const KnnGraph& graph, const Matrix<T>& features);

/// Fused gather + neighborhood max-pool. Equal to
/// neighborhood_maxpool(gather_neighbors(graph, features)) without
/// materializing the N x k x C tensor; cache.argmax holds neighbor positions.
template <class T>
Matrix<T> graph_maxpool(const KnnGraph& graph, const Matrix<T>& features, PoolIndexCache* cache = nullptr);

/// Scatter-adds pooled gradients back onto the source feature rows.
template <class T>
Matrix<T> graph_maxpool_backward(const KnnGraph& graph, const PoolIndexCache& cache, const Matrix<T>& grad_out);

}  // namespace mlgcn
