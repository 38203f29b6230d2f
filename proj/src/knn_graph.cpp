#include "mlgcn/knn_graph.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <queue>

#include "mlgcn/error.hpp"

namespace mlgcn {

namespace {

struct Candidate {
  double d2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const noexcept {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

inline double squared_distance(const Point3& a, const Point3& b) noexcept {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// The query point ranks ahead of any coincident duplicate.
constexpr double kSelfDistance = -1.0;

void check_k(const PointCloud& cloud, std::size_t k) {
  if (k < 1 || k > cloud.size()) {
    fail(ErrorCode::kInvalidK,
         "k=" + std::to_string(k) + " outside [1, " + std::to_string(cloud.size()) + "]");
  }
}

class KdTree {
 public:
  explicit KdTree(std::span<const Point3> pts) : pts_(pts), order_(pts.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * pts.size() / kLeafSize + 2);
    build(0, order_.size());
  }

  // Fills `out` with the k best candidates in ascending (d2, index) order.
  void query(std::uint32_t self, std::size_t k, std::vector<Candidate>& heap, std::span<std::uint32_t> out) const {
    heap.clear();
    search(0, self, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    for (std::size_t j = 0; j < k; ++j) out[j] = heap[j].index;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    Point3 lo = pts_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], pts_[order_[i]][d]);
        hi[d] = std::max(hi[d], pts_[order_[i]][d]);
      }
    }
    int axis = 0;
    for (int d = 1; d < 3; ++d) {
      if (hi[d] - lo[d] > hi[axis] - lo[axis]) axis = d;
    }
    if (hi[axis] == lo[axis]) return id;  // all coincident: stay a leaf

    const std::size_t mid = begin + (end - begin) / 2;
    auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
    std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::uint32_t a, std::uint32_t b) { return pts_[a][axis] < pts_[b][axis]; });
    const double split = pts_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void offer(std::vector<Candidate>& heap, std::size_t k, Candidate c) const {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::size_t id, std::uint32_t self, std::size_t k, std::vector<Candidate>& heap) const {
    const Node& node = nodes_[id];
    const Point3& q = pts_[self];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const auto idx = order_[i];
        offer(heap, k, {idx == self ? kSelfDistance : squared_distance(q, pts_[idx]), idx});
      }
      return;
    }
    // Left holds coordinates <= split, right holds >= split.
    const double diff = q[node.axis] - node.split;
    const std::size_t near = diff <= 0.0 ? node.left : node.right;
    const std::size_t far = diff <= 0.0 ? node.right : node.left;
    search(near, self, k, heap);
    // Any point across the plane is at least |diff| away on this axis, and the
    // rounded squared distances respect that bound, so a strict test is exact
    // even under the index tie-break.
    if (heap.size() < k || diff * diff <= heap.front().d2) search(far, self, k, heap);
  }

  std::span<const Point3> pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace

KnnGraph::KnnGraph(std::size_t n_nodes, std::size_t k, std::vector<std::uint32_t> neighbors)
    : n_(n_nodes), k_(k), index_(std::move(neighbors)) {
  if (index_.size() != n_ * k_) fail(ErrorCode::kShapeMismatch, "KnnGraph: neighbor table size");
}

KnnGraph build_knn_bruteforce(const PointCloud& cloud, std::size_t k) {
  check_k(cloud, k);
  const std::size_t n = cloud.size();
  std::vector<std::uint32_t> index(n * k);
  std::vector<Candidate> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      all[j] = {j == i ? kSelfDistance : squared_distance(cloud[i], cloud[j]), static_cast<std::uint32_t>(j)};
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    for (std::size_t j = 0; j < k; ++j) index[i * k + j] = all[j].index;
  }
  return KnnGraph(n, k, std::move(index));
}

KnnGraph build_knn_indexed(const PointCloud& cloud, std::size_t k) {
  check_k(cloud, k);
  const std::size_t n = cloud.size();
  KdTree tree(cloud.points());
  std::vector<std::uint32_t> index(n * k);
  std::vector<Candidate> heap;
  heap.reserve(k);
  for (std::size_t i = 0; i < n; ++i)
    tree.query(static_cast<std::uint32_t>(i), k, heap, std::span<std::uint32_t>(index.data() + i * k, k));
  return KnnGraph(n, k, std::move(index));
}

void write_graph(std::ostream& out, const KnnGraph& graph) {
  for (std::size_t i = 0; i < graph.n_nodes(); ++i) {
    out << i << ':';
    for (auto j : graph.neighbors(i)) out << ' ' << j;
    out << '\n';
  }
}

template <class T>
Tensor3<T> gather_neighbors(const KnnGraph& graph, const Matrix<T>& features) {
  if (features.rows() != graph.n_nodes())
    fail(ErrorCode::kShapeMismatch, "gather_neighbors: feature rows != graph nodes");
  const std::size_t c = features.cols();
  Tensor3<T> out(graph.n_nodes(), graph.k(), c);
  for (std::size_t i = 0; i < graph.n_nodes(); ++i) {
    auto nb = graph.neighbors(i);
    for (std::size_t j = 0; j < nb.size(); ++j) {
      auto src = features.row(nb[j]);
      std::copy(src.begin(), src.end(), &out(i, j, 0));
    }
  }
  return out;
}

template <class T>
Matrix<T> graph_maxpool(const KnnGraph& graph, const Matrix<T>& features, PoolIndexCache* cache) {
  if (features.rows() != graph.n_nodes())
    fail(ErrorCode::kShapeMismatch, "graph_maxpool: feature rows != graph nodes");
  const std::size_t n = graph.n_nodes(), k = graph.k(), c = features.cols();
  Matrix<T> out(n, c);
  std::vector<std::uint32_t> arg(n * c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto nb = graph.neighbors(i);
    auto o = out.row(i);
    auto first = features.row(nb[0]);
    std::copy(first.begin(), first.end(), o.begin());
    std::uint32_t* a = arg.data() + i * c;
    for (std::size_t j = 1; j < k; ++j) {
      auto r = features.row(nb[j]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (r[ch] > o[ch]) {
          o[ch] = r[ch];
          a[ch] = static_cast<std::uint32_t>(j);
        }
      }
    }
  }
  if (cache) *cache = PoolIndexCache{n, k, c, std::move(arg), true};
  return out;
}

template <class T>
Matrix<T> graph_maxpool_backward(const KnnGraph& graph, const PoolIndexCache& cache, const Matrix<T>& grad_out) {
  if (!cache.valid) fail(ErrorCode::kMissingForwardCache, "graph_maxpool");
  if (grad_out.rows() != cache.rows || grad_out.cols() != cache.channels || cache.rows != graph.n_nodes())
    fail(ErrorCode::kShapeMismatch, "graph_maxpool_backward");
  const std::size_t c = cache.channels;
  Matrix<T> grad(graph.n_nodes(), c);
  for (std::size_t i = 0; i < cache.rows; ++i) {
    auto nb = graph.neighbors(i);
    auto g = grad_out.row(i);
    const std::uint32_t* a = cache.argmax.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) grad(nb[a[ch]], ch) += g[ch];
  }
  return grad;
}

template Tensor3<float> gather_neighbors<float>(const KnnGraph&, const Matrix<float>&);
template Tensor3<double> gather_neighbors<double>(const KnnGraph&, const Matrix<double>&);
template Matrix<float> graph_maxpool<float>(const KnnGraph&, const Matrix<float>&, PoolIndexCache*);
template Matrix<double> graph_maxpool<double>(const KnnGraph&, const Matrix<double>&, PoolIndexCache*);
template Matrix<float> graph_maxpool_backward<float>(const KnnGraph&, const PoolIndexCache&, const Matrix<float>&);
template Matrix<double> graph_maxpool_backward<double>(const KnnGraph&, const PoolIndexCache&, const Matrix<double>&);

}  // namespace mlgcn
