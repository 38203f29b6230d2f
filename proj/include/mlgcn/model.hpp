#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mlgcn/config.hpp"
#include "mlgcn/knn_graph.hpp"
#include "mlgcn/pointset.hpp"
#include "mlgcn/tensor.hpp"

namespace mlgcn {

template <class T>
struct GnnBlockLayers {
  DenseLayer<T> f0;
  std::vector<DenseLayer<T>> gcn;  // f_1 .. f_l
};

/// Parameters of an MLGCN network. The config is fixed at construction.
template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const noexcept { return cfg_; }

  std::vector<GnnBlockLayers<T>>& blocks() noexcept { return blocks_; }
  const std::vector<GnnBlockLayers<T>>& blocks() const noexcept { return blocks_; }
  DenseLayer<T>& trunk() noexcept { return trunk_; }
  const DenseLayer<T>& trunk() const noexcept { return trunk_; }
  std::vector<DenseLayer<T>>& classifier() noexcept { return classifier_; }
  const std::vector<DenseLayer<T>>& classifier() const noexcept { return classifier_; }
  std::vector<DenseLayer<T>>& segmentation_head() noexcept { return seg_head_; }
  const std::vector<DenseLayer<T>>& segmentation_head() const noexcept { return seg_head_; }

  /// Visits layers in a fixed order (blocks, trunk, classifier, segmentation);
  /// checkpoints and the optimizer rely on this order.
  template <class F>
  void for_each_layer(F&& f) {
    for (auto& b : blocks_) {
      f(b.f0);
      for (auto& g : b.gcn) f(g);
    }
    f(trunk_);
    for (auto& l : classifier_) f(l);
    for (auto& l : seg_head_) f(l);
  }
  template <class F>
  void for_each_layer(F&& f) const {
    const_cast<Model*>(this)->for_each_layer([&](const DenseLayer<T>& l) { f(l); });
  }

  std::size_t parameter_count() const;
  void zero_grad();

  /// Same weights at another precision (gradient checks run at f64).
  template <class U>
  Model<U> cast() const {
    Model<U> out(cfg_, 0);
    std::vector<const DenseLayer<T>*> src;
    for_each_layer([&](const DenseLayer<T>& l) { src.push_back(&l); });
    std::size_t i = 0;
    out.for_each_layer([&](DenseLayer<U>& l) {
      l.weight = cast_matrix<U>(src[i]->weight);
      for (std::size_t j = 0; j < l.bias.size(); ++j) l.bias[j] = static_cast<U>(src[i]->bias[j]);
      ++i;
    });
    return out;
  }

 private:
  ModelConfig cfg_;
  std::vector<GnnBlockLayers<T>> blocks_;
  DenseLayer<T> trunk_;
  std::vector<DenseLayer<T>> classifier_;
  std::vector<DenseLayer<T>> seg_head_;
};

enum class GraphPolicy {
  kShared,              // one graph per GNN block
  kRebuildPerGcnBlock,  // rebuild before every GCN block (reference for the sharing claim)
};

struct ForwardOptions {
  GraphPolicy graph_policy = GraphPolicy::kShared;
  bool bruteforce_knn = false;
};

template <class T>
struct GcnBlockCache {
  DenseCache<T> dense;
  PoolIndexCache pool;
};

template <class T>
struct GnnBlockCache {
  std::vector<std::shared_ptr<const KnnGraph>> graphs;  // one entry per GCN block; empty when k = 0
  DenseCache<T> f0;
  std::vector<GcnBlockCache<T>> gcn;
};

template <class T>
struct ForwardCache {
  std::vector<GnnBlockCache<T>> blocks;
  DenseCache<T> trunk;
  std::size_t n_points = 0;
  PoolIndexCache global_pool;
  std::vector<DenseCache<T>> classifier;
  std::vector<DenseCache<T>> segmentation;
  bool has_classifier = false;
  bool has_segmentation = false;
};

template <class T>
Matrix<T> points_to_matrix(const PointCloud& cloud);

/// One GCN block: z = f_t(y*), then max over graph neighbors (or z itself
/// when `graph` is null), then concat with y* unless the block is last.
template <class T>
Matrix<T> gcn_block_forward(const DenseLayer<T>& layer, const GcnBlockConfig& cfg, const KnnGraph* graph,
                            const Matrix<T>& y_star_prev, GcnBlockCache<T>* cache = nullptr);

/// Returns dL/dy*_(t-1), accumulating layer gradients.
template <class T>
Matrix<T> gcn_block_backward(DenseLayer<T>& layer, const GcnBlockConfig& cfg, const KnnGraph* graph,
                             const GcnBlockCache<T>& cache, const Matrix<T>& grad_out);

template <class T>
Matrix<T> gnn_block_forward(const GnnBlockLayers<T>& layers, const GnnBlockConfig& cfg, const PointCloud& cloud,
                            GnnBlockCache<T>* cache = nullptr, const ForwardOptions& opts = {});

template <class T>
void gnn_block_backward(GnnBlockLayers<T>& layers, const GnnBlockConfig& cfg, const GnnBlockCache<T>& cache,
                        const Matrix<T>& grad_out);

/// Gamma(X): shared MLP over the concatenated GNN block outputs.
template <class T>
Matrix<T> trunk_forward(const Model<T>& model, const PointCloud& cloud, ForwardCache<T>* cache = nullptr,
                        const ForwardOptions& opts = {});

/// max-pool(Gamma(X)), the vector fed to the classifier (1 x trunk width).
template <class T>
Matrix<T> global_features(const Model<T>& model, const PointCloud& cloud);

template <class T>
struct ModelOutputs {
  std::vector<T> class_logits;  // empty unless requested
  Matrix<T> part_logits;        // N x num_parts, empty unless requested
};

/// Shared trunk evaluated once, then whichever heads are requested.
template <class T>
ModelOutputs<T> model_forward(const Model<T>& model, const PointCloud& cloud, bool classification, bool segmentation,
                              ForwardCache<T>* cache = nullptr, const ForwardOptions& opts = {});

template <class T>
std::vector<T> classify(const Model<T>& model, const PointCloud& cloud);

/// Throws HeadNotConfigured when the config has no segmentation head.
template <class T>
Matrix<T> segment(const Model<T>& model, const PointCloud& cloud);

/// Accumulates parameter gradients for the given output gradients. Either
/// pointer may be null when that head was not part of the loss.
template <class T>
void model_backward(Model<T>& model, const ForwardCache<T>& cache, const std::vector<T>* class_logit_grad,
                    const Matrix<T>* part_logit_grad);

}  // namespace mlgcn
