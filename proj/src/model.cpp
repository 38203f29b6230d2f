#include "mlgcn/model.hpp"

#include <tuple>

#include "mlgcn/error.hpp"
#include "mlgcn/rng.hpp"

namespace mlgcn {

template <class T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t b = 0; b < cfg_.gnn_blocks.size(); ++b) {
    const auto& bc = cfg_.gnn_blocks[b];
    const auto prefix = "block" + std::to_string(b) + ".";
    GnnBlockLayers<T> layers{DenseLayer<T>(prefix + "f0", 3, bc.f0_channels), {}};
    for (std::size_t t = 0; t < bc.gcn_blocks.size(); ++t) {
      const auto& g = bc.gcn_blocks[t];
      layers.gcn.emplace_back(prefix + "gcn" + std::to_string(t + 1), g.in_channels, g.out_channels);
    }
    blocks_.push_back(std::move(layers));
  }
  trunk_ = DenseLayer<T>("trunk", cfg_.trunk_in_channels(), cfg_.trunk_out_channels);

  std::size_t width = cfg_.trunk_out_channels;
  for (std::size_t h = 0; h < cfg_.classifier_hidden.size(); ++h) {
    classifier_.emplace_back("classifier" + std::to_string(h), width, cfg_.classifier_hidden[h]);
    width = cfg_.classifier_hidden[h];
  }
  classifier_.emplace_back("classifier" + std::to_string(cfg_.classifier_hidden.size()), width, cfg_.num_classes,
                           Activation::kIdentity);

  if (cfg_.segmentation) {
    width = 2 * cfg_.trunk_out_channels;
    const auto& hidden = cfg_.segmentation->hidden;
    for (std::size_t h = 0; h < hidden.size(); ++h) {
      seg_head_.emplace_back("segmentation" + std::to_string(h), width, hidden[h]);
      width = hidden[h];
    }
    seg_head_.emplace_back("segmentation" + std::to_string(hidden.size()), width, cfg_.segmentation->num_parts,
                           Activation::kIdentity);
  }

  std::uint64_t layer_index = 0;
  for_each_layer([&](DenseLayer<T>& l) { l.init_kaiming(derive_seed(seed, {layer_index++})); });
}

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_layer([&](const DenseLayer<T>& l) { n += l.parameter_count(); });
  return n;
}

template <class T>
void Model<T>::zero_grad() {
  for_each_layer([](DenseLayer<T>& l) { l.zero_grad(); });
}

template <class T>
Matrix<T> points_to_matrix(const PointCloud& cloud) {
  Matrix<T> m(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) m(i, d) = static_cast<T>(cloud[i][d]);
  }
  return m;
}

template <class T>
Matrix<T> gcn_block_forward(const DenseLayer<T>& layer, const GcnBlockConfig& cfg, const KnnGraph* graph,
                            const Matrix<T>& y_star_prev, GcnBlockCache<T>* cache) {
  if (y_star_prev.cols() != cfg.in_channels)
    fail(ErrorCode::kShapeMismatch, layer.name + ": input has " + std::to_string(y_star_prev.cols()) +
                                        " channels, block expects " + std::to_string(cfg.in_channels));
  auto z = dense_forward(layer, y_star_prev, cache ? &cache->dense : nullptr);
  Matrix<T> y = graph ? graph_maxpool(*graph, z, cache ? &cache->pool : nullptr) : std::move(z);
  return cfg.is_last ? y : concat_channels(y, y_star_prev);
}

template <class T>
Matrix<T> gcn_block_backward(DenseLayer<T>& layer, const GcnBlockConfig& cfg, const KnnGraph* graph,
                             const GcnBlockCache<T>& cache, const Matrix<T>& grad_out) {
  Matrix<T> grad_y, grad_skip;
  if (cfg.is_last) {
    grad_y = grad_out;
  } else {
    std::tie(grad_y, grad_skip) = split_channels(grad_out, cfg.out_channels);
  }
  auto grad_z = graph ? graph_maxpool_backward(*graph, cache.pool, grad_y) : std::move(grad_y);
  auto grad_in = dense_backward(layer, cache.dense, grad_z);
  if (!cfg.is_last) {
    auto dst = grad_in.values();
    auto src = grad_skip.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return grad_in;
}

template <class T>
Matrix<T> gnn_block_forward(const GnnBlockLayers<T>& layers, const GnnBlockConfig& cfg, const PointCloud& cloud,
                            GnnBlockCache<T>* cache, const ForwardOptions& opts) {
  if (cfg.k > cloud.size())
    fail(ErrorCode::kInvalidK, "k=" + std::to_string(cfg.k) + " exceeds point count " + std::to_string(cloud.size()));
  auto build = [&]() {
    return std::make_shared<const KnnGraph>(opts.bruteforce_knn ? build_knn_bruteforce(cloud, cfg.k)
                                                                : build_knn_indexed(cloud, cfg.k));
  };

  GnnBlockCache<T> local;
  GnnBlockCache<T>& c = cache ? *cache : local;
  c.graphs.clear();
  c.gcn.assign(cfg.gcn_blocks.size(), {});

  std::shared_ptr<const KnnGraph> shared;
  if (cfg.k > 0 && opts.graph_policy == GraphPolicy::kShared) shared = build();

  auto y = dense_forward(layers.f0, points_to_matrix<T>(cloud), cache ? &c.f0 : nullptr);
  for (std::size_t t = 0; t < cfg.gcn_blocks.size(); ++t) {
    std::shared_ptr<const KnnGraph> graph;
    if (cfg.k > 0) graph = opts.graph_policy == GraphPolicy::kShared ? shared : build();
    y = gcn_block_forward(layers.gcn[t], cfg.gcn_blocks[t], graph.get(), y, cache ? &c.gcn[t] : nullptr);
    if (cfg.k > 0) c.graphs.push_back(std::move(graph));
  }
  return y;
}

template <class T>
void gnn_block_backward(GnnBlockLayers<T>& layers, const GnnBlockConfig& cfg, const GnnBlockCache<T>& cache,
                        const Matrix<T>& grad_out) {
  if (cache.gcn.size() != cfg.gcn_blocks.size() || (cfg.k > 0 && cache.graphs.size() != cfg.gcn_blocks.size()))
    fail(ErrorCode::kMissingForwardCache, "gnn block");
  Matrix<T> g = grad_out;
  for (std::size_t t = cfg.gcn_blocks.size(); t-- > 0;) {
    const KnnGraph* graph = cfg.k > 0 ? cache.graphs[t].get() : nullptr;
    g = gcn_block_backward(layers.gcn[t], cfg.gcn_blocks[t], graph, cache.gcn[t], g);
  }
  dense_backward(layers.f0, cache.f0, g);
}

template <class T>
Matrix<T> trunk_forward(const Model<T>& model, const PointCloud& cloud, ForwardCache<T>* cache,
                        const ForwardOptions& opts) {
  const auto& cfg = model.config();
  if (cache) {
    cache->blocks.assign(cfg.gnn_blocks.size(), {});
    cache->n_points = cloud.size();
  }
  Matrix<T> concat;
  for (std::size_t b = 0; b < cfg.gnn_blocks.size(); ++b) {
    auto out = gnn_block_forward(model.blocks()[b], cfg.gnn_blocks[b], cloud, cache ? &cache->blocks[b] : nullptr,
                                 opts);
    concat = concat_channels(concat, out);
  }
  return dense_forward(model.trunk(), concat, cache ? &cache->trunk : nullptr);
}

template <class T>
Matrix<T> global_features(const Model<T>& model, const PointCloud& cloud) {
  return global_maxpool(trunk_forward(model, cloud));
}

namespace {

template <class T>
Matrix<T> run_head(const std::vector<DenseLayer<T>>& head, Matrix<T> x, std::vector<DenseCache<T>>* caches) {
  if (caches) caches->assign(head.size(), {});
  for (std::size_t i = 0; i < head.size(); ++i) x = dense_forward(head[i], x, caches ? &(*caches)[i] : nullptr);
  return x;
}

template <class T>
Matrix<T> head_backward(std::vector<DenseLayer<T>>& head, const std::vector<DenseCache<T>>& caches, Matrix<T> g) {
  if (caches.size() != head.size()) fail(ErrorCode::kMissingForwardCache, "head");
  for (std::size_t i = head.size(); i-- > 0;) g = dense_backward(head[i], caches[i], g);
  return g;
}

template <class T>
Matrix<T> repeat_rows(const Matrix<T>& row, std::size_t n) {
  Matrix<T> out(n, row.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(row.row(0).begin(), row.row(0).end(), out.row(i).begin());
  return out;
}

}  // namespace

template <class T>
ModelOutputs<T> model_forward(const Model<T>& model, const PointCloud& cloud, bool classification, bool segmentation,
                              ForwardCache<T>* cache, const ForwardOptions& opts) {
  const auto& cfg = model.config();
  if (segmentation && !cfg.segmentation) fail(ErrorCode::kHeadNotConfigured, "model has no segmentation head");

  auto gamma = trunk_forward(model, cloud, cache, opts);
  auto pooled = global_maxpool(gamma, cache ? &cache->global_pool : nullptr);

  ModelOutputs<T> out;
  if (classification) {
    auto logits = run_head(model.classifier(), pooled, cache ? &cache->classifier : nullptr);
    out.class_logits.assign(logits.values().begin(), logits.values().end());
  }
  if (segmentation) {
    auto features = concat_channels(repeat_rows(pooled, gamma.rows()), gamma);
    out.part_logits = run_head(model.segmentation_head(), std::move(features), cache ? &cache->segmentation : nullptr);
  }
  if (cache) {
    cache->has_classifier = classification;
    cache->has_segmentation = segmentation;
  }
  return out;
}

template <class T>
std::vector<T> classify(const Model<T>& model, const PointCloud& cloud) {
  return model_forward(model, cloud, true, false).class_logits;
}

template <class T>
Matrix<T> segment(const Model<T>& model, const PointCloud& cloud) {
  return model_forward(model, cloud, false, true).part_logits;
}

template <class T>
void model_backward(Model<T>& model, const ForwardCache<T>& cache, const std::vector<T>* class_logit_grad,
                    const Matrix<T>* part_logit_grad) {
  const auto& cfg = model.config();
  if (!cache.trunk.valid || !cache.global_pool.valid) fail(ErrorCode::kMissingForwardCache, "model");
  const std::size_t n = cache.n_points, width = cfg.trunk_out_channels;

  Matrix<T> grad_gamma(n, width);
  Matrix<T> grad_pooled(1, width);

  if (class_logit_grad) {
    if (!cache.has_classifier) fail(ErrorCode::kMissingForwardCache, "classifier head was not run");
    if (class_logit_grad->size() != cfg.num_classes) fail(ErrorCode::kShapeMismatch, "class logit gradient size");
    Matrix<T> g(1, cfg.num_classes);
    std::copy(class_logit_grad->begin(), class_logit_grad->end(), g.values().begin());
    grad_pooled = head_backward(model.classifier(), cache.classifier, std::move(g));
  }
  if (part_logit_grad) {
    if (!cache.has_segmentation) fail(ErrorCode::kMissingForwardCache, "segmentation head was not run");
    auto g = head_backward(model.segmentation_head(), cache.segmentation, *part_logit_grad);
    auto [grad_repeat, grad_direct] = split_channels(g, width);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < width; ++c) grad_pooled(0, c) += grad_repeat(i, c);
    }
    grad_gamma = std::move(grad_direct);
  }

  auto from_pool = global_maxpool_backward(cache.global_pool, grad_pooled);
  {
    auto dst = grad_gamma.values();
    auto src = from_pool.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  auto grad_concat = dense_backward(model.trunk(), cache.trunk, grad_gamma);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < cfg.gnn_blocks.size(); ++b) {
    const std::size_t w = cfg.gnn_blocks[b].output_width();
    Matrix<T> slice(n, w);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = grad_concat.row(i).subspan(offset, w);
      std::copy(src.begin(), src.end(), slice.row(i).begin());
    }
    gnn_block_backward(model.blocks()[b], cfg.gnn_blocks[b], cache.blocks[b], slice);
    offset += w;
  }
}

#define MLGCN_INSTANTIATE_MODEL(T)                                                                              \
  template class Model<T>;                                                                                      \
  template Matrix<T> points_to_matrix<T>(const PointCloud&);                                                    \
  template Matrix<T> gcn_block_forward<T>(const DenseLayer<T>&, const GcnBlockConfig&, const KnnGraph*,         \
                                          const Matrix<T>&, GcnBlockCache<T>*);                                 \
  template Matrix<T> gcn_block_backward<T>(DenseLayer<T>&, const GcnBlockConfig&, const KnnGraph*,              \
                                           const GcnBlockCache<T>&, const Matrix<T>&);                          \
  template Matrix<T> gnn_block_forward<T>(const GnnBlockLayers<T>&, const GnnBlockConfig&, const PointCloud&,   \
                                          GnnBlockCache<T>*, const ForwardOptions&);                            \
  template void gnn_block_backward<T>(GnnBlockLayers<T>&, const GnnBlockConfig&, const GnnBlockCache<T>&,       \
                                      const Matrix<T>&);                                                        \
  template Matrix<T> trunk_forward<T>(const Model<T>&, const PointCloud&, ForwardCache<T>*, const ForwardOptions&); \
  template Matrix<T> global_features<T>(const Model<T>&, const PointCloud&);                                    \
  template ModelOutputs<T> model_forward<T>(const Model<T>&, const PointCloud&, bool, bool, ForwardCache<T>*,   \
                                            const ForwardOptions&);                                             \
  template std::vector<T> classify<T>(const Model<T>&, const PointCloud&);                                      \
  template Matrix<T> segment<T>(const Model<T>&, const PointCloud&);                                            \
  template void model_backward<T>(Model<T>&, const ForwardCache<T>&, const std::vector<T>*, const Matrix<T>*);

MLGCN_INSTANTIATE_MODEL(float)
MLGCN_INSTANTIATE_MODEL(double)

#undef MLGCN_INSTANTIATE_MODEL

}  // namespace mlgcn
