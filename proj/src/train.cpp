#include "mlgcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "mlgcn/error.hpp"
#include "mlgcn/parallel.hpp"
#include "mlgcn/rng.hpp"

namespace mlgcn {

void TrainConfig::validate() const {
  if (batch_size < 1) fail(ErrorCode::kInvalidConfig, "batch_size must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) fail(ErrorCode::kInvalidConfig, "decay must be in (0, 1]");
  if (!(lr > 0.0)) fail(ErrorCode::kInvalidConfig, "learning rate must be positive");
  if (threads < 1) fail(ErrorCode::kInvalidConfig, "threads must be >= 1");
  if (augment_options.jitter_sigma < 0.0 || augment_options.jitter_clip < 0.0)
    fail(ErrorCode::kInvalidConfig, "jitter parameters must be non-negative");
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch <= cfg.decay_start_epoch) return cfg.lr;
  return cfg.lr * std::pow(cfg.decay, static_cast<double>(epoch - cfg.decay_start_epoch));
}

// ---- losses ---------------------------------------------------------------

template <class T>
LossResult<T> cross_entropy_loss(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size())
    fail(ErrorCode::kLabelOutOfRange, "label " + std::to_string(label) + " for " + std::to_string(logits.size()) +
                                          " classes");
  const T max = *std::max_element(logits.begin(), logits.end());
  T sum{0};
  LossResult<T> r;
  r.grad.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    r.grad[c] = std::exp(logits[c] - max);
    sum += r.grad[c];
  }
  for (auto& g : r.grad) g /= sum;
  r.grad[label] -= T{1};
  r.loss = std::log(sum) + max - logits[label];
  return r;
}

template <class T>
std::pair<T, Matrix<T>> segmentation_loss(const Matrix<T>& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) fail(ErrorCode::kLabelLengthMismatch, "segmentation_loss");
  Matrix<T> grad(logits.rows(), logits.cols());
  T total{0};
  const T scale = T{1} / static_cast<T>(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] < 0) fail(ErrorCode::kLabelOutOfRange, "negative part label");
    auto r = cross_entropy_loss<T>(logits.row(i), static_cast<std::size_t>(labels[i]));
    total += r.loss;
    auto g = grad.row(i);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = r.grad[c] * scale;
  }
  return {total * scale, std::move(grad)};
}

// ---- optimizer ------------------------------------------------------------

template <class T>
void adam_step(AdamState<T>& state, std::span<T> params, std::span<const T> grads, double lr,
               const AdamOptions& opts) {
  if (params.size() != grads.size()) fail(ErrorCode::kShapeMismatch, "adam_step: params vs grads");
  if (state.steps == 0 && state.m.empty()) {
    state.m.assign(params.size(), T{0});
    state.v.assign(params.size(), T{0});
  }
  if (state.m.size() != params.size()) fail(ErrorCode::kShapeMismatch, "adam_step: state vs params");
  ++state.steps;
  const double c1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.steps));
  const T b1 = static_cast<T>(opts.beta1), b2 = static_cast<T>(opts.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    const double m_hat = static_cast<double>(state.m[i]) / c1;
    const double v_hat = static_cast<double>(state.v[i]) / c2;
    params[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + opts.eps));
  }
}

template <class T>
void ModelOptimizer<T>::step(Model<T>& model, double lr) {
  std::size_t i = 0;
  model.for_each_layer([&](DenseLayer<T>& l) {
    if (weights_.size() <= i) {
      weights_.emplace_back();
      biases_.emplace_back();
    }
    adam_step<T>(weights_[i], l.weight.values(), l.grad_weight.values(), lr, opts_);
    adam_step<T>(biases_[i], l.bias, l.grad_bias, lr, opts_);
    ++i;
  });
  ++steps_;
}

// ---- loop -----------------------------------------------------------------

namespace {

struct SampleStats {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

template <class T>
SampleStats forward_backward(Model<T>& model, const PointCloud& cloud, const LabeledSample& sample, Task task) {
  ForwardCache<T> cache;
  SampleStats st;
  if (task == Task::kClassification) {
    auto out = model_forward(model, cloud, true, false, &cache);
    auto loss = cross_entropy_loss<T>(out.class_logits, static_cast<std::size_t>(sample.class_label));
    model_backward(model, cache, &loss.grad, static_cast<const Matrix<T>*>(nullptr));
    st.loss = static_cast<double>(loss.loss);
    st.correct = argmax<T>(out.class_logits) == static_cast<std::size_t>(sample.class_label);
    st.count = 1;
  } else {
    auto out = model_forward(model, cloud, false, true, &cache);
    const auto& labels = *sample.part_labels;
    auto [loss, grad] = segmentation_loss(out.part_logits, std::span<const int>(labels));
    model_backward(model, cache, static_cast<const std::vector<T>*>(nullptr), &grad);
    st.loss = static_cast<double>(loss);
    for (std::size_t i = 0; i < labels.size(); ++i)
      st.correct += argmax<T>(out.part_logits.row(i)) == static_cast<std::size_t>(labels[i]);
    st.count = labels.size();
  }
  return st;
}

template <class T>
void check_labels(const ModelConfig& cfg, const std::vector<LabeledSample>& samples, Task task) {
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& smp = samples[s];
    if (smp.class_label < 0 || static_cast<std::size_t>(smp.class_label) >= cfg.num_classes) {
      fail(ErrorCode::kLabelOutOfRange, "sample " + std::to_string(s) + ": class " +
                                            std::to_string(smp.class_label) + " not in [0, " +
                                            std::to_string(cfg.num_classes) + ")");
    }
    if (task == Task::kSegmentation) {
      if (!cfg.segmentation) fail(ErrorCode::kHeadNotConfigured, "segmentation task needs a segmentation head");
      if (!smp.part_labels) fail(ErrorCode::kLabelOutOfRange, "sample " + std::to_string(s) + " has no part labels");
      if (smp.part_labels->size() != smp.cloud.size())
        fail(ErrorCode::kLabelLengthMismatch, "sample " + std::to_string(s));
      for (int p : *smp.part_labels) {
        if (p < 0 || static_cast<std::size_t>(p) >= cfg.segmentation->num_parts)
          fail(ErrorCode::kLabelOutOfRange, "sample " + std::to_string(s) + ": part " + std::to_string(p));
      }
    }
  }
}

template <class T>
void add_grads(Model<T>& dst, const Model<T>& src) {
  std::vector<const DenseLayer<T>*> layers;
  src.for_each_layer([&](const DenseLayer<T>& l) { layers.push_back(&l); });
  std::size_t i = 0;
  dst.for_each_layer([&](DenseLayer<T>& l) {
    auto gw = l.grad_weight.values();
    auto sw = layers[i]->grad_weight.values();
    for (std::size_t j = 0; j < gw.size(); ++j) gw[j] += sw[j];
    for (std::size_t j = 0; j < l.grad_bias.size(); ++j) l.grad_bias[j] += layers[i]->grad_bias[j];
    ++i;
  });
}

template <class T>
void scale_grads(Model<T>& model, T factor) {
  model.for_each_layer([&](DenseLayer<T>& l) {
    for (auto& g : l.grad_weight.values()) g *= factor;
    for (auto& g : l.grad_bias) g *= factor;
  });
}

}  // namespace

template <class T>
T accumulate_gradients(Model<T>& model, std::span<const LabeledSample> samples, Task task) {
  T total{0};
  for (const auto& s : samples) total += static_cast<T>(forward_backward(model, s.cloud, s, task).loss);
  return total;
}

template <class T>
std::vector<EpochLog> train_loop(Model<T>& model, const std::vector<LabeledSample>& train, const TrainConfig& cfg,
                                 const std::vector<LabeledSample>* validation, const EpochCallback<T>& on_epoch) {
  cfg.validate();
  if (train.empty()) fail(ErrorCode::kEmptyDataset, "training set is empty");
  check_labels<T>(model.config(), train, cfg.task);
  if (validation) check_labels<T>(model.config(), *validation, cfg.task);

  ModelOptimizer<T> optimizer;
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(train.size());
  std::vector<Model<T>> replicas;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr_schedule(cfg, epoch);

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, counted = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t batch = end - start;
      const std::size_t workers = std::min(cfg.threads, batch);

      auto run_sample = [&](Model<T>& target, std::size_t pos) {
        const auto idx = order[pos];
        const auto& sample = train[idx];
        if (!cfg.augment) return forward_backward(target, sample.cloud, sample, cfg.task);
        auto cloud = augment(sample.cloud, derive_seed(cfg.seed, {epoch, idx, 0xa6}), cfg.augment_options);
        return forward_backward(target, cloud, sample, cfg.task);
      };

      model.zero_grad();
      std::vector<SampleStats> stats(batch);
      if (workers == 1) {
        for (std::size_t p = start; p < end; ++p) stats[p - start] = run_sample(model, p);
      } else {
        replicas.assign(workers, model);
        parallel_for(batch, workers, [&](std::size_t b, std::size_t e, std::size_t w) {
          for (std::size_t p = b; p < e; ++p) stats[p] = run_sample(replicas[w], start + p);
        });
        for (const auto& r : replicas) add_grads(model, r);
      }
      scale_grads(model, T{1} / static_cast<T>(batch));
      optimizer.step(model, entry.lr);

      for (const auto& st : stats) {
        loss_sum += st.loss;
        correct += st.correct;
        counted += st.count;
      }
    }
    entry.train_loss = loss_sum / static_cast<double>(train.size());
    entry.train_acc = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;

    if (validation && !validation->empty()) {
      if (cfg.task == Task::kClassification) {
        entry.val_acc = evaluate_classification(model, *validation, cfg.threads).overall_accuracy;
      } else {
        auto rep = evaluate_segmentation(model, *validation, cfg.threads, category_part_sets(train));
        entry.val_acc = rep.overall_accuracy;
        entry.val_class_miou = rep.class_miou;
        entry.val_instance_miou = rep.instance_miou;
      }
    }
    log.push_back(entry);
    if (on_epoch) on_epoch(entry, model);
  }
  return log;
}

// ---- evaluation -----------------------------------------------------------

template <class T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

EvalReport classification_report(std::span<const std::size_t> predictions, std::span<const int> labels,
                                  std::size_t num_classes) {
  if (predictions.size() != labels.size()) fail(ErrorCode::kShapeMismatch, "predictions vs labels");
  EvalReport rep;
  rep.task = Task::kClassification;
  rep.samples = labels.size();
  rep.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  rep.class_support.assign(num_classes, 0);
  rep.per_class_accuracy.assign(num_classes, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      fail(ErrorCode::kLabelOutOfRange, "class " + std::to_string(labels[i]));
    if (predictions[i] >= num_classes) fail(ErrorCode::kLabelOutOfRange, "prediction out of range");
    const auto truth = static_cast<std::size_t>(labels[i]);
    ++rep.confusion[truth][predictions[i]];
    ++rep.class_support[truth];
    correct += predictions[i] == truth;
  }
  rep.overall_accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (rep.class_support[c] == 0) continue;
    rep.per_class_accuracy[c] =
        static_cast<double>(rep.confusion[c][c]) / static_cast<double>(rep.class_support[c]);
    rep.mean_class_accuracy += rep.per_class_accuracy[c];
    ++present;
  }
  if (present) rep.mean_class_accuracy /= static_cast<double>(present);
  return rep;
}

double shape_iou(std::span<const int> predicted, std::span<const int> truth, std::span<const int> part_set) {
  if (predicted.size() != truth.size()) fail(ErrorCode::kShapeMismatch, "shape_iou: prediction length");
  if (part_set.empty()) return 1.0;
  // Extended precision so the mean rounds once: {1/2, 2/3} gives exactly 7/12.
  long double sum = 0.0L;
  for (int part : part_set) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i] == part, t = truth[i] == part;
      inter += p && t;
      uni += p || t;
    }
    sum += uni == 0 ? 1.0L : static_cast<long double>(inter) / static_cast<long double>(uni);
  }
  return static_cast<double>(sum / static_cast<long double>(part_set.size()));
}

EvalReport segmentation_report(const std::vector<SegmentedShape>& shapes,
                               const std::map<int, std::vector<int>>& category_parts) {
  EvalReport rep;
  rep.task = Task::kSegmentation;
  rep.samples = shapes.size();
  std::map<int, std::pair<double, std::size_t>> per_category;
  std::size_t points = 0, correct = 0;
  double iou_sum = 0.0;
  for (const auto& s : shapes) {
    std::vector<int> parts;
    if (auto it = category_parts.find(s.category); it != category_parts.end()) {
      parts = it->second;
    } else {
      std::set<int> seen(s.truth.begin(), s.truth.end());
      seen.insert(s.predicted.begin(), s.predicted.end());
      parts.assign(seen.begin(), seen.end());
    }
    const double iou = shape_iou(s.predicted, s.truth, parts);
    iou_sum += iou;
    auto& [sum, count] = per_category[s.category];
    sum += iou;
    ++count;
    for (std::size_t i = 0; i < s.truth.size(); ++i) correct += s.predicted[i] == s.truth[i];
    points += s.truth.size();
  }
  if (!shapes.empty()) rep.instance_miou = iou_sum / static_cast<double>(shapes.size());
  for (const auto& [cat, acc] : per_category) {
    rep.category_miou[cat] = acc.first / static_cast<double>(acc.second);
    rep.class_miou += rep.category_miou[cat];
  }
  if (!per_category.empty()) rep.class_miou /= static_cast<double>(per_category.size());
  rep.overall_accuracy = points ? static_cast<double>(correct) / static_cast<double>(points) : 0.0;
  return rep;
}

std::map<int, std::vector<int>> category_part_sets(const std::vector<LabeledSample>& samples) {
  std::map<int, std::set<int>> sets;
  for (const auto& s : samples) {
    if (s.part_labels) sets[s.class_label].insert(s.part_labels->begin(), s.part_labels->end());
  }
  std::map<int, std::vector<int>> out;
  for (const auto& [cat, parts] : sets) out[cat].assign(parts.begin(), parts.end());
  return out;
}

template <class T>
EvalReport evaluate_classification(const Model<T>& model, const std::vector<LabeledSample>& samples,
                                   std::size_t threads) {
  const auto classes = model.config().num_classes;
  std::vector<int> labels;
  for (const auto& s : samples) {
    if (s.class_label < 0 || static_cast<std::size_t>(s.class_label) >= classes)
      fail(ErrorCode::kLabelOutOfRange, "class " + std::to_string(s.class_label) + " but model has " +
                                            std::to_string(classes) + " classes");
    labels.push_back(s.class_label);
  }
  std::vector<std::size_t> predictions(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) predictions[i] = argmax<T>(classify(model, samples[i].cloud));
  });
  return classification_report(predictions, labels, classes);
}

template <class T>
EvalReport evaluate_segmentation(const Model<T>& model, const std::vector<LabeledSample>& samples,
                                 std::size_t threads, std::map<int, std::vector<int>> category_parts) {
  const auto& cfg = model.config();
  if (!cfg.segmentation) fail(ErrorCode::kHeadNotConfigured, "model has no segmentation head");
  for (const auto& s : samples) {
    if (!s.part_labels) fail(ErrorCode::kLabelOutOfRange, "sample without part labels");
    for (int p : *s.part_labels) {
      if (p < 0 || static_cast<std::size_t>(p) >= cfg.segmentation->num_parts)
        fail(ErrorCode::kLabelOutOfRange, "part " + std::to_string(p));
    }
  }
  if (category_parts.empty()) category_parts = category_part_sets(samples);

  std::vector<SegmentedShape> shapes(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = samples[i];
      auto logits = segment(model, s.cloud);
      const auto it = category_parts.find(s.class_label);
      auto& shape = shapes[i];
      shape.category = s.class_label;
      shape.truth = *s.part_labels;
      shape.predicted.resize(logits.rows());
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        if (it == category_parts.end() || it->second.empty()) {
          shape.predicted[r] = static_cast<int>(argmax<T>(row));
        } else {
          int best = it->second.front();
          for (int p : it->second) {
            if (row[static_cast<std::size_t>(p)] > row[static_cast<std::size_t>(best)]) best = p;
          }
          shape.predicted[r] = best;
        }
      }
    }
  });
  return segmentation_report(shapes, category_parts);
}

#define MLGCN_INSTANTIATE_TRAIN(T)                                                                             \
  template LossResult<T> cross_entropy_loss<T>(std::span<const T>, std::size_t);                               \
  template std::pair<T, Matrix<T>> segmentation_loss<T>(const Matrix<T>&, std::span<const int>);               \
  template void adam_step<T>(AdamState<T>&, std::span<T>, std::span<const T>, double, const AdamOptions&);     \
  template class ModelOptimizer<T>;                                                                            \
  template T accumulate_gradients<T>(Model<T>&, std::span<const LabeledSample>, Task);                          \
  template std::vector<EpochLog> train_loop<T>(Model<T>&, const std::vector<LabeledSample>&, const TrainConfig&, \
                                               const std::vector<LabeledSample>*, const EpochCallback<T>&);    \
  template std::size_t argmax<T>(std::span<const T>);                                                          \
  template EvalReport evaluate_classification<T>(const Model<T>&, const std::vector<LabeledSample>&, std::size_t); \
  template EvalReport evaluate_segmentation<T>(const Model<T>&, const std::vector<LabeledSample>&, std::size_t, \
                                               std::map<int, std::vector<int>>);

MLGCN_INSTANTIATE_TRAIN(float)
MLGCN_INSTANTIATE_TRAIN(double)

#undef MLGCN_INSTANTIATE_TRAIN

}  // namespace mlgcn
