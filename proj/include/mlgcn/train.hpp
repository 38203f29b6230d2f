#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mlgcn/model.hpp"
#include "mlgcn/pointset.hpp"

namespace mlgcn {

enum class Task { kClassification, kSegmentation };

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double decay = 0.997;
  std::size_t decay_start_epoch = 20;
  std::size_t epochs = 250;
  std::uint64_t seed = 0;
  Task task = Task::kClassification;
  std::size_t threads = 1;  // gradient shards; results are deterministic for a fixed count
  bool augment = true;
  AugmentOptions augment_options;

  void validate() const;
};

/// Learning rate for a 1-based epoch: base up to decay_start_epoch, then
/// multiplied by `decay` once per further epoch.
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

// ---- losses ---------------------------------------------------------------

template <class T>
struct LossResult {
  T loss{};
  std::vector<T> grad;  // d loss / d logits
};

/// Softmax cross-entropy (log-sum-exp stabilized).
template <class T>
LossResult<T> cross_entropy_loss(std::span<const T> logits, std::size_t label);

/// Per-point cross-entropy averaged over the N rows.
template <class T>
std::pair<T, Matrix<T>> segmentation_loss(const Matrix<T>& logits, std::span<const int> labels);

// ---- optimizer ------------------------------------------------------------

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::size_t steps = 0;
};

/// One bias-corrected Adam update. The state is sized on first use; later
/// calls with a different size throw ShapeMismatch.
template <class T>
void adam_step(AdamState<T>& state, std::span<T> params, std::span<const T> grads, double lr,
               const AdamOptions& opts = {});

/// Adam over every DenseLayer of a model, using the layers' accumulated grads.
template <class T>
class ModelOptimizer {
 public:
  explicit ModelOptimizer(AdamOptions opts = {}) : opts_(opts) {}

  void step(Model<T>& model, double lr);
  std::size_t steps() const noexcept { return steps_; }

 private:
  AdamOptions opts_;
  std::vector<AdamState<T>> weights_;
  std::vector<AdamState<T>> biases_;
  std::size_t steps_ = 0;
};

// ---- loop -----------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;  // running accuracy (per point for segmentation)
  std::optional<double> val_acc;
  std::optional<double> val_class_miou;
  std::optional<double> val_instance_miou;
};

template <class T>
using EpochCallback = std::function<void(const EpochLog&, const Model<T>&)>;

/// Mini-batch Adam training. Shuffles with a per-epoch seeded RNG, keeps the
/// final partial batch, averages gradients over each batch and calls
/// `on_epoch` after every epoch (checkpointing lives there).
template <class T>
std::vector<EpochLog> train_loop(Model<T>& model, const std::vector<LabeledSample>& train, const TrainConfig& cfg,
                                 const std::vector<LabeledSample>* validation = nullptr,
                                 const EpochCallback<T>& on_epoch = {});

/// Adds every sample's loss gradient into the model's grads (no scaling, no
/// augmentation, no optimizer step) and returns the summed loss.
template <class T>
T accumulate_gradients(Model<T>& model, std::span<const LabeledSample> samples, Task task);

// ---- evaluation -----------------------------------------------------------

struct EvalReport {
  Task task = Task::kClassification;
  std::size_t samples = 0;

  double overall_accuracy = 0.0;           // shapes (classification) or points (segmentation)
  std::vector<double> per_class_accuracy;  // classification; 0 where a class has no samples
  std::vector<std::size_t> class_support;
  double mean_class_accuracy = 0.0;        // over classes with support
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]

  double class_miou = 0.0;
  double instance_miou = 0.0;
  std::map<int, double> category_miou;
};

/// argmax with ties resolved to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> values);

EvalReport classification_report(std::span<const std::size_t> predictions, std::span<const int> labels,
                                  std::size_t num_classes);

/// Mean IoU over `part_set`; a part that is neither present nor predicted
/// scores 1.
double shape_iou(std::span<const int> predicted, std::span<const int> truth, std::span<const int> part_set);

struct SegmentedShape {
  int category = 0;
  std::vector<int> predicted;
  std::vector<int> truth;
};

/// Instance mIoU = mean shape IoU; class mIoU = mean over categories of the
/// mean shape IoU inside each category.
EvalReport segmentation_report(const std::vector<SegmentedShape>& shapes,
                               const std::map<int, std::vector<int>>& category_parts);

/// Part ids observed per class label across a labeled dataset.
std::map<int, std::vector<int>> category_part_sets(const std::vector<LabeledSample>& samples);

template <class T>
EvalReport evaluate_classification(const Model<T>& model, const std::vector<LabeledSample>& samples,
                                   std::size_t threads = 1);

/// Predictions are restricted to the parts of each sample's category (taken
/// from `category_parts`, or inferred from `samples` when empty).
template <class T>
EvalReport evaluate_segmentation(const Model<T>& model, const std::vector<LabeledSample>& samples,
                                 std::size_t threads = 1, std::map<int, std::vector<int>> category_parts = {});

}  // namespace mlgcn
