#include "mlgcn/mlgcn.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "mlgcn/checkpoint.hpp"
#include "mlgcn/config.hpp"
#include "mlgcn/error.hpp"
#include "mlgcn/flops.hpp"
#include "mlgcn/model.hpp"
#include "mlgcn/pointset.hpp"
#include "mlgcn/train.hpp"

struct mlgcn_config {
  mlgcn::ModelConfig cfg;
};

struct mlgcn_dataset {
  std::vector<mlgcn::LabeledSample> samples;
};

struct mlgcn_cloud {
  mlgcn::PointCloud cloud;
};

struct mlgcn_model {
  mlgcn::Model<float> model;
};

struct mlgcn_eval_report {
  mlgcn::EvalReport report;
};

struct mlgcn_cost_report {
  mlgcn::CostReport shared;
  std::optional<mlgcn::CostReport> recomputed;
};

namespace {

thread_local std::string g_last_error;

mlgcn_status status_for(mlgcn::ErrorCode code) {
  using mlgcn::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidK:
    case ErrorCode::kHeadNotConfigured:
      return MLGCN_ERR_CONFIG;
    case ErrorCode::kMalformedFile:
    case ErrorCode::kMissingFile:
    case ErrorCode::kLabelLengthMismatch:
    case ErrorCode::kDegenerateMesh:
    case ErrorCode::kLabelOutOfRange:
    case ErrorCode::kEmptyDataset:
    case ErrorCode::kNonFinite:
      return MLGCN_ERR_DATA;
    case ErrorCode::kCheckpointMismatch:
      return MLGCN_ERR_CHECKPOINT;
    case ErrorCode::kIo:
      return MLGCN_ERR_IO;
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kMissingForwardCache:
      return MLGCN_ERR_INTERNAL;
  }
  return MLGCN_ERR_INTERNAL;
}

mlgcn_status set_error(mlgcn_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <class F>
mlgcn_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const mlgcn::Error& e) {
    return set_error(status_for(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(MLGCN_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(MLGCN_ERR_INTERNAL, e.what());
  }
}

mlgcn_status null_argument(const char* name) {
  return set_error(MLGCN_ERR_INVALID_ARGUMENT, std::string("null argument: ") + name);
}

mlgcn_status copy_text(const std::string& text, char* buf, size_t cap, size_t* len) {
  if (len) *len = text.size();
  if (!buf || cap == 0) {
    return text.empty() ? MLGCN_OK : set_error(MLGCN_ERR_BUFFER_TOO_SMALL, "buffer too small");
  }
  const size_t n = std::min(cap - 1, text.size());
  std::memcpy(buf, text.data(), n);
  buf[n] = '\0';
  return n == text.size() ? MLGCN_OK : set_error(MLGCN_ERR_BUFFER_TOO_SMALL, "buffer too small");
}

mlgcn::PointCloud maybe_normalize(mlgcn::PointCloud cloud, int normalize) {
  return normalize ? mlgcn::normalize_unit_sphere(cloud) : cloud;
}

std::string format_eval(const mlgcn::EvalReport& r, bool csv) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  if (csv) {
    out << "metric,value\n";
    out << "samples," << r.samples << '\n';
    out << "overall_accuracy," << r.overall_accuracy << '\n';
    if (r.task == mlgcn::Task::kClassification) {
      out << "mean_class_accuracy," << r.mean_class_accuracy << '\n';
      for (size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
        if (r.class_support[c]) out << "class_" << c << "_accuracy," << r.per_class_accuracy[c] << '\n';
      }
    } else {
      out << "class_miou," << r.class_miou << '\n';
      out << "instance_miou," << r.instance_miou << '\n';
      for (const auto& [cat, v] : r.category_miou) out << "category_" << cat << "_miou," << v << '\n';
    }
    return out.str();
  }
  out << "samples: " << r.samples << '\n';
  if (r.task == mlgcn::Task::kClassification) {
    out << "overall accuracy: " << r.overall_accuracy << '\n';
    out << "mean class accuracy: " << r.mean_class_accuracy << '\n';
    for (size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
      if (r.class_support[c])
        out << "  class " << c << ": " << r.per_class_accuracy[c] << " (" << r.class_support[c] << " samples)\n";
    }
  } else {
    out << "point accuracy: " << r.overall_accuracy << '\n';
    out << "class mIoU: " << r.class_miou << '\n';
    out << "instance mIoU: " << r.instance_miou << '\n';
    for (const auto& [cat, v] : r.category_miou) out << "  category " << cat << ": " << v << '\n';
  }
  return out.str();
}

}  // namespace

extern "C" {

const char* mlgcn_last_error(void) { return g_last_error.c_str(); }

const char* mlgcn_status_name(mlgcn_status status) {
  switch (status) {
    case MLGCN_OK: return "ok";
    case MLGCN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MLGCN_ERR_CONFIG: return "config error";
    case MLGCN_ERR_DATA: return "data error";
    case MLGCN_ERR_CHECKPOINT: return "checkpoint mismatch";
    case MLGCN_ERR_IO: return "io error";
    case MLGCN_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case MLGCN_ERR_INTERNAL: return "internal error";
  }
  return "unknown";
}

// ---- config ---------------------------------------------------------------

mlgcn_status mlgcn_config_preset(const char* name, mlgcn_config** out) {
  if (!name) return null_argument("name");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_config{mlgcn::preset_by_name(name)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_load(const char* path, mlgcn_config** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_config{mlgcn::load_config(path)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_save(const mlgcn_config* cfg, const char* path) {
  if (!cfg) return null_argument("cfg");
  if (!path) return null_argument("path");
  return guarded([&] {
    mlgcn::save_config(path, cfg->cfg);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_clone(const mlgcn_config* cfg, mlgcn_config** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_config{cfg->cfg};
    return MLGCN_OK;
  });
}

void mlgcn_config_free(mlgcn_config* cfg) { delete cfg; }

mlgcn_status mlgcn_config_set_points(mlgcn_config* cfg, size_t n_points) {
  if (!cfg) return null_argument("cfg");
  return guarded([&] {
    auto next = cfg->cfg;
    next.n_points = n_points;
    next.validate();
    cfg->cfg = std::move(next);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_set_num_classes(mlgcn_config* cfg, size_t num_classes) {
  if (!cfg) return null_argument("cfg");
  return guarded([&] {
    auto next = cfg->cfg;
    next.num_classes = num_classes;
    next.validate();
    cfg->cfg = std::move(next);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_set_k(mlgcn_config* cfg, const size_t* ks, size_t count) {
  if (!cfg) return null_argument("cfg");
  if (!ks && count) return null_argument("ks");
  return guarded([&] {
    auto next = mlgcn::with_k_set(cfg->cfg, std::vector<std::size_t>(ks, ks + count));
    next.validate();
    cfg->cfg = std::move(next);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_set_segmentation(mlgcn_config* cfg, size_t num_parts) {
  if (!cfg) return null_argument("cfg");
  return guarded([&] {
    auto next = cfg->cfg;
    if (num_parts == 0) {
      next.segmentation.reset();
    } else {
      next.segmentation = mlgcn::default_segmentation(next.trunk_out_channels, num_parts);
    }
    next.validate();
    cfg->cfg = std::move(next);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_config_info_get(const mlgcn_config* cfg, mlgcn_config_info* info) {
  if (!cfg) return null_argument("cfg");
  if (!info) return null_argument("info");
  return guarded([&] {
    const auto& c = cfg->cfg;
    info->n_points = c.n_points;
    info->num_gnn_blocks = c.gnn_blocks.size();
    info->trunk_channels = c.trunk_out_channels;
    info->num_classes = c.num_classes;
    info->num_parts = c.segmentation ? c.segmentation->num_parts : 0;
    info->parameter_count = mlgcn::count_parameters(c);
    return MLGCN_OK;
  });
}

// ---- data -----------------------------------------------------------------

mlgcn_status mlgcn_dataset_load(const char* manifest, size_t n_points, uint64_t seed, int normalize,
                                mlgcn_dataset** out) {
  if (!manifest) return null_argument("manifest");
  if (!out) return null_argument("out");
  return guarded([&] {
    mlgcn::DatasetOptions opts;
    opts.n_points = n_points;
    opts.seed = seed;
    auto samples = mlgcn::read_dataset(manifest, opts);
    for (auto& s : samples) s.cloud = maybe_normalize(std::move(s.cloud), normalize);
    *out = new mlgcn_dataset{std::move(samples)};
    return MLGCN_OK;
  });
}

size_t mlgcn_dataset_size(const mlgcn_dataset* ds) { return ds ? ds->samples.size() : 0; }

int mlgcn_dataset_label(const mlgcn_dataset* ds, size_t index) {
  if (!ds || index >= ds->samples.size()) return -1;
  return ds->samples[index].class_label;
}

mlgcn_status mlgcn_dataset_cloud(const mlgcn_dataset* ds, size_t index, mlgcn_cloud** out) {
  if (!ds) return null_argument("ds");
  if (!out) return null_argument("out");
  if (index >= ds->samples.size()) return set_error(MLGCN_ERR_INVALID_ARGUMENT, "sample index out of range");
  return guarded([&] {
    *out = new mlgcn_cloud{ds->samples[index].cloud};
    return MLGCN_OK;
  });
}

void mlgcn_dataset_free(mlgcn_dataset* ds) { delete ds; }

mlgcn_status mlgcn_cloud_load(const char* path, size_t n_points, uint64_t seed, int normalize, mlgcn_cloud** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_cloud{maybe_normalize(mlgcn::load_point_file(path, n_points, seed), normalize)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_cloud_from_points(const double* xyz, size_t count, mlgcn_cloud** out) {
  if (!xyz) return null_argument("xyz");
  if (!out) return null_argument("out");
  return guarded([&] {
    std::vector<mlgcn::Point3> pts(count);
    for (size_t i = 0; i < count; ++i) pts[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
    *out = new mlgcn_cloud{mlgcn::PointCloud(std::move(pts))};
    return MLGCN_OK;
  });
}

size_t mlgcn_cloud_size(const mlgcn_cloud* cloud) { return cloud ? cloud->cloud.size() : 0; }

void mlgcn_cloud_free(mlgcn_cloud* cloud) { delete cloud; }

// ---- model ----------------------------------------------------------------

mlgcn_status mlgcn_model_create(const mlgcn_config* cfg, uint64_t seed, mlgcn_model** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_model{mlgcn::Model<float>(cfg->cfg, seed)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_model_load(const mlgcn_config* cfg, const char* checkpoint, mlgcn_model** out) {
  if (!cfg) return null_argument("cfg");
  if (!checkpoint) return null_argument("checkpoint");
  if (!out) return null_argument("out");
  return guarded([&] {
    mlgcn::Model<float> model(cfg->cfg, 0);
    mlgcn::load_checkpoint(checkpoint, model);
    *out = new mlgcn_model{std::move(model)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_model_save(const mlgcn_model* model, const char* checkpoint) {
  if (!model) return null_argument("model");
  if (!checkpoint) return null_argument("checkpoint");
  return guarded([&] {
    mlgcn::save_checkpoint(checkpoint, model->model);
    mlgcn::save_checkpoint_sidecar(std::string(checkpoint) + ".json", model->model);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_model_config(const mlgcn_model* model, mlgcn_config** out) {
  if (!model) return null_argument("model");
  if (!out) return null_argument("out");
  return guarded([&] {
    *out = new mlgcn_config{model->model.config()};
    return MLGCN_OK;
  });
}

void mlgcn_model_free(mlgcn_model* model) { delete model; }

mlgcn_status mlgcn_classify(const mlgcn_model* model, const mlgcn_cloud* cloud, float* logits, size_t cap,
                            size_t* predicted) {
  if (!model) return null_argument("model");
  if (!cloud) return null_argument("cloud");
  return guarded([&] {
    const auto out = mlgcn::classify(model->model, cloud->cloud);
    if (predicted) *predicted = mlgcn::argmax<float>(out);
    if (logits) {
      if (cap < out.size()) return set_error(MLGCN_ERR_BUFFER_TOO_SMALL, "logits buffer too small");
      std::copy(out.begin(), out.end(), logits);
    }
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_segment(const mlgcn_model* model, const mlgcn_cloud* cloud, int* parts, size_t cap) {
  if (!model) return null_argument("model");
  if (!cloud) return null_argument("cloud");
  if (!parts) return null_argument("parts");
  return guarded([&] {
    const auto logits = mlgcn::segment(model->model, cloud->cloud);
    if (cap < logits.rows()) return set_error(MLGCN_ERR_BUFFER_TOO_SMALL, "parts buffer too small");
    for (size_t i = 0; i < logits.rows(); ++i) parts[i] = static_cast<int>(mlgcn::argmax<float>(logits.row(i)));
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_features(const mlgcn_model* model, const mlgcn_cloud* cloud, float* out, size_t cap) {
  if (!model) return null_argument("model");
  if (!cloud) return null_argument("cloud");
  if (!out) return null_argument("out");
  return guarded([&] {
    const auto f = mlgcn::global_features(model->model, cloud->cloud);
    const auto values = f.values();
    if (cap < values.size()) return set_error(MLGCN_ERR_BUFFER_TOO_SMALL, "feature buffer too small");
    std::copy(values.begin(), values.end(), out);
    return MLGCN_OK;
  });
}

// ---- training / evaluation ------------------------------------------------

void mlgcn_train_options_default(mlgcn_train_options* opts) {
  if (!opts) return;
  const mlgcn::TrainConfig d;
  opts->batch_size = d.batch_size;
  opts->epochs = d.epochs;
  opts->lr = d.lr;
  opts->decay = d.decay;
  opts->decay_start_epoch = d.decay_start_epoch;
  opts->seed = d.seed;
  opts->task = MLGCN_TASK_CLASSIFICATION;
  opts->threads = d.threads;
  opts->augment = d.augment ? 1 : 0;
}

mlgcn_status mlgcn_train(mlgcn_model* model, const mlgcn_dataset* train, const mlgcn_dataset* validation,
                         const mlgcn_train_options* opts, mlgcn_epoch_callback callback, void* user) {
  if (!model) return null_argument("model");
  if (!train) return null_argument("train");
  if (!opts) return null_argument("opts");
  return guarded([&] {
    mlgcn::TrainConfig tc;
    tc.batch_size = opts->batch_size;
    tc.epochs = opts->epochs;
    tc.lr = opts->lr;
    tc.decay = opts->decay;
    tc.decay_start_epoch = opts->decay_start_epoch;
    tc.seed = opts->seed;
    tc.task = opts->task == MLGCN_TASK_SEGMENTATION ? mlgcn::Task::kSegmentation : mlgcn::Task::kClassification;
    tc.threads = opts->threads;
    tc.augment = opts->augment != 0;

    mlgcn::EpochCallback<float> cb;
    if (callback) {
      cb = [&](const mlgcn::EpochLog& log, const mlgcn::Model<float>&) {
        mlgcn_epoch_log c{};
        c.epoch = log.epoch;
        c.lr = log.lr;
        c.train_loss = log.train_loss;
        c.train_acc = log.train_acc;
        c.has_validation = log.val_acc.has_value();
        c.val_acc = log.val_acc.value_or(0.0);
        c.val_class_miou = log.val_class_miou.value_or(0.0);
        c.val_instance_miou = log.val_instance_miou.value_or(0.0);
        callback(&c, model, user);
      };
    }
    mlgcn::train_loop(model->model, train->samples, tc, validation ? &validation->samples : nullptr, cb);
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_evaluate(const mlgcn_model* model, const mlgcn_dataset* ds, mlgcn_task task, size_t threads,
                            mlgcn_eval_report** out) {
  if (!model) return null_argument("model");
  if (!ds) return null_argument("ds");
  if (!out) return null_argument("out");
  return guarded([&] {
    if (threads == 0) threads = 1;
    auto report = task == MLGCN_TASK_SEGMENTATION
                      ? mlgcn::evaluate_segmentation(model->model, ds->samples, threads)
                      : mlgcn::evaluate_classification(model->model, ds->samples, threads);
    *out = new mlgcn_eval_report{std::move(report)};
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_eval_summary_get(const mlgcn_eval_report* report, mlgcn_eval_summary* out) {
  if (!report) return null_argument("report");
  if (!out) return null_argument("out");
  const auto& r = report->report;
  out->task = r.task == mlgcn::Task::kSegmentation ? MLGCN_TASK_SEGMENTATION : MLGCN_TASK_CLASSIFICATION;
  out->samples = r.samples;
  out->overall_accuracy = r.overall_accuracy;
  out->mean_class_accuracy = r.mean_class_accuracy;
  out->class_miou = r.class_miou;
  out->instance_miou = r.instance_miou;
  return MLGCN_OK;
}

mlgcn_status mlgcn_eval_text(const mlgcn_eval_report* report, int csv, char* buf, size_t cap, size_t* len) {
  if (!report) return null_argument("report");
  return guarded([&] { return copy_text(format_eval(report->report, csv != 0), buf, cap, len); });
}

void mlgcn_eval_free(mlgcn_eval_report* report) { delete report; }

// ---- cost analysis --------------------------------------------------------

mlgcn_status mlgcn_analyze(const mlgcn_config* cfg, int compare_recompute, mlgcn_cost_report** out) {
  if (!cfg) return null_argument("cfg");
  if (!out) return null_argument("out");
  return guarded([&] {
    auto* r = new mlgcn_cost_report{};
    if (compare_recompute) {
      auto [shared, recomputed] = mlgcn::compare_shared_vs_recomputed(cfg->cfg);
      r->shared = std::move(shared);
      r->recomputed = std::move(recomputed);
    } else {
      r->shared = mlgcn::analyze_model(cfg->cfg);
    }
    *out = r;
    return MLGCN_OK;
  });
}

mlgcn_status mlgcn_cost_summary_get(const mlgcn_cost_report* report, mlgcn_cost_summary* out) {
  if (!report) return null_argument("report");
  if (!out) return null_argument("out");
  out->total_flops = report->shared.total_flops;
  out->total_comparisons = report->shared.total_comparisons;
  out->total_parameters = report->shared.total_parameters;
  out->model_size_bytes = report->shared.model_size_bytes;
  out->has_recompute = report->recomputed.has_value();
  out->recompute_total_flops = report->recomputed ? report->recomputed->total_flops : 0;
  return MLGCN_OK;
}

mlgcn_status mlgcn_cost_text(const mlgcn_cost_report* report, int csv, char* buf, size_t cap, size_t* len) {
  if (!report) return null_argument("report");
  return guarded([&] {
    std::ostringstream out;
    if (csv) {
      mlgcn::write_cost_csv(out, report->shared);
      if (report->recomputed) {
        out << '\n';
        mlgcn::write_cost_csv(out, *report->recomputed);
      }
    } else {
      if (report->recomputed) out << "shared graphs\n";
      mlgcn::write_cost_table(out, report->shared);
      if (report->recomputed) {
        out << "\ngraph rebuilt before every GCN block\n";
        mlgcn::write_cost_table(out, *report->recomputed);
        const double saving = 1.0 - static_cast<double>(report->shared.total_flops) /
                                        static_cast<double>(report->recomputed->total_flops);
        out << "\nsharing saves " << report->recomputed->total_flops - report->shared.total_flops << " FLOPs ("
            << saving * 100.0 << "%)\n";
      }
    }
    return copy_text(out.str(), buf, cap, len);
  });
}

void mlgcn_cost_free(mlgcn_cost_report* report) { delete report; }

}  // extern "C"
