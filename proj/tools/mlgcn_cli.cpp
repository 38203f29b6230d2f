// mlgcn command-line front end. Talks to the engine only through the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mlgcn/mlgcn.h"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kCheckpoint = 4 };

struct Failure {
  int code;
  std::string message;
};

int exit_code(mlgcn_status s) {
  switch (s) {
    case MLGCN_OK: return kOk;
    case MLGCN_ERR_CONFIG:
    case MLGCN_ERR_INVALID_ARGUMENT: return kConfig;
    case MLGCN_ERR_DATA: return kData;
    case MLGCN_ERR_CHECKPOINT: return kCheckpoint;
    default: return kOther;
  }
}

void check(mlgcn_status s, const std::string& context) {
  if (s != MLGCN_OK) throw Failure{exit_code(s), context + ": " + mlgcn_last_error()};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<mlgcn_config, Deleter<mlgcn_config, mlgcn_config_free>>;
using DatasetPtr = std::unique_ptr<mlgcn_dataset, Deleter<mlgcn_dataset, mlgcn_dataset_free>>;
using CloudPtr = std::unique_ptr<mlgcn_cloud, Deleter<mlgcn_cloud, mlgcn_cloud_free>>;
using ModelPtr = std::unique_ptr<mlgcn_model, Deleter<mlgcn_model, mlgcn_model_free>>;
using EvalPtr = std::unique_ptr<mlgcn_eval_report, Deleter<mlgcn_eval_report, mlgcn_eval_free>>;
using CostPtr = std::unique_ptr<mlgcn_cost_report, Deleter<mlgcn_cost_report, mlgcn_cost_free>>;

std::size_t default_threads() {
  if (const char* env = std::getenv("MLGCN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

mlgcn_task parse_task(const std::string& name) {
  if (name == "classification") return MLGCN_TASK_CLASSIFICATION;
  if (name == "segmentation") return MLGCN_TASK_SEGMENTATION;
  throw Failure{kConfig, "unknown task '" + name + "'"};
}

ConfigPtr open_config(const std::string& preset, const std::string& config_path) {
  mlgcn_config* raw = nullptr;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw Failure{kConfig, "config file not found: " + config_path};
    check(mlgcn_config_load(config_path.c_str(), &raw), "loading config " + config_path);
  } else {
    check(mlgcn_config_preset(preset.empty() ? "light" : preset.c_str(), &raw), "preset");
  }
  return ConfigPtr(raw);
}

mlgcn_config_info info_of(const mlgcn_config* cfg) {
  mlgcn_config_info info{};
  check(mlgcn_config_info_get(cfg, &info), "config");
  return info;
}

DatasetPtr open_dataset(const std::string& manifest, std::size_t n_points, std::uint64_t seed) {
  if (!fs::exists(manifest)) throw Failure{kData, "dataset manifest not found: " + manifest};
  mlgcn_dataset* raw = nullptr;
  check(mlgcn_dataset_load(manifest.c_str(), n_points, seed, 1, &raw), "loading dataset " + manifest);
  return DatasetPtr(raw);
}

// Checkpoint plus the config it was trained with (model.cfg beside it unless given).
ModelPtr open_model(const std::string& checkpoint, std::string config_path, ConfigPtr* cfg_out = nullptr) {
  if (!fs::exists(checkpoint)) throw Failure{kData, "checkpoint not found: " + checkpoint};
  if (config_path.empty()) config_path = (fs::path(checkpoint).parent_path() / "model.cfg").string();
  auto cfg = open_config("", config_path);
  mlgcn_model* raw = nullptr;
  check(mlgcn_model_load(cfg.get(), checkpoint.c_str(), &raw), "loading checkpoint " + checkpoint);
  if (cfg_out) *cfg_out = std::move(cfg);
  return ModelPtr(raw);
}

template <class F>
std::string read_text(F&& getter) {
  std::size_t len = 0;
  const auto s = getter(nullptr, 0, &len);
  if (s != MLGCN_OK && s != MLGCN_ERR_BUFFER_TOO_SMALL) check(s, "report");
  std::string text(len + 1, '\0');
  check(getter(text.data(), text.size(), &len), "report");
  text.resize(len);
  return text;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Failure{kOther, "cannot write " + path.string()};
  out << text;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string preset, config, data, val, out, task = "classification";
  std::optional<std::size_t> points, num_classes, num_parts;
  std::size_t epochs = 250, batch_size = 128, threads = 0, save_every = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool no_augment = false;
};

struct TrainState {
  fs::path out_dir;
  std::ofstream log;
  std::size_t epochs = 0;
  std::size_t save_every = 1;
  bool segmentation = false;
  std::string error;
};

void on_epoch(const mlgcn_epoch_log* log, const mlgcn_model* model, void* user) {
  auto& st = *static_cast<TrainState*>(user);
  st.log << log->epoch << ',' << log->lr << ',' << log->train_loss << ',' << log->train_acc << ',';
  if (log->has_validation) st.log << log->val_acc;
  if (st.segmentation) {
    st.log << ',';
    if (log->has_validation) st.log << log->val_class_miou;
    st.log << ',';
    if (log->has_validation) st.log << log->val_instance_miou;
  }
  st.log << '\n' << std::flush;
  std::fprintf(stderr, "epoch %zu  lr %.6g  loss %.5f  acc %.4f", log->epoch, log->lr, log->train_loss,
               log->train_acc);
  if (log->has_validation) std::fprintf(stderr, "  val %.4f", log->val_acc);
  std::fprintf(stderr, "\n");

  if (log->epoch % st.save_every == 0 || log->epoch == st.epochs) {
    char name[64];
    std::snprintf(name, sizeof name, "model_epoch%03zu.ckpt", log->epoch);
    const auto path = (st.out_dir / name).string();
    if (mlgcn_model_save(model, path.c_str()) != MLGCN_OK && st.error.empty()) st.error = mlgcn_last_error();
  }
}

int cmd_train(const TrainArgs& a) {
  auto cfg = open_config(a.preset, a.config);
  if (a.points) check(mlgcn_config_set_points(cfg.get(), *a.points), "--points");
  if (a.num_classes) check(mlgcn_config_set_num_classes(cfg.get(), *a.num_classes), "--num-classes");
  const auto task = parse_task(a.task);
  if (a.num_parts) check(mlgcn_config_set_segmentation(cfg.get(), *a.num_parts), "--num-parts");
  const auto info = info_of(cfg.get());
  if (task == MLGCN_TASK_SEGMENTATION && info.num_parts == 0)
    throw Failure{kConfig, "segmentation needs --num-parts or a config with a segmentation head"};

  auto train = open_dataset(a.data, info.n_points, a.seed);
  DatasetPtr val;
  if (!a.val.empty()) val = open_dataset(a.val, info.n_points, a.seed + 1);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw Failure{kOther, "cannot create " + a.out + ": " + ec.message()};
  check(mlgcn_config_save(cfg.get(), (fs::path(a.out) / "model.cfg").string().c_str()), "saving config");

  mlgcn_model* raw = nullptr;
  check(mlgcn_model_create(cfg.get(), a.seed, &raw), "creating model");
  ModelPtr model(raw);

  mlgcn_train_options opts;
  mlgcn_train_options_default(&opts);
  opts.epochs = a.epochs;
  opts.batch_size = a.batch_size;
  opts.lr = a.lr;
  opts.seed = a.seed;
  opts.task = task;
  opts.threads = a.threads ? a.threads : default_threads();
  opts.augment = a.no_augment ? 0 : 1;

  TrainState st;
  st.out_dir = a.out;
  st.epochs = a.epochs;
  st.save_every = a.save_every ? a.save_every : 1;
  st.segmentation = task == MLGCN_TASK_SEGMENTATION;
  st.log.open(st.out_dir / "log.csv");
  if (!st.log) throw Failure{kOther, "cannot write log.csv in " + a.out};
  st.log.precision(8);
  st.log << "epoch,lr,train_loss,train_acc,val_acc" << (st.segmentation ? ",val_class_miou,val_instance_miou" : "")
         << '\n';

  check(mlgcn_train(model.get(), train.get(), val.get(), &opts, on_epoch, &st), "training");
  if (!st.error.empty()) throw Failure{kOther, "saving checkpoint: " + st.error};
  return kOk;
}

// ---- eval / infer / export ------------------------------------------------

struct EvalArgs {
  std::string checkpoint, config, data, csv, task = "classification";
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  ConfigPtr cfg;
  auto model = open_model(a.checkpoint, a.config, &cfg);
  const auto info = info_of(cfg.get());
  auto ds = open_dataset(a.data, info.n_points, a.seed);
  mlgcn_eval_report* raw = nullptr;
  check(mlgcn_evaluate(model.get(), ds.get(), parse_task(a.task), a.threads ? a.threads : default_threads(), &raw),
        "evaluating");
  EvalPtr report(raw);
  std::cout << read_text([&](char* b, size_t c, size_t* l) { return mlgcn_eval_text(report.get(), 0, b, c, l); });
  if (!a.csv.empty())
    write_file(a.csv, read_text([&](char* b, size_t c, size_t* l) { return mlgcn_eval_text(report.get(), 1, b, c, l); }));
  return kOk;
}

struct InferArgs {
  std::string checkpoint, config, input;
  std::uint64_t seed = 0;
};

int cmd_infer(const InferArgs& a) {
  ConfigPtr cfg;
  auto model = open_model(a.checkpoint, a.config, &cfg);
  const auto info = info_of(cfg.get());
  if (!fs::exists(a.input)) throw Failure{kData, "input not found: " + a.input};
  mlgcn_cloud* raw = nullptr;
  check(mlgcn_cloud_load(a.input.c_str(), info.n_points, a.seed, 1, &raw), "reading " + a.input);
  CloudPtr cloud(raw);

  std::vector<float> logits(info.num_classes);
  std::size_t predicted = 0;
  check(mlgcn_classify(model.get(), cloud.get(), logits.data(), logits.size(), &predicted), "classifying");
  std::cout << "class " << predicted << '\n';
  if (info.num_parts) {
    std::vector<int> parts(mlgcn_cloud_size(cloud.get()));
    check(mlgcn_segment(model.get(), cloud.get(), parts.data(), parts.size()), "segmenting");
    std::cout << "parts";
    for (int p : parts) std::cout << ' ' << p;
    std::cout << '\n';
  }
  return kOk;
}

struct ExportArgs {
  std::string checkpoint, config, data, out;
  std::uint64_t seed = 0;
};

int cmd_export(const ExportArgs& a) {
  ConfigPtr cfg;
  auto model = open_model(a.checkpoint, a.config, &cfg);
  const auto info = info_of(cfg.get());
  auto ds = open_dataset(a.data, info.n_points, a.seed);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty() && a.out != "-") {
    file.open(a.out);
    if (!file) throw Failure{kOther, "cannot write " + a.out};
    out = &file;
  }
  out->precision(9);
  *out << "label";
  for (std::size_t c = 0; c < info.trunk_channels; ++c) *out << ",f_" << c;
  *out << '\n';

  std::vector<float> features(info.trunk_channels);
  const std::size_t n = mlgcn_dataset_size(ds.get());
  for (std::size_t i = 0; i < n; ++i) {
    mlgcn_cloud* raw = nullptr;
    check(mlgcn_dataset_cloud(ds.get(), i, &raw), "dataset");
    CloudPtr cloud(raw);
    check(mlgcn_features(model.get(), cloud.get(), features.data(), features.size()), "features");
    *out << mlgcn_dataset_label(ds.get(), i);
    for (float f : features) *out << ',' << f;
    *out << '\n';
  }
  return kOk;
}

// ---- analyze --------------------------------------------------------------

struct AnalyzeArgs {
  std::string preset, config, csv;
  std::optional<std::size_t> points;
  std::vector<std::size_t> k;
  bool compare = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  auto cfg = open_config(a.preset, a.config);
  if (!a.k.empty()) check(mlgcn_config_set_k(cfg.get(), a.k.data(), a.k.size()), "--k");
  if (a.points) check(mlgcn_config_set_points(cfg.get(), *a.points), "--points");
  mlgcn_cost_report* raw = nullptr;
  check(mlgcn_analyze(cfg.get(), a.compare ? 1 : 0, &raw), "analyzing");
  CostPtr report(raw);
  std::cout << read_text([&](char* b, size_t c, size_t* l) { return mlgcn_cost_text(report.get(), 0, b, c, l); });
  if (!a.csv.empty())
    write_file(a.csv, read_text([&](char* b, size_t c, size_t* l) { return mlgcn_cost_text(report.get(), 1, b, c, l); }));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLGCN point-cloud engine"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model on a dataset manifest");
  auto* t_preset = train->add_option("--preset", ta.preset, "light or lighter");
  train->add_option("--config", ta.config, "model config file")->excludes(t_preset);
  train->add_option("--data", ta.data, "training manifest")->required();
  train->add_option("--val", ta.val, "validation manifest");
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--points", ta.points, "points per cloud");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr", ta.lr);
  train->add_option("--seed", ta.seed);
  train->add_option("--threads", ta.threads, "worker threads (default: MLGCN_THREADS or 1)");
  train->add_option("--task", ta.task, "classification or segmentation");
  train->add_option("--num-classes", ta.num_classes);
  train->add_option("--num-parts", ta.num_parts, "adds a segmentation head");
  train->add_option("--save-every", ta.save_every, "checkpoint interval in epochs (the last epoch is always saved)");
  train->add_flag("--no-augment", ta.no_augment);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset manifest");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--config", ea.config, "defaults to model.cfg next to the checkpoint");
  eval->add_option("--data", ea.data)->required();
  eval->add_option("--task", ea.task, "classification or segmentation");
  eval->add_option("--csv", ea.csv, "also write metrics as CSV");
  eval->add_option("--threads", ea.threads);
  eval->add_option("--seed", ea.seed);

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "classify (and segment) one point or mesh file");
  infer->add_option("--checkpoint", ia.checkpoint)->required();
  infer->add_option("--config", ia.config);
  infer->add_option("--input", ia.input)->required();
  infer->add_option("--seed", ia.seed);

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "static FLOPs and parameter count");
  auto* a_preset = analyze->add_option("--preset", aa.preset);
  analyze->add_option("--config", aa.config)->excludes(a_preset);
  analyze->add_option("--points", aa.points);
  analyze->add_option("--k", aa.k, "replacement K set")->delimiter(',');
  analyze->add_flag("--compare-recompute", aa.compare);
  analyze->add_option("--csv", aa.csv, "also write op,shape,flops CSV");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export-features", "write global feature vectors as CSV");
  exp->add_option("--checkpoint", xa.checkpoint)->required();
  exp->add_option("--config", xa.config);
  exp->add_option("--data", xa.data)->required();
  exp->add_option("--out", xa.out, "CSV path (stdout when omitted)");
  exp->add_option("--seed", xa.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*infer) return cmd_infer(ia);
    if (*analyze) return cmd_analyze(aa);
    if (*exp) return cmd_export(xa);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.code;
  }
  return kOther;
}
