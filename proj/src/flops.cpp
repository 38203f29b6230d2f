#include "mlgcn/flops.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace mlgcn {

std::uint64_t flops_dense(std::uint64_t n, std::uint64_t c_in, std::uint64_t c_out) {
  return n * (c_in * c_out + c_out);
}

std::uint64_t flops_graph(std::uint64_t n, std::uint64_t c) { return n * n * (3 * c - 1) / 2; }

namespace {

std::string dense_shape(std::uint64_t n, std::uint64_t in, std::uint64_t out) {
  return "(" + std::to_string(n) + "," + std::to_string(in) + ")-(" + std::to_string(n) + "," +
         std::to_string(out) + ")";
}

std::string point_shape(std::uint64_t n, std::uint64_t c) {
  return "(" + std::to_string(n) + "," + std::to_string(c) + ")";
}

void add_dense(CostReport& r, std::string op, std::uint64_t n, std::uint64_t in, std::uint64_t out) {
  r.entries.push_back({std::move(op), dense_shape(n, in, out), CostKind::kDense, flops_dense(n, in, out), 0});
}

void add_graph(CostReport& r, std::string op, std::uint64_t n, std::uint64_t c) {
  r.entries.push_back({std::move(op), point_shape(n, c), CostKind::kGraph, flops_graph(n, c), 0});
}

void add_pool(CostReport& r, std::string op, std::uint64_t n, std::uint64_t k, std::uint64_t c) {
  r.entries.push_back({std::move(op), point_shape(n, c) + " k=" + std::to_string(k), CostKind::kPool, 0, n * k * c});
}

CostReport analyze(const ModelConfig& cfg, bool recompute) {
  cfg.validate();
  CostReport r;
  const std::uint64_t n = cfg.n_points;
  for (std::size_t b = 0; b < cfg.gnn_blocks.size(); ++b) {
    const auto& blk = cfg.gnn_blocks[b];
    const std::string prefix = "block" + std::to_string(b);
    if (blk.k > 0 && !recompute) add_graph(r, prefix + ".graph", n, 3);
    add_dense(r, prefix + ".f0", n, 3, blk.f0_channels);
    for (std::size_t t = 0; t < blk.gcn_blocks.size(); ++t) {
      const auto& g = blk.gcn_blocks[t];
      const std::string name = prefix + ".gcn" + std::to_string(t + 1);
      if (blk.k > 0 && recompute) add_graph(r, name + ".graph", n, g.in_channels);
      add_dense(r, name, n, g.in_channels, g.out_channels);
      if (blk.k > 0) add_pool(r, name + ".pool", n, blk.k, g.out_channels);
    }
  }
  const std::uint64_t width = cfg.trunk_out_channels;
  add_dense(r, "trunk", n, cfg.trunk_in_channels(), width);
  add_pool(r, "global_pool", n, 1, width);

  std::uint64_t in = width;
  for (std::size_t h = 0; h < cfg.classifier_hidden.size(); ++h) {
    add_dense(r, "classifier" + std::to_string(h), 1, in, cfg.classifier_hidden[h]);
    in = cfg.classifier_hidden[h];
  }
  add_dense(r, "classifier" + std::to_string(cfg.classifier_hidden.size()), 1, in, cfg.num_classes);

  if (cfg.segmentation) {
    in = 2 * width;
    const auto& hidden = cfg.segmentation->hidden;
    for (std::size_t h = 0; h < hidden.size(); ++h) {
      add_dense(r, "segmentation" + std::to_string(h), n, in, hidden[h]);
      in = hidden[h];
    }
    add_dense(r, "segmentation" + std::to_string(hidden.size()), n, in, cfg.segmentation->num_parts);
  }

  for (const auto& e : r.entries) {
    r.total_flops += e.flops;
    r.total_comparisons += e.comparisons;
  }
  r.total_parameters = count_parameters(cfg);
  r.model_size_bytes = r.total_parameters * 4;
  return r;
}

const char* kind_name(CostKind k) {
  switch (k) {
    case CostKind::kDense: return "dense";
    case CostKind::kGraph: return "graph";
    case CostKind::kPool: return "maxpool";
  }
  return "?";
}

}  // namespace

std::uint64_t count_parameters(const ModelConfig& cfg) {
  auto layer = [](std::uint64_t in, std::uint64_t out) { return in * out + out; };
  std::uint64_t total = 0;
  for (const auto& blk : cfg.gnn_blocks) {
    total += layer(3, blk.f0_channels);
    for (const auto& g : blk.gcn_blocks) total += layer(g.in_channels, g.out_channels);
  }
  total += layer(cfg.trunk_in_channels(), cfg.trunk_out_channels);
  std::uint64_t in = cfg.trunk_out_channels;
  for (auto h : cfg.classifier_hidden) {
    total += layer(in, h);
    in = h;
  }
  total += layer(in, cfg.num_classes);
  if (cfg.segmentation) {
    in = 2 * cfg.trunk_out_channels;
    for (auto h : cfg.segmentation->hidden) {
      total += layer(in, h);
      in = h;
    }
    total += layer(in, cfg.segmentation->num_parts);
  }
  return total;
}

CostReport analyze_model(const ModelConfig& cfg) { return analyze(cfg, false); }

std::pair<CostReport, CostReport> compare_shared_vs_recomputed(const ModelConfig& cfg) {
  return {analyze(cfg, false), analyze(cfg, true)};
}

void write_cost_table(std::ostream& out, const CostReport& report) {
  std::size_t op_w = 2, shape_w = 5;
  for (const auto& e : report.entries) {
    op_w = std::max(op_w, e.op.size());
    shape_w = std::max(shape_w, e.shape.size());
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-7s  %-*s  %14s  %12s\n", static_cast<int>(op_w), "op", "kind",
                static_cast<int>(shape_w), "shape", "MFLOPs", "comparisons");
  out << buf;
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "%-*s  %-7s  %-*s  %14.3f  %12llu\n", static_cast<int>(op_w), e.op.c_str(),
                  kind_name(e.kind), static_cast<int>(shape_w), e.shape.c_str(), static_cast<double>(e.flops) / 1e6,
                  static_cast<unsigned long long>(e.comparisons));
    out << buf;
  }
  out << cost_totals_line(report) << '\n';
}

void write_cost_csv(std::ostream& out, const CostReport& report) {
  out << "op,shape,flops\n";
  for (const auto& e : report.entries) out << e.op << ",\"" << e.shape << "\"," << e.flops << '\n';
}

std::string cost_totals_line(const CostReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "total: %.3f x100M FLOPs (%.4f GFLOPs), %.3f x100K parameters, %.3f MB, %llu pool comparisons",
                static_cast<double>(report.total_flops) / 1e8, static_cast<double>(report.total_flops) / 1e9,
                static_cast<double>(report.total_parameters) / 1e5,
                static_cast<double>(report.model_size_bytes) / 1e6,
                static_cast<unsigned long long>(report.total_comparisons));
  return buf;
}

}  // namespace mlgcn
