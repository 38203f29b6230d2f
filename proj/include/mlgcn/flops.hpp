#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mlgcn/config.hpp"

namespace mlgcn {

/// n * (c_in * c_out + c_out): one op per multiply-accumulate plus the bias add.
std::uint64_t flops_dense(std::uint64_t n, std::uint64_t c_in, std::uint64_t c_out);

/// n^2 * (3c - 1) / 2: per unordered pair, c subtractions, c multiplications
/// and c - 1 additions. Top-k selection is free.
std::uint64_t flops_graph(std::uint64_t n, std::uint64_t c);

enum class CostKind { kDense, kGraph, kPool };

struct CostEntry {
  std::string op;     // e.g. "block0.gcn1"
  std::string shape;  // "(1024,3)-(1024,32)" for dense, "(1024,3)" for graph
  CostKind kind = CostKind::kDense;
  std::uint64_t flops = 0;
  std::uint64_t comparisons = 0;  // max-pool comparisons, reported but not in total_flops
};

struct CostReport {
  std::vector<CostEntry> entries;
  std::uint64_t total_flops = 0;
  std::uint64_t total_comparisons = 0;
  std::uint64_t total_parameters = 0;
  std::uint64_t model_size_bytes = 0;  // parameters * 4
};

std::uint64_t count_parameters(const ModelConfig& cfg);

/// Static cost of one forward pass at cfg.n_points.
CostReport analyze_model(const ModelConfig& cfg);

/// First: shared graph per GNN block. Second: a variant that rebuilds the
/// graph before every GCN block on that block's input width.
std::pair<CostReport, CostReport> compare_shared_vs_recomputed(const ModelConfig& cfg);

void write_cost_table(std::ostream& out, const CostReport& report);
void write_cost_csv(std::ostream& out, const CostReport& report);
/// Totals in 100-Mega FLOPs, 100-thousand parameters and megabytes.
std::string cost_totals_line(const CostReport& report);

}  // namespace mlgcn
