#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mlgcn {

struct GcnBlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool is_last = false;  // the last block skips the input concatenation

  /// Width handed to the next block: out, or out + in when concatenating.
  std::size_t output_width() const noexcept { return is_last ? out_channels : out_channels + in_channels; }

  friend bool operator==(const GcnBlockConfig&, const GcnBlockConfig&) = default;
};

struct GnnBlockConfig {
  std::size_t k = 0;  // 0: graph-free pointwise block
  std::size_t f0_channels = 3;
  std::vector<GcnBlockConfig> gcn_blocks;

  std::size_t output_width() const noexcept { return gcn_blocks.back().output_width(); }

  friend bool operator==(const GnnBlockConfig&, const GnnBlockConfig&) = default;
};

struct SegmentationConfig {
  std::size_t num_parts = 0;
  std::vector<std::size_t> hidden;

  friend bool operator==(const SegmentationConfig&, const SegmentationConfig&) = default;
};

struct ModelConfig {
  std::size_t n_points = 1024;
  std::vector<GnnBlockConfig> gnn_blocks;
  std::size_t trunk_out_channels = 0;
  std::vector<std::size_t> classifier_hidden;
  std::size_t num_classes = 40;
  std::optional<SegmentationConfig> segmentation;

  std::size_t trunk_in_channels() const noexcept;
  std::size_t max_k() const noexcept;

  /// Throws InvalidConfig describing the first violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Builds a GNN block: f_0 to `f0_channels`, then one GCN block per entry of
/// `gcn_widths`, concatenating all but the last.
GnnBlockConfig make_gnn_block(std::size_t k, std::size_t f0_channels, const std::vector<std::size_t>& gcn_widths);

/// Light: 1024 points, K = {63, 15, 0}, f_0 -> 3, GCN 32 then 128, trunk 256.
ModelConfig preset_light();
/// Lighter: 512 points, K = {31, 7, 0}, f_0 -> 3, GCN 16 then 64, trunk 128.
ModelConfig preset_lighter();
/// Throws InvalidConfig for names other than "light" / "lighter".
ModelConfig preset_by_name(const std::string& name);

/// Default segmentation head for a trunk of width C: 2C -> C -> C/2 -> parts.
SegmentationConfig default_segmentation(std::size_t trunk_out_channels, std::size_t num_parts);

/// Replaces the K set, keeping the first block's channel layout for every block.
ModelConfig with_k_set(const ModelConfig& cfg, const std::vector<std::size_t>& ks);

// `key = value` text format, see write_config for the key set.
ModelConfig parse_config(std::istream& in);
void write_config(std::ostream& out, const ModelConfig& cfg);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace mlgcn
