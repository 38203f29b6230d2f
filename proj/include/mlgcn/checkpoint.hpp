#pragma once

#include <filesystem>
#include <iosfwd>

#include "mlgcn/model.hpp"

namespace mlgcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout:
//   "MLGW" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 rows | u32 cols | rows*cols f32
// Each DenseLayer contributes "<name>.weight" (in x out) and "<name>.bias"
// (1 x out), in Model::for_each_layer order.
void write_checkpoint(std::ostream& out, const Model<float>& model);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);

/// Loads weights into `model`; entry names and shapes must match its config
/// exactly, otherwise CheckpointMismatch.
void read_checkpoint(std::istream& in, Model<float>& model);
void load_checkpoint(const std::filesystem::path& path, Model<float>& model);

/// JSON sidecar listing entry names and shapes, for inspection only.
void save_checkpoint_sidecar(const std::filesystem::path& path, const Model<float>& model);

}  // namespace mlgcn
