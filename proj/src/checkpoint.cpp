#include "mlgcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "mlgcn/error.hpp"

namespace mlgcn {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorCode::kCheckpointMismatch, "truncated checkpoint");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_entry(std::ostream& out, const std::string& name, std::size_t rows, std::size_t cols,
               std::span<const float> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (float v : data) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void get_entry(std::istream& in, const std::string& expected, std::size_t rows, std::size_t cols,
               std::span<float> dst) {
  const auto len = get_u32(in);
  if (len > 4096) fail(ErrorCode::kCheckpointMismatch, "implausible entry name length");
  std::string name(len, '\0');
  if (!in.read(name.data(), len)) fail(ErrorCode::kCheckpointMismatch, "truncated checkpoint");
  const auto r = get_u32(in), c = get_u32(in);
  if (name != expected || r != rows || c != cols) {
    fail(ErrorCode::kCheckpointMismatch, "expected " + expected + " [" + std::to_string(rows) + "x" +
                                             std::to_string(cols) + "], found " + name + " [" + std::to_string(r) +
                                             "x" + std::to_string(c) + "]");
  }
  for (auto& v : dst) v = std::bit_cast<float>(get_u32(in));
}

std::size_t entry_count(const Model<float>& model) {
  std::size_t n = 0;
  model.for_each_layer([&](const DenseLayer<float>&) { n += 2; });
  return n;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model<float>& model) {
  out.write("MLGW", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entry_count(model)));
  model.for_each_layer([&](const DenseLayer<float>& l) {
    put_entry(out, l.name + ".weight", l.weight.rows(), l.weight.cols(), l.weight.values());
    put_entry(out, l.name + ".bias", 1, l.bias.size(), l.bias);
  });
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  write_checkpoint(out, model);
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

void read_checkpoint(std::istream& in, Model<float>& model) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MLGW", 4) != 0)
    fail(ErrorCode::kCheckpointMismatch, "bad checkpoint magic");
  const auto version = get_u32(in);
  if (version != kCheckpointVersion)
    fail(ErrorCode::kCheckpointMismatch, "unsupported checkpoint version " + std::to_string(version));
  const auto count = get_u32(in);
  if (count != entry_count(model)) {
    fail(ErrorCode::kCheckpointMismatch, "checkpoint has " + std::to_string(count) + " entries, model expects " +
                                             std::to_string(entry_count(model)));
  }
  // Stage into a copy so a mismatch leaves the caller's model untouched.
  Model<float> staged = model;
  staged.for_each_layer([&](DenseLayer<float>& l) {
    get_entry(in, l.name + ".weight", l.weight.rows(), l.weight.cols(), l.weight.values());
    get_entry(in, l.name + ".bias", 1, l.bias.size(), l.bias);
  });
  model = std::move(staged);
}

void load_checkpoint(const std::filesystem::path& path, Model<float>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  try {
    read_checkpoint(in, model);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_checkpoint_sidecar(const std::filesystem::path& path, const Model<float>& model) {
  nlohmann::json layers = nlohmann::json::array();
  model.for_each_layer([&](const DenseLayer<float>& l) {
    layers.push_back({{"name", l.name + ".weight"}, {"shape", {l.weight.rows(), l.weight.cols()}}});
    layers.push_back({{"name", l.name + ".bias"}, {"shape", {1, l.bias.size()}}});
  });
  nlohmann::json doc = {{"format", "MLGW"},
                        {"version", kCheckpointVersion},
                        {"parameters", model.parameter_count()},
                        {"entries", layers}};
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace mlgcn
