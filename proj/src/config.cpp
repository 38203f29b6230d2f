#include "mlgcn/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "mlgcn/error.hpp"

namespace mlgcn {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidConfig, key + ": expected a non-negative integer, got '" + value + "'");
  }
  if (pos != value.size() || value.front() == '-')
    fail(ErrorCode::kInvalidConfig, key + ": expected a non-negative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_count(key, item));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> gcn_widths(const GnnBlockConfig& b) {
  std::vector<std::size_t> w;
  for (const auto& g : b.gcn_blocks) w.push_back(g.out_channels);
  return w;
}

}  // namespace

std::size_t ModelConfig::trunk_in_channels() const noexcept {
  std::size_t c = 0;
  for (const auto& b : gnn_blocks) c += b.gcn_blocks.empty() ? 0 : b.output_width();
  return c;
}

std::size_t ModelConfig::max_k() const noexcept {
  std::size_t k = 0;
  for (const auto& b : gnn_blocks) k = std::max(k, b.k);
  return k;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidConfig, what); };
  if (n_points < 1) bad("n_points must be >= 1");
  if (gnn_blocks.empty()) bad("at least one GNN block is required");
  for (std::size_t b = 0; b < gnn_blocks.size(); ++b) {
    const auto& blk = gnn_blocks[b];
    const auto tag = "block " + std::to_string(b) + ": ";
    if (blk.f0_channels < 1) bad(tag + "f0_channels must be >= 1");
    if (blk.gcn_blocks.empty()) bad(tag + "needs at least one GCN block");
    if (blk.k > n_points) bad(tag + "k=" + std::to_string(blk.k) + " exceeds n_points=" + std::to_string(n_points));
    std::size_t width = blk.f0_channels;
    for (std::size_t t = 0; t < blk.gcn_blocks.size(); ++t) {
      const auto& g = blk.gcn_blocks[t];
      if (g.in_channels != width)
        bad(tag + "GCN " + std::to_string(t) + " expects " + std::to_string(g.in_channels) + " channels, chain gives " +
            std::to_string(width));
      if (g.out_channels < 1) bad(tag + "GCN widths must be >= 1");
      if (g.is_last != (t + 1 == blk.gcn_blocks.size())) bad(tag + "only the final GCN block may be last");
      width = g.output_width();
    }
  }
  if (trunk_out_channels < 1) bad("trunk_out_channels must be >= 1");
  if (num_classes < 1) bad("num_classes must be >= 1");
  for (auto h : classifier_hidden) {
    if (h < 1) bad("classifier hidden widths must be >= 1");
  }
  if (segmentation) {
    if (segmentation->num_parts < 1) bad("num_parts must be >= 1");
    for (auto h : segmentation->hidden) {
      if (h < 1) bad("segmentation hidden widths must be >= 1");
    }
  }
}

GnnBlockConfig make_gnn_block(std::size_t k, std::size_t f0_channels, const std::vector<std::size_t>& gcn_widths) {
  GnnBlockConfig blk{k, f0_channels, {}};
  std::size_t width = f0_channels;
  for (std::size_t t = 0; t < gcn_widths.size(); ++t) {
    GcnBlockConfig g{width, gcn_widths[t], t + 1 == gcn_widths.size()};
    width = g.output_width();
    blk.gcn_blocks.push_back(g);
  }
  return blk;
}

ModelConfig preset_light() {
  ModelConfig cfg;
  cfg.n_points = 1024;
  for (std::size_t k : {63, 15, 0}) cfg.gnn_blocks.push_back(make_gnn_block(k, 3, {32, 128}));
  cfg.trunk_out_channels = 256;
  cfg.num_classes = 40;
  return cfg;
}

ModelConfig preset_lighter() {
  ModelConfig cfg;
  cfg.n_points = 512;
  for (std::size_t k : {31, 7, 0}) cfg.gnn_blocks.push_back(make_gnn_block(k, 3, {16, 64}));
  cfg.trunk_out_channels = 128;
  cfg.num_classes = 40;
  return cfg;
}

ModelConfig preset_by_name(const std::string& name) {
  if (name == "light") return preset_light();
  if (name == "lighter") return preset_lighter();
  fail(ErrorCode::kInvalidConfig, "unknown preset '" + name + "' (expected light or lighter)");
}

SegmentationConfig default_segmentation(std::size_t trunk_out_channels, std::size_t num_parts) {
  return {num_parts, {trunk_out_channels, std::max<std::size_t>(1, trunk_out_channels / 2)}};
}

ModelConfig with_k_set(const ModelConfig& cfg, const std::vector<std::size_t>& ks) {
  if (ks.empty()) fail(ErrorCode::kInvalidConfig, "K set must not be empty");
  ModelConfig out = cfg;
  const auto& proto = cfg.gnn_blocks.front();
  out.gnn_blocks.clear();
  for (auto k : ks) {
    auto blk = proto;
    blk.k = k;
    out.gnn_blocks.push_back(blk);
  }
  return out;
}

ModelConfig parse_config(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kInvalidConfig, "line " + std::to_string(line_no) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  auto require = [&](const std::string& key) {
    auto v = take(key);
    if (!v) fail(ErrorCode::kInvalidConfig, "missing key '" + key + "'");
    return *v;
  };

  ModelConfig cfg;
  cfg.n_points = parse_count("n_points", require("n_points"));

  // Shared per-block defaults, individually overridable as block.<i>.<key>.
  const auto ks = parse_list("k", require("k"));
  const auto f0 = parse_count("f0_channels", take("f0_channels").value_or("3"));
  const auto widths = parse_list("gcn_channels", require("gcn_channels"));
  for (std::size_t b = 0; b < ks.size(); ++b) {
    const auto prefix = "block." + std::to_string(b) + ".";
    auto bf0 = take(prefix + "f0_channels");
    auto bw = take(prefix + "gcn_channels");
    cfg.gnn_blocks.push_back(make_gnn_block(ks[b], bf0 ? parse_count(prefix + "f0_channels", *bf0) : f0,
                                            bw ? parse_list(prefix + "gcn_channels", *bw) : widths));
  }
  cfg.trunk_out_channels = parse_count("trunk_channels", require("trunk_channels"));
  cfg.classifier_hidden = parse_list("classifier_hidden", take("classifier_hidden").value_or(""));
  cfg.num_classes = parse_count("num_classes", require("num_classes"));
  const auto parts = parse_count("num_parts", take("num_parts").value_or("0"));
  auto seg_hidden = take("segmentation_hidden");
  if (parts > 0) {
    cfg.segmentation = seg_hidden ? SegmentationConfig{parts, parse_list("segmentation_hidden", *seg_hidden)}
                                  : default_segmentation(cfg.trunk_out_channels, parts);
  }
  if (!kv.empty()) fail(ErrorCode::kInvalidConfig, "unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

void write_config(std::ostream& out, const ModelConfig& cfg) {
  std::vector<std::size_t> ks;
  for (const auto& b : cfg.gnn_blocks) ks.push_back(b.k);
  const auto& first = cfg.gnn_blocks.front();
  out << "n_points = " << cfg.n_points << '\n'
      << "k = " << join(ks) << '\n'
      << "f0_channels = " << first.f0_channels << '\n'
      << "gcn_channels = " << join(gcn_widths(first)) << '\n';
  for (std::size_t b = 1; b < cfg.gnn_blocks.size(); ++b) {
    const auto& blk = cfg.gnn_blocks[b];
    if (blk.f0_channels != first.f0_channels)
      out << "block." << b << ".f0_channels = " << blk.f0_channels << '\n';
    if (gcn_widths(blk) != gcn_widths(first))
      out << "block." << b << ".gcn_channels = " << join(gcn_widths(blk)) << '\n';
  }
  out << "trunk_channels = " << cfg.trunk_out_channels << '\n'
      << "classifier_hidden = " << join(cfg.classifier_hidden) << '\n'
      << "num_classes = " << cfg.num_classes << '\n'
      << "num_parts = " << (cfg.segmentation ? cfg.segmentation->num_parts : 0) << '\n';
  if (cfg.segmentation) out << "segmentation_hidden = " << join(cfg.segmentation->hidden) << '\n';
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  try {
    return parse_config(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  write_config(out, cfg);
}

}  // namespace mlgcn
