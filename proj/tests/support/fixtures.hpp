#pragma once
// Hand-built models and samples shared by the unit tests and the acceptance run.

#include <vector>

#include "mlgcn/model.hpp"
#include "mlgcn/pointset.hpp"

namespace fixture {

// One GNN block with k = 0 whose part logits are +-(x - 0.15): points with
// x < 0.15 go to part 0, the rest to part 1.
inline mlgcn::Model<double> threshold_segmenter() {
  using namespace mlgcn;
  ModelConfig cfg;
  cfg.n_points = 4;
  cfg.gnn_blocks = {make_gnn_block(0, 3, {1})};
  cfg.trunk_out_channels = 1;
  cfg.num_classes = 1;
  cfg.segmentation = SegmentationConfig{2, {}};
  Model<double> m(cfg, 0);
  auto& b = m.blocks()[0];
  b.f0.weight.fill(0.0);
  for (int d = 0; d < 3; ++d) b.f0.weight(d, d) = 1.0;
  b.gcn[0].weight.fill(0.0);
  b.gcn[0].weight(0, 0) = 1.0;
  m.trunk().weight(0, 0) = 1.0;
  auto& head = m.segmentation_head()[0];  // input: [pooled, direct]
  head.weight(0, 0) = 0.0;
  head.weight(1, 0) = -1.0;
  head.bias[0] = 0.15;
  head.weight(0, 1) = 0.0;
  head.weight(1, 1) = 1.0;
  head.bias[1] = -0.15;
  return m;
}

// Truth {A, A, B, B}; the segmenter above predicts {A, B, B, B}.
inline mlgcn::LabeledSample four_point_shape() {
  mlgcn::PointCloud cloud({{0.1, 0, 0}, {0.2, 0, 0}, {0.3, 0, 0}, {0.4, 0, 0}});
  return {cloud, 0, std::vector<int>{0, 0, 1, 1}};
}

}  // namespace fixture
