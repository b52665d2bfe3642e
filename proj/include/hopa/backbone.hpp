#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "hopa/params.hpp"

namespace hopa {

/// Dilated residual backbone. The stem (3x3 stride-2 conv, BN, ReLU, 3x3
/// stride-1 max pool) puts stage 1 at output stride 2; stages 2 and 3 halve
/// the resolution and stage 4 keeps it, giving output strides (2, 4, 8, 8).
struct BackboneConfig {
  std::array<int, 4> blocks{2, 2, 2, 2};
  std::array<int, 4> widths{8, 16, 32, 32};
  int stem_width = 8;
  std::array<int, 4> strides{1, 2, 2, 1};
  std::array<int, 4> dilations{1, 1, 2, 4};

  static BackboneConfig toy();
  /// 101-layer-deep basic-block layout. Allocates several hundred MB.
  static BackboneConfig deep();
  /// "toy" or "deep"; throws std::invalid_argument otherwise.
  static BackboneConfig preset(std::string_view name);
};

struct ResidualBlock {
  Conv2d conv1;
  BatchNorm bn1;
  Conv2d conv2;
  BatchNorm bn2;  // gamma starts at zero
  std::optional<Conv2d> down;
  std::optional<BatchNorm> down_bn;
};

struct BackboneParams {
  BackboneConfig cfg;
  Conv2d stem;
  BatchNorm stem_bn;
  std::array<std::vector<ResidualBlock>, 4> stages;
};

BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng);

/// conv-BN-ReLU-conv-BN, plus (projected) shortcut, then ReLU.
Tensor residual_block_forward(const Tensor& x, ResidualBlock& block, bool training);

/// Returns the four stage outputs X_1..X_4.
std::array<Tensor, 4> backbone_forward(const Tensor& img, BackboneParams& p, bool training);

/// Output shapes for a given input shape, without running anything.
std::array<Shape, 4> backbone_output_shapes(const BackboneConfig& cfg, const Shape& input);

struct StageInfo {
  int stride = 1;           // output stride (jump) relative to the input
  int receptive_field = 1;  // input pixels along one axis
  int channels = 0;
};
using StageMetadata = std::array<StageInfo, 4>;

/// Folds r <- r + (k-1)*d*j, j <- j*s over the stem and every main-path conv.
StageMetadata stage_metadata(const BackboneConfig& cfg);

// Names "backbone.stem", "backbone.stem.bn", "backbone.stage{i}.{b}.conv1" ...
void register_backbone(ParamList& out, const BackboneParams& p);

}  // namespace hopa
