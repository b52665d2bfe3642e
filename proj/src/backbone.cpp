#include "hopa/backbone.hpp"

#include <stdexcept>
#include <string>

namespace hopa {
namespace {

// Strided convs carry no dilation; the stage's rate applies once at the new
// resolution.
int conv1_dilation(const BackboneConfig& cfg, int stage, int block) {
  return (block == 0 && cfg.strides[stage] > 1) ? 1 : cfg.dilations[stage];
}

int block_stride(const BackboneConfig& cfg, int stage, int block) {
  return block == 0 ? cfg.strides[stage] : 1;
}

void check_config(const BackboneConfig& cfg) {
  if (cfg.stem_width < 1) throw std::invalid_argument("backbone: stem_width must be >= 1");
  for (int i = 0; i < 4; ++i) {
    if (cfg.blocks[i] < 1 || cfg.widths[i] < 1 || cfg.strides[i] < 1 || cfg.dilations[i] < 1) {
      throw std::invalid_argument("backbone: stage " + std::to_string(i + 1) +
                                  " needs positive blocks/width/stride/dilation");
    }
  }
}

}  // namespace

BackboneConfig BackboneConfig::toy() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::deep() {
  BackboneConfig cfg;
  cfg.blocks = {3, 4, 23, 3};
  cfg.widths = {64, 128, 256, 512};
  cfg.stem_width = 64;
  return cfg;
}

BackboneConfig BackboneConfig::preset(std::string_view name) {
  if (name == "toy") return toy();
  if (name == "deep") return deep();
  throw std::invalid_argument("unknown backbone preset '" + std::string(name) + "'");
}

BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng) {
  check_config(cfg);
  BackboneParams p;
  p.cfg = cfg;
  p.stem = make_conv(3, cfg.stem_width, 3, rng, false, 2);
  p.stem_bn = BatchNorm::identity(cfg.stem_width);
  int c_in = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int width = cfg.widths[s];
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      ResidualBlock blk;
      const int stride = block_stride(cfg, s, b);
      blk.conv1 = make_conv(c_in, width, 3, rng, false, stride, conv1_dilation(cfg, s, b));
      blk.bn1 = BatchNorm::identity(width);
      blk.conv2 = make_conv(width, width, 3, rng, false, 1, cfg.dilations[s]);
      blk.bn2 = BatchNorm::identity(width);
      std::fill(blk.bn2.gamma.data().begin(), blk.bn2.gamma.data().end(), 0.0);
      if (stride != 1 || c_in != width) {
        blk.down = make_conv(c_in, width, 1, rng, false, stride);
        blk.down_bn = BatchNorm::identity(width);
      }
      p.stages[s].push_back(std::move(blk));
      c_in = width;
    }
  }
  return p;
}

Tensor residual_block_forward(const Tensor& x, ResidualBlock& block, bool training) {
  Tensor h = relu(batch_norm(conv2d(x, block.conv1), block.bn1, training));
  h = batch_norm(conv2d(h, block.conv2), block.bn2, training);
  const Tensor shortcut =
      block.down ? batch_norm(conv2d(x, *block.down), *block.down_bn, training) : x;
  return relu(add(h, shortcut));
}

std::array<Tensor, 4> backbone_forward(const Tensor& img, BackboneParams& p, bool training) {
  const Shape& s = img.shape();
  if (s.c != 3) {
    throw std::invalid_argument("backbone_forward: expected 3 input channels, got " +
                                to_string(s));
  }
  if (s.h % 8 != 0 || s.w % 8 != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("backbone_forward: input " + to_string(s) +
                                " spatial dims must be positive multiples of 8");
  }
  Tensor h = relu(batch_norm(conv2d(img, p.stem), p.stem_bn, training));
  h = max_pool(h, 3, 1, 1);
  std::array<Tensor, 4> outs;
  for (int st = 0; st < 4; ++st) {
    for (ResidualBlock& blk : p.stages[st]) h = residual_block_forward(h, blk, training);
    outs[st] = h;
  }
  return outs;
}

std::array<Shape, 4> backbone_output_shapes(const BackboneConfig& cfg, const Shape& input) {
  check_config(cfg);
  int h = conv_out_extent(input.h, 3, 2, 1, 1);
  int w = conv_out_extent(input.w, 3, 2, 1, 1);
  std::array<Shape, 4> shapes;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const int stride = block_stride(cfg, s, b);
      const int d = conv1_dilation(cfg, s, b);
      h = conv_out_extent(h, 3, stride, d, d);
      w = conv_out_extent(w, 3, stride, d, d);
    }
    shapes[s] = {input.n, cfg.widths[s], h, w};
  }
  return shapes;
}

StageMetadata stage_metadata(const BackboneConfig& cfg) {
  check_config(cfg);
  int jump = 1;
  int rf = 1;
  auto fold = [&](int k, int stride, int dilation) {
    rf += (k - 1) * dilation * jump;
    jump *= stride;
  };
  fold(3, 2, 1);  // stem conv
  fold(3, 1, 1);  // stem max pool
  StageMetadata meta;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      fold(3, block_stride(cfg, s, b), conv1_dilation(cfg, s, b));
      fold(3, 1, cfg.dilations[s]);
    }
    meta[s] = {jump, rf, cfg.widths[s]};
  }
  return meta;
}

void register_backbone(ParamList& out, const BackboneParams& p) {
  register_conv(out, "backbone.stem", p.stem);
  register_bn(out, "backbone.stem.bn", p.stem_bn);
  for (int s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < p.stages[s].size(); ++b) {
      const ResidualBlock& blk = p.stages[s][b];
      const std::string base =
          "backbone.stage" + std::to_string(s + 1) + "." + std::to_string(b + 1);
      register_conv(out, base + ".conv1", blk.conv1);
      register_bn(out, base + ".bn1", blk.bn1);
      register_conv(out, base + ".conv2", blk.conv2);
      register_bn(out, base + ".bn2", blk.bn2);
      if (blk.down) {
        register_conv(out, base + ".down", *blk.down);
        register_bn(out, base + ".down.bn", *blk.down_bn);
      }
    }
  }
}

}  // namespace hopa
