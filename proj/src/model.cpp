#include "hopa/model.hpp"

#include <stdexcept>

namespace hopa {

SegmentationModel::SegmentationModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  Rng rng(seed);
  backbone_ = make_backbone(cfg.backbone, rng);
  std::array<int, 4> hr_channels{};
  for (int s = 0; s < 4; ++s) {
    hr_[s] = make_high_order(cfg.backbone.widths[s], cfg.hr, rng);
    hr_channels[s] = hr_[s].out_channels();
  }
  pa_ = make_paired_aspp(cfg.pa, hr_channels, rng);
  classifier_ = make_conv(cfg.pa.fuse_channels, cfg.num_classes, 1, rng, true, 1, 1, 1.0);

  register_backbone(params_, backbone_);
  for (int s = 0; s < 4; ++s) register_high_order(params_, "hr" + std::to_string(s + 1), hr_[s]);
  register_paired_aspp(params_, pa_);
  register_conv(params_, "classifier", classifier_);
}

Tensor SegmentationModel::forward(const Tensor& img, bool training) {
  const auto xs = backbone_forward(img, backbone_, training);
  std::array<Tensor, 4> ys;
  for (int s = 0; s < 4; ++s) ys[s] = hr_forward(xs[s], hr_[s]);
  const Tensor fused = paired_aspp_forward(ys, pa_, training);
  const Tensor logits = conv2d(fused, classifier_);
  return bilinear_resize(logits, img.shape().h, img.shape().w);
}

std::string param_group(const std::string& name) {
  const auto dot = name.find('.');
  return name.substr(0, dot);
}

}  // namespace hopa
