#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "hopa/backbone.hpp"
#include "hopa/high_order.hpp"
#include "hopa/paired_aspp.hpp"

namespace hopa {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::toy();
  HighOrderConfig hr;
  PairedAsppConfig pa;
  int num_classes = 4;
};

/// Backbone -> one high-order block per stage -> Paired-ASPP -> 1x1
/// classifier -> bilinear upsample to the input resolution.
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& cfg, std::uint64_t seed);

  /// Logits (n, num_classes, h, w).
  Tensor forward(const Tensor& img, bool training);

  const ModelConfig& config() const { return cfg_; }
  /// All trainable tensors and BN buffers, in a fixed order.
  const ParamList& parameters() const { return params_; }

  BackboneParams& backbone() { return backbone_; }
  std::array<HighOrderParams, 4>& high_order() { return hr_; }
  PairedAsppParams& paired_aspp() { return pa_; }
  Conv2d& classifier() { return classifier_; }

 private:
  ModelConfig cfg_;
  BackboneParams backbone_;
  std::array<HighOrderParams, 4> hr_;
  PairedAsppParams pa_;
  Conv2d classifier_;
  ParamList params_;
};

/// "backbone", "hr1".."hr4", "pa" or "classifier" for a parameter name.
std::string param_group(const std::string& name);

}  // namespace hopa
