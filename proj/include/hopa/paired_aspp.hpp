#pragma once

#include <array>
#include <vector>

#include "hopa/backbone.hpp"
#include "hopa/params.hpp"

namespace hopa {

/// Rate-to-pair wiring. kOne puts the largest rate on the deepest pair
/// (V_{3,4}); kTwo swaps the V_{3,4} and V_{1,4} rates.
enum class Combination { kOne = 1, kTwo = 2 };

enum class BranchSource {
  kPair1,       // concat(Y_1, Y_4)
  kPair2,       // concat(Y_2, Y_4)
  kPair3,       // concat(Y_3, Y_4)
  kStage4,      // Y_4 alone
  kStage4Pool,  // global average of Y_4
};

struct BranchSpec {
  BranchSource source;
  int rate;  // atrous rate; 0 for the pooling branch
  int channels;
};

struct PairedAsppConfig {
  Combination combination = Combination::kOne;
  /// Rates of the deep-pair, middle-pair, shallow-pair and Y_4 branches
  /// under combination one.
  std::array<int, 4> rates{18, 12, 6, 1};
  int branch_channels = 16;
  int fuse_channels = 32;

  /// The five branches in order U_1..U_5.
  std::vector<BranchSpec> branches() const;
};

struct PairedAsppParams {
  PairedAsppConfig cfg;
  std::array<int, 4> stage_channels{};
  std::array<Conv2d, 4> atrous;  // 3x3, same padding at the branch rate
  std::array<BatchNorm, 4> atrous_bn;
  Conv2d pool_conv;  // 1x1 with bias on the pooled Y_4
  Conv2d proj;       // 1x1 with bias over the concatenated branches
  BatchNorm proj_bn;

  int out_channels() const { return cfg.fuse_channels; }
};

PairedAsppParams make_paired_aspp(const PairedAsppConfig& cfg,
                                  const std::array<int, 4>& stage_channels, Rng& rng);

/// V_{i,4} = concat(resize(Y_i), Y_4) for i = 1..3; earlier stages are
/// bilinearly resampled to Y_4's spatial size first.
std::array<Tensor, 3> pair(const Tensor& y1, const Tensor& y2, const Tensor& y3,
                           const Tensor& y4);

/// U_1..U_5, each (n, branch_channels, h4, w4).
std::vector<Tensor> paired_aspp_branches(const std::array<Tensor, 4>& ys, PairedAsppParams& p,
                                         bool training);

/// relu(bn(proj(concat(U_1..U_5)))).
Tensor paired_aspp_forward(const std::array<Tensor, 4>& ys, PairedAsppParams& p,
                           bool training);

// Names "pa.branch.{k}.conv", "pa.branch.{k}.bn", "pa.proj", "pa.proj.bn".
void register_paired_aspp(ParamList& out, const PairedAsppParams& p);

struct ScaleInterval {
  BranchSource source;
  int rate;
  int min_rf;
  int max_rf;
};

struct ScaleCoverage {
  std::vector<ScaleInterval> branches;  // atrous branches only
  int union_min = 0;
  int union_max = 0;
  int overlap_count = 0;  // pairs of branch intervals that intersect

  int union_span() const { return union_max - union_min; }
};

/// Receptive-field scales reached by each atrous branch. A source with
/// receptive field r read through a 3x3 conv at rate d on the stage-4 grid
/// (jump j4) reaches r + 2*d*j4. A paired branch spans the scales reached by
/// its two sources; the single-source Y_4 branch spans its input to output
/// receptive field. The pooling branch is global and is not listed.
ScaleCoverage scale_coverage(const PairedAsppConfig& cfg, const StageMetadata& meta);

}  // namespace hopa
