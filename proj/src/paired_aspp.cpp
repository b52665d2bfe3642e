#include "hopa/paired_aspp.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hopa {
namespace {

int source_channels(BranchSource src, const std::array<int, 4>& c) {
  switch (src) {
    case BranchSource::kPair1: return c[0] + c[3];
    case BranchSource::kPair2: return c[1] + c[3];
    case BranchSource::kPair3: return c[2] + c[3];
    case BranchSource::kStage4:
    case BranchSource::kStage4Pool: return c[3];
  }
  return 0;
}

}  // namespace

std::vector<BranchSpec> PairedAsppConfig::branches() const {
  const int c = branch_channels;
  const int deep = combination == Combination::kOne ? rates[0] : rates[2];
  const int shallow = combination == Combination::kOne ? rates[2] : rates[0];
  return {
      {BranchSource::kPair3, deep, c},
      {BranchSource::kPair2, rates[1], c},
      {BranchSource::kPair1, shallow, c},
      {BranchSource::kStage4, rates[3], c},
      {BranchSource::kStage4Pool, 0, c},
  };
}

PairedAsppParams make_paired_aspp(const PairedAsppConfig& cfg,
                                  const std::array<int, 4>& stage_channels, Rng& rng) {
  if (cfg.branch_channels < 1 || cfg.fuse_channels < 1) {
    throw std::invalid_argument("paired_aspp: channel widths must be >= 1");
  }
  for (int r : cfg.rates) {
    if (r < 1) throw std::invalid_argument("paired_aspp: atrous rates must be >= 1");
  }
  PairedAsppParams p;
  p.cfg = cfg;
  p.stage_channels = stage_channels;
  const auto specs = cfg.branches();
  for (int k = 0; k < 4; ++k) {
    p.atrous[k] = make_conv(source_channels(specs[k].source, stage_channels),
                            specs[k].channels, 3, rng, false, 1, specs[k].rate);
    p.atrous_bn[k] = BatchNorm::identity(specs[k].channels);
  }
  p.pool_conv = make_conv(stage_channels[3], specs[4].channels, 1, rng, true);
  p.proj = make_conv(5 * cfg.branch_channels, cfg.fuse_channels, 1, rng, true);
  p.proj_bn = BatchNorm::identity(cfg.fuse_channels);
  return p;
}

std::array<Tensor, 3> pair(const Tensor& y1, const Tensor& y2, const Tensor& y3,
                           const Tensor& y4) {
  const Shape& s4 = y4.shape();
  std::array<Tensor, 3> out;
  const std::array<const Tensor*, 3> early{&y1, &y2, &y3};
  for (int i = 0; i < 3; ++i) {
    const Shape& s = early[i]->shape();
    if (s.n != s4.n) {
      throw std::invalid_argument("pair: batch mismatch " + to_string(s) + " vs " +
                                  to_string(s4));
    }
    const Tensor aligned =
        (s.h == s4.h && s.w == s4.w) ? *early[i] : bilinear_resize(*early[i], s4.h, s4.w);
    out[i] = concat_channels({aligned, y4});
  }
  return out;
}

std::vector<Tensor> paired_aspp_branches(const std::array<Tensor, 4>& ys, PairedAsppParams& p,
                                         bool training) {
  for (int i = 0; i < 4; ++i) {
    if (ys[i].shape().c != p.stage_channels[i]) {
      throw std::invalid_argument("paired_aspp: Y_" + std::to_string(i + 1) + " " +
                                  to_string(ys[i].shape()) + " expected " +
                                  std::to_string(p.stage_channels[i]) + " channels");
    }
  }
  const auto v = pair(ys[0], ys[1], ys[2], ys[3]);
  const auto specs = p.cfg.branches();
  std::vector<Tensor> u;
  for (int k = 0; k < 4; ++k) {
    const Tensor* src = nullptr;
    switch (specs[k].source) {
      case BranchSource::kPair1: src = &v[0]; break;
      case BranchSource::kPair2: src = &v[1]; break;
      case BranchSource::kPair3: src = &v[2]; break;
      default: src = &ys[3]; break;
    }
    u.push_back(relu(batch_norm(conv2d(*src, p.atrous[k]), p.atrous_bn[k], training)));
  }
  const Shape& s4 = ys[3].shape();
  const Tensor pooled = relu(conv2d(global_avg_pool(ys[3]), p.pool_conv));
  u.push_back(bilinear_resize(pooled, s4.h, s4.w));
  return u;
}

Tensor paired_aspp_forward(const std::array<Tensor, 4>& ys, PairedAsppParams& p,
                           bool training) {
  const auto u = paired_aspp_branches(ys, p, training);
  return relu(batch_norm(conv2d(concat_channels(u), p.proj), p.proj_bn, training));
}

void register_paired_aspp(ParamList& out, const PairedAsppParams& p) {
  for (int k = 0; k < 4; ++k) {
    const std::string base = "pa.branch." + std::to_string(k + 1);
    register_conv(out, base + ".conv", p.atrous[k]);
    register_bn(out, base + ".bn", p.atrous_bn[k]);
  }
  register_conv(out, "pa.branch.5.conv", p.pool_conv);
  register_conv(out, "pa.proj", p.proj);
  register_bn(out, "pa.proj.bn", p.proj_bn);
}

ScaleCoverage scale_coverage(const PairedAsppConfig& cfg, const StageMetadata& meta) {
  constexpr int kTaps = 3;
  const int jump = meta[3].stride;
  const int r4 = meta[3].receptive_field;
  ScaleCoverage cov;
  for (const BranchSpec& b : cfg.branches()) {
    if (b.source == BranchSource::kStage4Pool) continue;
    const int reach = (kTaps - 1) * b.rate * jump;
    ScaleInterval iv{b.source, b.rate, 0, 0};
    if (b.source == BranchSource::kStage4) {
      iv.min_rf = r4;
      iv.max_rf = r4 + reach;
    } else {
      const int i = static_cast<int>(b.source);  // kPair1 -> stage 0
      const int ri = meta[i].receptive_field;
      iv.min_rf = std::min(ri, r4) + reach;
      iv.max_rf = std::max(ri, r4) + reach;
    }
    cov.branches.push_back(iv);
  }
  cov.union_min = cov.branches.front().min_rf;
  cov.union_max = cov.branches.front().max_rf;
  for (const auto& iv : cov.branches) {
    cov.union_min = std::min(cov.union_min, iv.min_rf);
    cov.union_max = std::max(cov.union_max, iv.max_rf);
  }
  for (std::size_t a = 0; a < cov.branches.size(); ++a) {
    for (std::size_t b = a + 1; b < cov.branches.size(); ++b) {
      const auto& x = cov.branches[a];
      const auto& y = cov.branches[b];
      if (x.min_rf <= y.max_rf && y.min_rf <= x.max_rf) ++cov.overlap_count;
    }
  }
  return cov;
}

}  // namespace hopa
