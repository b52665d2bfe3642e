#pragma once

#include <span>
#include <vector>

#include "hopa/params.hpp"

namespace hopa {

struct HighOrderConfig {
  int order = 3;           // R
  int rank = 8;            // D^r, shared by every degree
  int out_per_degree = 8;  // channels emitted by each degree branch
};

/// Weights of one high-order representation block.
///
/// `proj[r-1]` holds the r bias-free 1x1 filter banks whose responses are
/// multiplied together to form the degree-r maps; each bank has `ranks[r-1]`
/// filters, one per rank-1 term. `mix[r-1]` is the 1x1 mixer (with bias)
/// applied to the degree-r maps before the ReLU; it absorbs the per-term
/// weights of the polynomial predictor.
struct HighOrderParams {
  int in_channels = 0;
  int out_per_degree = 0;
  std::vector<int> ranks;
  std::vector<std::vector<Conv2d>> proj;
  std::vector<Conv2d> mix;

  int order() const { return static_cast<int>(ranks.size()); }
  int out_channels() const { return order() * out_per_degree; }
};

HighOrderParams make_high_order(int in_channels, std::span<const int> ranks,
                                int out_per_degree, Rng& rng);
HighOrderParams make_high_order(int in_channels, const HighOrderConfig& cfg, Rng& rng);

/// Throws std::invalid_argument if the bank layout is inconsistent.
void validate(const HighOrderParams& p);

/// Degree-r maps before mixing: `z[r-1]` has shape (n, D^r, h, w).
struct DegreeMaps {
  std::vector<Tensor> z;
  const Tensor& degree(int r) const { return z.at(static_cast<std::size_t>(r - 1)); }
};

DegreeMaps hr_project(const Tensor& x, const HighOrderParams& p);

/// concat_r relu(mix_r(z_r)); output (n, R * out_per_degree, h, w).
Tensor hr_forward(const Tensor& x, const HighOrderParams& p);

/// Evaluates the scalar predictor sum_r <alpha_r, z_r(x)> for one descriptor
/// x two ways (through hr_project on a 1x1 map, and by direct products of
/// filter inner products) and returns (via_project - direct).
/// `readout[r-1]` is alpha_r with ranks[r-1] entries.
double hr_predictor_check(std::span<const double> x, const HighOrderParams& p,
                          const std::vector<std::vector<double>>& readout);

// Names "<prefix>.proj.{r}.{s}" and "<prefix>.mix.{r}", 1-based.
void register_high_order(ParamList& out, const std::string& prefix,
                         const HighOrderParams& p);

}  // namespace hopa
