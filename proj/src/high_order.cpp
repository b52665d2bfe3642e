#include "hopa/high_order.hpp"

#include <stdexcept>
#include <string>

namespace hopa {

HighOrderParams make_high_order(int in_channels, std::span<const int> ranks,
                                int out_per_degree, Rng& rng) {
  if (in_channels < 1 || ranks.empty() || out_per_degree < 1) {
    throw std::invalid_argument("make_high_order: need in_channels, order and width >= 1");
  }
  HighOrderParams p;
  p.in_channels = in_channels;
  p.out_per_degree = out_per_degree;
  p.ranks.assign(ranks.begin(), ranks.end());
  for (std::size_t r = 1; r <= ranks.size(); ++r) {
    const int rank = ranks[r - 1];
    if (rank < 1) throw std::invalid_argument("make_high_order: rank must be >= 1");
    std::vector<Conv2d> banks;
    for (std::size_t s = 0; s < r; ++s) {
      // Unit-variance projections keep degree-r products at O(1) scale.
      banks.push_back(make_conv(in_channels, rank, 1, rng, false, 1, 1, 1.0));
    }
    p.proj.push_back(std::move(banks));
    p.mix.push_back(make_conv(rank, out_per_degree, 1, rng, true));
  }
  return p;
}

HighOrderParams make_high_order(int in_channels, const HighOrderConfig& cfg, Rng& rng) {
  if (cfg.order < 1) throw std::invalid_argument("make_high_order: order must be >= 1");
  const std::vector<int> ranks(static_cast<std::size_t>(cfg.order), cfg.rank);
  return make_high_order(in_channels, ranks, cfg.out_per_degree, rng);
}

void validate(const HighOrderParams& p) {
  const int order = p.order();
  if (order < 1 || static_cast<int>(p.proj.size()) != order ||
      static_cast<int>(p.mix.size()) != order) {
    throw std::invalid_argument("HighOrderParams: bank count does not match order");
  }
  for (int r = 1; r <= order; ++r) {
    const auto& banks = p.proj[r - 1];
    if (static_cast<int>(banks.size()) != r) {
      throw std::invalid_argument("HighOrderParams: degree " + std::to_string(r) + " has " +
                                  std::to_string(banks.size()) + " filter banks");
    }
    for (const Conv2d& bank : banks) {
      if (bank.kernel() != 1 || bank.in_channels() != p.in_channels ||
          bank.out_channels() != p.ranks[r - 1] || bank.bias) {
        throw std::invalid_argument("HighOrderParams: degree " + std::to_string(r) +
                                    " bank must be bias-free 1x1 " +
                                    std::to_string(p.in_channels) + "->" +
                                    std::to_string(p.ranks[r - 1]));
      }
    }
    const Conv2d& mix = p.mix[r - 1];
    if (mix.kernel() != 1 || mix.in_channels() != p.ranks[r - 1] ||
        mix.out_channels() != p.out_per_degree) {
      throw std::invalid_argument("HighOrderParams: degree " + std::to_string(r) +
                                  " mixer has wrong shape");
    }
  }
}

DegreeMaps hr_project(const Tensor& x, const HighOrderParams& p) {
  if (x.shape().c != p.in_channels) {
    throw std::invalid_argument("hr_project: input " + to_string(x.shape()) + " has " +
                                std::to_string(x.shape().c) + " channels, module expects " +
                                std::to_string(p.in_channels));
  }
  DegreeMaps maps;
  for (const auto& banks : p.proj) {
    Tensor z = conv2d(x, banks.front());
    for (std::size_t s = 1; s < banks.size(); ++s) z = eltwise_mul(z, conv2d(x, banks[s]));
    maps.z.push_back(std::move(z));
  }
  return maps;
}

Tensor hr_forward(const Tensor& x, const HighOrderParams& p) {
  const DegreeMaps maps = hr_project(x, p);
  std::vector<Tensor> branches;
  branches.reserve(maps.z.size());
  for (std::size_t r = 0; r < maps.z.size(); ++r) {
    branches.push_back(relu(conv2d(maps.z[r], p.mix[r])));
  }
  return concat_channels(branches);
}

double hr_predictor_check(std::span<const double> x, const HighOrderParams& p,
                          const std::vector<std::vector<double>>& readout) {
  const int c = p.in_channels;
  if (static_cast<int>(x.size()) != c || static_cast<int>(readout.size()) != p.order()) {
    throw std::invalid_argument("hr_predictor_check: descriptor or readout size mismatch");
  }
  for (int r = 1; r <= p.order(); ++r) {
    if (static_cast<int>(readout[r - 1].size()) != p.ranks[r - 1]) {
      throw std::invalid_argument("hr_predictor_check: readout for degree " +
                                  std::to_string(r) + " has wrong length");
    }
  }

  const Tensor pixel({1, c, 1, 1}, std::vector<double>(x.begin(), x.end()));
  const DegreeMaps maps = hr_project(pixel, p);
  double via_project = 0.0;
  for (int r = 1; r <= p.order(); ++r) {
    const auto z = maps.degree(r).data();
    for (int d = 0; d < p.ranks[r - 1]; ++d) via_project += readout[r - 1][d] * z[d];
  }

  double direct = 0.0;
  for (int r = 1; r <= p.order(); ++r) {
    for (int d = 0; d < p.ranks[r - 1]; ++d) {
      double term = readout[r - 1][d];
      for (const Conv2d& bank : p.proj[r - 1]) {
        const auto u = bank.weight.data().subspan(static_cast<std::size_t>(d) * c, c);
        double dot = 0.0;
        for (int k = 0; k < c; ++k) dot += u[k] * x[k];
        term *= dot;
      }
      direct += term;
    }
  }
  return via_project - direct;
}

void register_high_order(ParamList& out, const std::string& prefix, const HighOrderParams& p) {
  for (int r = 1; r <= p.order(); ++r) {
    for (int s = 1; s <= r; ++s) {
      register_conv(out, prefix + ".proj." + std::to_string(r) + "." + std::to_string(s),
                    p.proj[r - 1][s - 1]);
    }
    register_conv(out, prefix + ".mix." + std::to_string(r), p.mix[r - 1]);
  }
}

}  // namespace hopa
