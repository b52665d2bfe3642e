#include "hopa/params.hpp"

#include <cmath>

namespace hopa {

Conv2d make_conv(int c_in, int c_out, int kernel, Rng& rng, bool bias, int stride,
                 int dilation, double gain) {
  Conv2d conv;
  const double sd = std::sqrt(gain / static_cast<double>(c_in * kernel * kernel));
  std::normal_distribution<double> dist(0.0, sd);
  conv.weight = Tensor({c_out, c_in, kernel, kernel}, true);
  for (double& v : conv.weight.data()) v = dist(rng);
  if (bias) conv.bias = Tensor::zeros({1, c_out, 1, 1}, true);
  conv.stride = stride;
  conv.dilation = dilation;
  conv.padding = same_padding(kernel, dilation);
  return conv;
}

void register_conv(ParamList& out, const std::string& name, const Conv2d& conv) {
  out.push_back({name, conv.weight, ParamKind::kDecayed});
  if (conv.bias) out.push_back({name + ".bias", *conv.bias, ParamKind::kUndecayed});
}

void register_bn(ParamList& out, const std::string& name, const BatchNorm& bn) {
  out.push_back({name + ".gamma", bn.gamma, ParamKind::kUndecayed});
  out.push_back({name + ".beta", bn.beta, ParamKind::kUndecayed});
  out.push_back({name + ".running_mean", bn.running_mean, ParamKind::kBuffer});
  out.push_back({name + ".running_var", bn.running_var, ParamKind::kBuffer});
}

std::size_t count_trainable(const ParamList& params) {
  std::size_t total = 0;
  for (const auto& p : params) {
    if (p.kind != ParamKind::kBuffer) total += p.tensor.numel();
  }
  return total;
}

}  // namespace hopa
