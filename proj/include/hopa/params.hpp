#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hopa/ops.hpp"

namespace hopa {

using Rng = std::mt19937_64;

enum class ParamKind {
  kDecayed,    // conv weights: trained, weight decay applies
  kUndecayed,  // biases and BN affine terms
  kBuffer,     // BN running statistics: checkpointed, never trained
};

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

using ParamList = std::vector<ParamEntry>;

/// Gaussian fan-in initialization, variance `gain / (c_in * k * k)`.
Conv2d make_conv(int c_in, int c_out, int kernel, Rng& rng, bool bias = false,
                 int stride = 1, int dilation = 1, double gain = 2.0);

/// Same-size padding for an odd kernel at the given dilation.
inline int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

// Registers "<name>" (+ "<name>.bias").
void register_conv(ParamList& out, const std::string& name, const Conv2d& conv);
// Registers "<name>.gamma", ".beta", ".running_mean", ".running_var".
void register_bn(ParamList& out, const std::string& name, const BatchNorm& bn);

std::size_t count_trainable(const ParamList& params);

}  // namespace hopa
