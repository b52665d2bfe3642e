#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hopa/tensor.hpp"

namespace hopa {

/// Convolution filter bank: weight (c_out, c_in, k, k), optional bias
/// (1, c_out, 1, 1). `dilation` is the atrous rate.
struct Conv2d {
  Tensor weight;
  std::optional<Tensor> bias;
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  int out_channels() const { return weight.shape().n; }
  int in_channels() const { return weight.shape().c; }
  int kernel() const { return weight.shape().h; }
};

/// Per-channel affine normalization with running statistics.
struct BatchNorm {
  Tensor gamma;  // (1, c, 1, 1), trainable
  Tensor beta;   // (1, c, 1, 1), trainable
  Tensor running_mean;  // (1, c, 1, 1), buffer
  Tensor running_var;   // (1, c, 1, 1), buffer
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm identity(int channels);
  int channels() const { return gamma.shape().c; }
};

/// Output spatial extent of a convolution / pooling window along one axis.
int conv_out_extent(int in, int kernel, int stride, int dilation, int padding);

/// Cross-correlation with zero padding; output (n, c_out, h', w').
Tensor conv2d(const Tensor& x, const Conv2d& p);

Tensor eltwise_mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Concatenates along the channel axis, blocks in argument order.
Tensor concat_channels(std::span<const Tensor> xs);
Tensor concat_channels(std::initializer_list<Tensor> xs);
/// Channels [begin, end) of x.
Tensor slice_channels(const Tensor& x, int begin, int end);

Tensor relu(const Tensor& x);

/// Training mode normalizes with batch statistics (biased variance) and
/// updates the running estimates (unbiased variance); eval mode applies the
/// running estimates as a fixed affine map.
Tensor batch_norm(const Tensor& x, BatchNorm& p, bool training);

/// Mean over (h, w); output (n, c, 1, 1).
Tensor global_avg_pool(const Tensor& x);

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// Resizing a 1x1 map replicates it.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

/// Max pooling; padded positions never win.
Tensor max_pool(const Tensor& x, int kernel, int stride, int padding = 0);

/// Sum of all entries as a (1,1,1,1) tensor.
Tensor sum(const Tensor& x);

/// Mirror along the width axis.
Tensor flip_horizontal(const Tensor& x);

/// Channel-wise softmax. Forward only; the result carries no graph.
Tensor softmax_channels(const Tensor& x);

}  // namespace hopa
