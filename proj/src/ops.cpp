#include "hopa/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace hopa {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int c_in, h, w, k, stride, dilation, padding, out_h, out_w;

  bool is_pointwise() const {
    return k == 1 && stride == 1 && padding == 0;
  }
  int col_rows() const { return c_in * k * k; }
  int col_cols() const { return out_h * out_w; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
  const int cols = g.col_cols();
  for (int ci = 0; ci < g.c_in; ++ci) {
    const double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        double* row = col + static_cast<std::size_t>((ci * g.k + kh) * g.k + kw) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + kh * g.dilation;
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kw * g.dilation;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
  const int cols = g.col_cols();
  for (int ci = 0; ci < g.c_in; ++ci) {
    double* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const double* row =
            col + static_cast<std::size_t>((ci * g.k + kh) * g.k + kw) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + kh * g.dilation;
          if (ih < 0 || ih >= g.h) continue;
          const double* src = row + oh * g.out_w;
          double* dst = plane + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.padding + kw * g.dilation;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

BatchNorm BatchNorm::identity(int channels) {
  BatchNorm bn;
  const Shape s{1, channels, 1, 1};
  bn.gamma = Tensor::full(s, 1.0, true);
  bn.beta = Tensor::zeros(s, true);
  bn.running_mean = Tensor::zeros(s);
  bn.running_var = Tensor::full(s, 1.0);
  return bn;
}

int conv_out_extent(int in, int kernel, int stride, int dilation, int padding) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Conv2d& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  if (xs.c != ws.c || ws.h != ws.w) {
    throw std::invalid_argument("conv2d: input " + to_string(xs) +
                                " incompatible with weight " + to_string(ws));
  }
  if (p.stride < 1 || p.dilation < 1 || p.padding < 0) {
    throw std::invalid_argument("conv2d: stride/dilation must be positive and padding nonnegative");
  }
  if (p.bias && !(p.bias->shape() == Shape{1, ws.n, 1, 1})) {
    throw std::invalid_argument("conv2d: bias " + to_string(p.bias->shape()) +
                                " does not match weight " + to_string(ws));
  }
  const int span = p.dilation * (ws.h - 1) + 1;
  if (xs.h + 2 * p.padding < span || xs.w + 2 * p.padding < span) {
    throw std::invalid_argument("conv2d: input " + to_string(xs) +
                                " smaller than dilated kernel of weight " +
                                to_string(ws));
  }
  const ConvGeometry g{xs.c,
                       xs.h,
                       xs.w,
                       ws.h,
                       p.stride,
                       p.dilation,
                       p.padding,
                       conv_out_extent(xs.h, ws.h, p.stride, p.dilation, p.padding),
                       conv_out_extent(xs.w, ws.w, p.stride, p.dilation, p.padding)};
  const Shape out_shape{xs.n, ws.n, g.out_h, g.out_w};
  const int c_out = ws.n;
  const std::size_t in_stride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
  const std::size_t out_stride = static_cast<std::size_t>(c_out) * g.col_cols();

  std::vector<double> out(out_shape.numel());
  std::vector<double> col;
  if (!g.is_pointwise()) col.resize(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
  ConstMapMat wmat(p.weight.data().data(), c_out, g.col_rows());
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.data().data() + n * in_stride;
    const double* cptr = xn;
    if (!g.is_pointwise()) {
      im2col(xn, g, col.data());
      cptr = col.data();
    }
    MapMat omat(out.data() + n * out_stride, c_out, g.col_cols());
    omat.noalias() = wmat * ConstMapMat(cptr, g.col_rows(), g.col_cols());
    if (p.bias) {
      const auto b = p.bias->data();
      for (int co = 0; co < c_out; ++co) omat.row(co).array() += b[co];
    }
  }

  std::vector<Tensor> inputs{x, p.weight};
  if (p.bias) inputs.push_back(*p.bias);
  auto xi = x.impl();
  auto wi = p.weight.impl();
  auto bi = p.bias ? p.bias->impl() : nullptr;
  return make_op_result(
      out_shape, std::move(out), std::move(inputs),
      [xi, wi, bi, g, c_out, in_stride, out_stride](const detail::TensorImpl& o) {
        const int batch = o.shape.n;
        std::vector<double> col;
        std::vector<double> dcol;
        if (!g.is_pointwise()) {
          col.resize(static_cast<std::size_t>(g.col_rows()) * g.col_cols());
          dcol.resize(col.size());
        }
        ConstMapMat wmat(wi->data.data(), c_out, g.col_rows());
        for (int n = 0; n < batch; ++n) {
          ConstMapMat dout(o.grad.data() + n * out_stride, c_out, g.col_cols());
          const double* xn = xi->data.data() + n * in_stride;
          if (wi->tracks_grad()) {
            const double* cptr = xn;
            if (!g.is_pointwise()) {
              im2col(xn, g, col.data());
              cptr = col.data();
            }
            MapMat dw(wi->grad_buffer().data(), c_out, g.col_rows());
            dw.noalias() += dout * ConstMapMat(cptr, g.col_rows(), g.col_cols()).transpose();
          }
          if (xi->tracks_grad()) {
            double* dx = xi->grad_buffer().data() + n * in_stride;
            if (g.is_pointwise()) {
              MapMat(dx, g.col_rows(), g.col_cols()).noalias() += wmat.transpose() * dout;
            } else {
              MapMat(dcol.data(), g.col_rows(), g.col_cols()).noalias() =
                  wmat.transpose() * dout;
              col2im_add(dcol.data(), g, dx);
            }
          }
          if (bi && bi->tracks_grad()) {
            auto& db = bi->grad_buffer();
            for (int co = 0; co < c_out; ++co) db[co] += dout.row(co).sum();
          }
        }
      });
}

Tensor eltwise_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "eltwise_mul");
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [ai, bi](const detail::TensorImpl& o) {
                          if (ai->tracks_grad()) {
                            auto& g = ai->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
                          }
                          if (bi->tracks_grad()) {
                            auto& g = bi->grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op_result(a.shape(), std::move(out), {a, b},
                        [ai, bi](const detail::TensorImpl& o) {
                          if (ai->tracks_grad()) add_into(ai->grad_buffer(), o.grad);
                          if (bi->tracks_grad()) add_into(bi->grad_buffer(), o.grad);
                        });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  auto xi = x.impl();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xi, factor](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
                        });
}

Tensor concat_channels(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape& first = xs.front().shape();
  int total_c = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw std::invalid_argument("concat_channels: spatial mismatch " +
                                  to_string(first) + " vs " + to_string(s));
    }
    total_c += s.c;
  }
  const Shape out_shape{first.n, total_c, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<double> out(out_shape.numel());
  std::vector<int> offsets;
  int c0 = 0;
  for (const Tensor& t : xs) {
    offsets.push_back(c0);
    const int c = t.shape().c;
    for (int n = 0; n < first.n; ++n) {
      const double* src = t.data().data() + static_cast<std::size_t>(n) * c * plane;
      std::copy(src, src + c * plane,
                out.data() + (static_cast<std::size_t>(n) * total_c + c0) * plane);
    }
    c0 += c;
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const Tensor& t : xs) impls.push_back(t.impl());
  return make_op_result(
      out_shape, std::move(out), std::move(inputs),
      [impls, offsets, total_c, plane](const detail::TensorImpl& o) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
          auto& in = *impls[k];
          if (!in.tracks_grad()) continue;
          auto& g = in.grad_buffer();
          const int c = in.shape.c;
          for (int n = 0; n < in.shape.n; ++n) {
            const double* src =
                o.grad.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * plane;
            double* dst = g.data() + static_cast<std::size_t>(n) * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat_channels(std::initializer_list<Tensor> xs) {
  return concat_channels(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  const Shape& s = x.shape();
  if (begin < 0 || end > s.c || begin >= end) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) +
                                "," + std::to_string(end) + ") invalid for " +
                                to_string(s));
  }
  const Shape out_shape{s.n, end - begin, s.h, s.w};
  const std::size_t plane = s.plane();
  const std::size_t block = static_cast<std::size_t>(end - begin) * plane;
  std::vector<double> out(out_shape.numel());
  for (int n = 0; n < s.n; ++n) {
    const double* src = x.data().data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
    std::copy(src, src + block, out.data() + n * block);
  }
  auto xi = x.impl();
  return make_op_result(out_shape, std::move(out), {x},
                        [xi, begin, plane, block](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          const int c = xi->shape.c;
                          for (int n = 0; n < xi->shape.n; ++n) {
                            double* dst = g.data() + (static_cast<std::size_t>(n) * c + begin) * plane;
                            const double* src = o.grad.data() + n * block;
                            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                          }
                        });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  auto xi = x.impl();
  return make_op_result(x.shape(), std::move(out), {x},
                        [xi](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (xi->data[i] > 0.0) g[i] += o.grad[i];
                          }
                        });
}

Tensor batch_norm(const Tensor& x, BatchNorm& p, bool training) {
  const Shape& s = x.shape();
  if (p.channels() != s.c) {
    throw std::invalid_argument("batch_norm: " + std::to_string(p.channels()) +
                                " channels vs input " + to_string(s));
  }
  if (!(p.eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be positive");
  const std::size_t plane = s.plane();
  const std::size_t count = static_cast<std::size_t>(s.n) * plane;
  if (training && count < 2) {
    throw std::invalid_argument("batch_norm: training mode needs more than one value per channel, got " +
                                to_string(s));
  }
  std::vector<double> mean(s.c), inv_std(s.c);
  const auto xd = x.data();
  if (training) {
    auto rm = p.running_mean.data();
    auto rv = p.running_var.data();
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* src = xd.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* src = xd.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (src[i] - mu) * (src[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + p.eps);
      rm[c] = (1.0 - p.momentum) * rm[c] + p.momentum * mu;
      rv[c] = (1.0 - p.momentum) * rv[c] +
              p.momentum * var * static_cast<double>(count) / static_cast<double>(count - 1);
    }
  } else {
    const auto rm = p.running_mean.data();
    const auto rv = p.running_var.data();
    for (int c = 0; c < s.c; ++c) {
      mean[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + p.eps);
    }
  }

  const auto gamma = p.gamma.data();
  const auto beta = p.beta.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xd[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gamma[c] * h + beta[c];
      }
    }
  }

  auto xi = x.impl();
  auto gi = p.gamma.impl();
  auto bi = p.beta.impl();
  return make_op_result(
      s, std::move(out), {x, p.gamma, p.beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std, training, plane,
       count](const detail::TensorImpl& o) {
        const Shape& s = o.shape;
        std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy[c] += o.grad[base + i];
              sum_dy_xhat[c] += o.grad[base + i] * xhat[base + i];
            }
          }
        }
        if (gi->tracks_grad()) {
          auto& g = gi->grad_buffer();
          for (int c = 0; c < s.c; ++c) g[c] += sum_dy_xhat[c];
        }
        if (bi->tracks_grad()) {
          auto& g = bi->grad_buffer();
          for (int c = 0; c < s.c; ++c) g[c] += sum_dy[c];
        }
        if (!xi->tracks_grad()) return;
        auto& g = xi->grad_buffer();
        const double m = static_cast<double>(count);
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const double k = gi->data[c] * inv_std[c];
            for (std::size_t i = 0; i < plane; ++i) {
              const double dy = o.grad[base + i];
              g[base + i] += training
                                 ? k * (dy - sum_dy[c] / m - xhat[base + i] * sum_dy_xhat[c] / m)
                                 : k * dy;
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h < 1 || s.w < 1) throw std::invalid_argument("global_avg_pool: empty spatial extent");
  const std::size_t plane = s.plane();
  const Shape out_shape{s.n, s.c, 1, 1};
  std::vector<double> out(out_shape.numel());
  const auto xd = x.data();
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += xd[k * plane + i];
    out[k] = acc / static_cast<double>(plane);
  }
  auto xi = x.impl();
  return make_op_result(out_shape, std::move(out), {x},
                        [xi, plane](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          const double inv = 1.0 / static_cast<double>(plane);
                          for (std::size_t k = 0; k < o.grad.size(); ++k) {
                            for (std::size_t i = 0; i < plane; ++i) g[k * plane + i] += o.grad[k] * inv;
                          }
                        });
}

namespace {

struct Tap {
  int i0, i1;
  double frac;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (out_h < 1 || out_w < 1 || s.h < 1 || s.w < 1) {
    throw std::invalid_argument("bilinear_resize: invalid size " + std::to_string(out_h) +
                                "x" + std::to_string(out_w) + " for " + to_string(s));
  }
  if (out_h == s.h && out_w == s.w) {
    std::vector<double> out(x.data().begin(), x.data().end());
    auto xi = x.impl();
    return make_op_result(s, std::move(out), {x}, [xi](const detail::TensorImpl& o) {
      add_into(xi->grad_buffer(), o.grad);
    });
  }
  const auto ty = resize_taps(s.h, out_h);
  const auto tx = resize_taps(s.w, out_w);
  const Shape out_shape{s.n, s.c, out_h, out_w};
  std::vector<double> out(out_shape.numel());
  const auto xd = x.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xd.data() + p * s.plane();
    double* dst = out.data() + p * out_shape.plane();
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      const double* r0 = src + static_cast<std::size_t>(a.i0) * s.w;
      const double* r1 = src + static_cast<std::size_t>(a.i1) * s.w;
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const double top = r0[b.i0] * (1.0 - b.frac) + r0[b.i1] * b.frac;
        const double bot = r1[b.i0] * (1.0 - b.frac) + r1[b.i1] * b.frac;
        dst[oy * out_w + ox] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  }
  auto xi = x.impl();
  return make_op_result(out_shape, std::move(out), {x},
                        [xi, ty, tx, planes](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          const Shape& s = xi->shape;
                          const int out_h = o.shape.h;
                          const int out_w = o.shape.w;
                          for (std::size_t p = 0; p < planes; ++p) {
                            const double* src = o.grad.data() + p * o.shape.plane();
                            double* dst = g.data() + p * s.plane();
                            for (int oy = 0; oy < out_h; ++oy) {
                              const Tap& a = ty[oy];
                              for (int ox = 0; ox < out_w; ++ox) {
                                const Tap& b = tx[ox];
                                const double v = src[oy * out_w + ox];
                                dst[a.i0 * s.w + b.i0] += v * (1.0 - a.frac) * (1.0 - b.frac);
                                dst[a.i0 * s.w + b.i1] += v * (1.0 - a.frac) * b.frac;
                                dst[a.i1 * s.w + b.i0] += v * a.frac * (1.0 - b.frac);
                                dst[a.i1 * s.w + b.i1] += v * a.frac * b.frac;
                              }
                            }
                          }
                        });
}

Tensor max_pool(const Tensor& x, int kernel, int stride, int padding) {
  const Shape& s = x.shape();
  if (kernel < 1 || stride < 1 || padding < 0 || padding > kernel / 2) {
    throw std::invalid_argument("max_pool: invalid kernel/stride/padding");
  }
  if (kernel > s.h + 2 * padding || kernel > s.w + 2 * padding || stride > s.h ||
      stride > s.w) {
    throw std::invalid_argument("max_pool: kernel " + std::to_string(kernel) + " / stride " +
                                std::to_string(stride) + " larger than input " +
                                to_string(s));
  }
  const int oh = conv_out_extent(s.h, kernel, stride, 1, padding);
  const int ow = conv_out_extent(s.w, kernel, stride, 1, padding);
  const Shape out_shape{s.n, s.c, oh, ow};
  std::vector<double> out(out_shape.numel());
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xd = x.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = y * stride - padding + ky;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = xx * stride - padding + kx;
            if (ix < 0 || ix >= s.w) continue;
            const std::size_t idx = p * s.plane() + static_cast<std::size_t>(iy) * s.w + ix;
            if (xd[idx] > best) {
              best = xd[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = p * out_shape.plane() + static_cast<std::size_t>(y) * ow + xx;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  auto xi = x.impl();
  return make_op_result(out_shape, std::move(out), {x},
                        [xi, argmax](const detail::TensorImpl& o) {
                          auto& g = xi->grad_buffer();
                          for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*argmax)[i]] += o.grad[i];
                        });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xi = x.impl();
  return make_op_result({1, 1, 1, 1}, {acc}, {x}, [xi](const detail::TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor flip_horizontal(const Tensor& x) {
  const Shape& s = x.shape();
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  const std::size_t rows = static_cast<std::size_t>(s.n) * s.c * s.h;
  for (std::size_t r = 0; r < rows; ++r) {
    for (int c = 0; c < s.w; ++c) out[r * s.w + c] = xd[r * s.w + (s.w - 1 - c)];
  }
  auto xi = x.impl();
  return make_op_result(s, std::move(out), {x}, [xi, rows](const detail::TensorImpl& o) {
    auto& g = xi->grad_buffer();
    const int w = o.shape.w;
    for (std::size_t r = 0; r < rows; ++r) {
      for (int c = 0; c < w; ++c) g[r * w + (w - 1 - c)] += o.grad[r * w + c];
    }
  });
}

Tensor softmax_channels(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(s);
  const auto xd = x.data();
  auto od = out.data();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, xd[base + c * plane + i]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double e = std::exp(xd[base + c * plane + i] - mx);
        od[base + c * plane + i] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) od[base + c * plane + i] /= z;
    }
  }
  return out;
}

}  // namespace hopa
