#include <Eigen/Dense>

#include <stdexcept>

#include "ad/tensor.hpp"

namespace storygen::ad {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeometry {
  int batch, channels, height, width;
  int kh, kw, stride, pad;
  int out_h, out_w;
};

ConvGeometry make_geometry(const char* op, const std::vector<int>& x_shape, int kh, int kw,
                           int stride, int pad) {
  if (x_shape.size() != 4) throw std::invalid_argument(std::string(op) + ": input must be 4-D");
  ConvGeometry g{x_shape[0], x_shape[1], x_shape[2], x_shape[3], kh, kw, stride, pad, 0, 0};
  const int eff_h = g.height + 2 * pad - kh;
  const int eff_w = g.width + 2 * pad - kw;
  if (eff_h < 0 || eff_w < 0 || eff_h % stride != 0 || eff_w % stride != 0)
    throw std::invalid_argument(std::string(op) + ": kernel/stride/pad do not tile the input");
  g.out_h = eff_h / stride + 1;
  g.out_w = eff_w / stride + 1;
  return g;
}

// [B,C,H,W] -> [B*oh*ow, C*kh*kw]
std::vector<real> im2col(const std::vector<real>& x, const ConvGeometry& g) {
  const size_t ckk = static_cast<size_t>(g.channels) * g.kh * g.kw;
  std::vector<real> cols(static_cast<size_t>(g.batch) * g.out_h * g.out_w * ckk, 0.0);
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        real* row = cols.data() + ((static_cast<size_t>(b) * g.out_h + oy) * g.out_w + ox) * ckk;
        for (int c = 0; c < g.channels; ++c) {
          const real* plane =
              x.data() + (static_cast<size_t>(b) * g.channels + c) * g.height * g.width;
          for (int ky = 0; ky < g.kh; ++ky) {
            const int y = oy * g.stride + ky - g.pad;
            for (int kx = 0; kx < g.kw; ++kx) {
              const int xx = ox * g.stride + kx - g.pad;
              if (y >= 0 && y < g.height && xx >= 0 && xx < g.width)
                row[(static_cast<size_t>(c) * g.kh + ky) * g.kw + kx] =
                    plane[static_cast<size_t>(y) * g.width + xx];
            }
          }
        }
      }
    }
  }
  return cols;
}

// adjoint of im2col: scatter-add columns back into the image layout
void col2im_add(const std::vector<real>& cols, const ConvGeometry& g, std::vector<real>& x) {
  const size_t ckk = static_cast<size_t>(g.channels) * g.kh * g.kw;
  for (int b = 0; b < g.batch; ++b) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const real* row =
            cols.data() + ((static_cast<size_t>(b) * g.out_h + oy) * g.out_w + ox) * ckk;
        for (int c = 0; c < g.channels; ++c) {
          real* plane = x.data() + (static_cast<size_t>(b) * g.channels + c) * g.height * g.width;
          for (int ky = 0; ky < g.kh; ++ky) {
            const int y = oy * g.stride + ky - g.pad;
            if (y < 0 || y >= g.height) continue;
            for (int kx = 0; kx < g.kw; ++kx) {
              const int xx = ox * g.stride + kx - g.pad;
              if (xx >= 0 && xx < g.width)
                plane[static_cast<size_t>(y) * g.width + xx] +=
                    row[(static_cast<size_t>(c) * g.kh + ky) * g.kw + kx];
            }
          }
        }
      }
    }
  }
}

// [B,Cout,oh,ow] <-> [B*oh*ow, Cout]
void rows_from_nchw(const std::vector<real>& x, int batch, int channels, int spatial,
                    std::vector<real>& rows) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      const real* src = x.data() + (static_cast<size_t>(b) * channels + c) * spatial;
      for (int s = 0; s < spatial; ++s)
        rows[(static_cast<size_t>(b) * spatial + s) * channels + c] = src[s];
    }
}

void nchw_from_rows_add(const std::vector<real>& rows, int batch, int channels, int spatial,
                        std::vector<real>& x) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      real* dst = x.data() + (static_cast<size_t>(b) * channels + c) * spatial;
      for (int s = 0; s < spatial; ++s)
        dst[s] += rows[(static_cast<size_t>(b) * spatial + s) * channels + c];
    }
}

Tensor finish_conv(const char* op, std::vector<int> shape, std::vector<real>&& value,
                   std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  check_all_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs)
      if (t.requires_grad()) {
        any = true;
        node->parents.push_back(t.node());
      }
    if (any) {
      node->requires_grad = true;
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(node);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  if (weight.ndim() != 4) throw std::invalid_argument("conv2d: weight must be 4-D");
  const int c_out = weight.dim(0), c_in = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (x.ndim() != 4 || x.dim(1) != c_in)
    throw std::invalid_argument("conv2d: input channels do not match weight");
  if (bias.size() != c_out) throw std::invalid_argument("conv2d: bias must have one entry per output channel");
  const ConvGeometry g = make_geometry("conv2d", x.shape(), kh, kw, stride, pad);
  const int ckk = c_in * kh * kw;
  const int out_rows_n = g.batch * g.out_h * g.out_w;

  auto cols = std::make_shared<std::vector<real>>(im2col(x.data(), g));
  std::vector<real> rows(static_cast<size_t>(out_rows_n) * c_out);
  MapMat(rows.data(), out_rows_n, c_out).noalias() =
      CMapMat(cols->data(), out_rows_n, ckk) *
      CMapMat(weight.data().data(), c_out, ckk).transpose();
  for (int r = 0; r < out_rows_n; ++r)
    for (int c = 0; c < c_out; ++c) rows[static_cast<size_t>(r) * c_out + c] += bias.data()[static_cast<size_t>(c)];

  const int spatial = g.out_h * g.out_w;
  std::vector<real> out(static_cast<size_t>(g.batch) * c_out * spatial);
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < c_out; ++c) {
      real* dst = out.data() + (static_cast<size_t>(b) * c_out + c) * spatial;
      for (int s = 0; s < spatial; ++s)
        dst[s] = rows[(static_cast<size_t>(b) * spatial + s) * c_out + c];
    }

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return finish_conv(
      "conv2d", {g.batch, c_out, g.out_h, g.out_w}, std::move(out), {x, weight, bias},
      [xn, wn, bn, cols, g, c_out, ckk, out_rows_n, spatial](Node& self) {
        std::vector<real> d_rows(static_cast<size_t>(out_rows_n) * c_out);
        rows_from_nchw(self.grad, g.batch, c_out, spatial, d_rows);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int r = 0; r < out_rows_n; ++r)
            for (int c = 0; c < c_out; ++c)
              bn->grad[static_cast<size_t>(c)] += d_rows[static_cast<size_t>(r) * c_out + c];
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          MapMat(wn->grad.data(), c_out, ckk).noalias() +=
              CMapMat(d_rows.data(), out_rows_n, c_out).transpose() *
              CMapMat(cols->data(), out_rows_n, ckk);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<real> d_cols(static_cast<size_t>(out_rows_n) * ckk);
          MapMat(d_cols.data(), out_rows_n, ckk).noalias() =
              CMapMat(d_rows.data(), out_rows_n, c_out) * CMapMat(wn->value.data(), c_out, ckk);
          col2im_add(d_cols, g, xn->grad);
        }
      });
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad) {
  if (weight.ndim() != 4) throw std::invalid_argument("conv2d_transpose: weight must be 4-D");
  const int c_in = weight.dim(0), c_out = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (x.ndim() != 4 || x.dim(1) != c_in)
    throw std::invalid_argument("conv2d_transpose: input channels do not match weight");
  if (bias.size() != c_out)
    throw std::invalid_argument("conv2d_transpose: bias must have one entry per output channel");
  const int b_n = x.dim(0), h_in = x.dim(2), w_in = x.dim(3);
  const int h_out = (h_in - 1) * stride - 2 * pad + kh;
  const int w_out = (w_in - 1) * stride - 2 * pad + kw;
  if (h_out <= 0 || w_out <= 0)
    throw std::invalid_argument("conv2d_transpose: output size would be non-positive");
  // geometry of the adjoint convolution: conv([B,Cout,h_out,w_out]) -> [.., h_in, w_in]
  const ConvGeometry g = make_geometry("conv2d_transpose", {b_n, c_out, h_out, w_out}, kh, kw,
                                       stride, pad);
  const int ckk = c_out * kh * kw;
  const int in_spatial = h_in * w_in;
  const int rows_n = b_n * in_spatial;

  auto x_rows = std::make_shared<std::vector<real>>(static_cast<size_t>(rows_n) * c_in);
  rows_from_nchw(x.data(), b_n, c_in, in_spatial, *x_rows);
  std::vector<real> cols(static_cast<size_t>(rows_n) * ckk);
  MapMat(cols.data(), rows_n, ckk).noalias() =
      CMapMat(x_rows->data(), rows_n, c_in) * CMapMat(weight.data().data(), c_in, ckk);
  std::vector<real> out(static_cast<size_t>(b_n) * c_out * h_out * w_out, 0.0);
  col2im_add(cols, g, out);
  const int out_spatial = h_out * w_out;
  for (int b = 0; b < b_n; ++b)
    for (int c = 0; c < c_out; ++c) {
      real* dst = out.data() + (static_cast<size_t>(b) * c_out + c) * out_spatial;
      for (int s = 0; s < out_spatial; ++s) dst[s] += bias.data()[static_cast<size_t>(c)];
    }

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return finish_conv(
      "conv2d_transpose", {b_n, c_out, h_out, w_out}, std::move(out), {x, weight, bias},
      [xn, wn, bn, x_rows, g, c_in, c_out, ckk, rows_n, b_n, in_spatial, out_spatial](Node& self) {
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int b = 0; b < b_n; ++b)
            for (int c = 0; c < c_out; ++c) {
              const real* gp = self.grad.data() + (static_cast<size_t>(b) * c_out + c) * out_spatial;
              for (int s = 0; s < out_spatial; ++s) bn->grad[static_cast<size_t>(c)] += gp[s];
            }
        }
        std::vector<real> d_cols = im2col(self.grad, g);
        if (wn->requires_grad) {
          wn->ensure_grad();
          MapMat(wn->grad.data(), c_in, ckk).noalias() +=
              CMapMat(x_rows->data(), rows_n, c_in).transpose() *
              CMapMat(d_cols.data(), rows_n, ckk);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<real> d_x_rows(static_cast<size_t>(rows_n) * c_in);
          MapMat(d_x_rows.data(), rows_n, c_in).noalias() =
              CMapMat(d_cols.data(), rows_n, ckk) * CMapMat(wn->value.data(), c_in, ckk).transpose();
          nchw_from_rows_add(d_x_rows, b_n, c_in, in_spatial, xn->grad);
        }
      });
}

Tensor nchw_to_rows(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("nchw_to_rows: input must be 4-D");
  const int b = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  std::vector<real> out(x.data().size());
  rows_from_nchw(x.data(), b, c, spatial, out);
  auto xn = x.node();
  return finish_conv("nchw_to_rows", {b * spatial, c}, std::move(out), {x},
                     [xn, b, c, spatial](Node& self) {
                       xn->ensure_grad();
                       nchw_from_rows_add(self.grad, b, c, spatial, xn->grad);
                     });
}

Tensor rows_to_nchw(const Tensor& x, int batch, int channels, int height, int width) {
  if (x.ndim() != 2 || x.dim(1) != channels || x.dim(0) != batch * height * width)
    throw std::invalid_argument("rows_to_nchw: rows do not match requested image layout");
  const int spatial = height * width;
  std::vector<real> out(x.data().size(), 0.0);
  nchw_from_rows_add(x.data(), batch, channels, spatial, out);
  auto xn = x.node();
  return finish_conv("rows_to_nchw", {batch, channels, height, width}, std::move(out), {x},
                     [xn, batch, channels, spatial](Node& self) {
                       xn->ensure_grad();
                       std::vector<real> rows(self.grad.size());
                       rows_from_nchw(self.grad, batch, channels, spatial, rows);
                       for (size_t i = 0; i < rows.size(); ++i) xn->grad[i] += rows[i];
                     });
}

}  // namespace storygen::ad
