#include "appa/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>

namespace appa::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const Tensor& x, int k, std::vector<float>& col) {
  const int pad = k / 2;
  const int hw = x.h * x.w;
  col.assign(std::size_t(x.c) * k * k * hw, 0.0f);
  for (int ci = 0; ci < x.c; ++ci) {
    const float* src = x.data() + std::size_t(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col.data() + (std::size_t(ci) * k * k + ky * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < x.h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= x.h) continue;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(x.w, x.w - dx);
          const float* srow = src + std::size_t(sy) * x.w + dx;
          float* drow = dst + std::size_t(y) * x.w;
          for (int xx = x0; xx < x1; ++xx) drow[xx] = srow[xx];
        }
      }
    }
  }
}

void col2im(const std::vector<float>& col, int c, int h, int w, int k, Tensor& gx) {
  const int pad = k / 2;
  const int hw = h * w;
  gx.resize(c, h, w);
  for (int ci = 0; ci < c; ++ci) {
    float* dst = gx.data() + std::size_t(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col.data() + (std::size_t(ci) * k * k + ky * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          float* drow = dst + std::size_t(sy) * w + dx;
          const float* srow = src + std::size_t(y) * w;
          for (int xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      weight_(std::size_t(out_channels) * in_channels * kernel * kernel, 0.0f),
      bias_(std::size_t(out_channels), 0.0f) {}

void Conv2d::init(Rng& rng) {
  const double fan_in = double(in_) * k_ * k_;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& w : weight_) w = static_cast<float>(rng.uniform(-bound, bound));
  std::fill(bias_.begin(), bias_.end(), 0.0f);
}

void Conv2d::forward(const Tensor& x, Tensor& y, std::vector<float>& col) const {
  const int hw = x.h * x.w;
  const int kk = in_ * k_ * k_;
  y.resize(out_, x.h, x.w);
  const float* cols;
  if (k_ == 1) {
    col.assign(x.v.begin(), x.v.end());
  } else {
    im2col(x, k_, col);
  }
  cols = col.data();
  ConstMapMat W(weight_.data(), out_, kk);
  ConstMapMat C(cols, kk, hw);
  MapMat Y(y.data(), out_, hw);
  Y.noalias() = W * C;
  for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_[o];
}

void Conv2d::backward(const std::vector<float>& col, const Tensor& gy, int in_h, int in_w, Tensor* gx,
                      float* grad_w, float* grad_b) const {
  const int hw = in_h * in_w;
  const int kk = in_ * k_ * k_;
  ConstMapMat GY(gy.data(), out_, hw);
  if (grad_w) {
    ConstMapMat C(col.data(), kk, hw);
    MapMat GW(grad_w, out_, kk);
    GW.noalias() += GY * C.transpose();
  }
  if (grad_b) {
    for (int o = 0; o < out_; ++o) grad_b[o] += GY.row(o).sum();
  }
  if (gx) {
    ConstMapMat W(weight_.data(), out_, kk);
    if (k_ == 1) {
      gx->resize(in_, in_h, in_w);
      MapMat GX(gx->data(), in_, hw);
      GX.noalias() = W.transpose() * GY;
    } else {
      std::vector<float> gcol(std::size_t(kk) * hw);
      MapMat GC(gcol.data(), kk, hw);
      GC.noalias() = W.transpose() * GY;
      col2im(gcol, in_, in_h, in_w, k_, *gx);
    }
  }
}

void leaky_relu_forward(Tensor& x) {
  for (auto& v : x.v) v = v > 0.0f ? v : v * kLeakySlope;
}

void leaky_relu_backward(const Tensor& y, Tensor& g) {
  for (std::size_t i = 0; i < g.v.size(); ++i) {
    if (!(y.v[i] > 0.0f)) g.v[i] *= kLeakySlope;
  }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
  const int oh = x.h / 2;
  const int ow = x.w / 2;
  y.resize(x.c, oh, ow);
  argmax.assign(y.v.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    const float* src = x.data() + std::size_t(c) * x.h * x.w;
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx, ++o) {
        std::int32_t best = (2 * yy) * x.w + 2 * xx;
        float bv = src[best];
        const std::int32_t cand[3] = {best + 1, best + x.w, best + x.w + 1};
        for (auto idx : cand) {
          if (src[idx] > bv) {
            bv = src[idx];
            best = idx;
          }
        }
        y.v[o] = bv;
        argmax[o] = static_cast<std::int32_t>(c * x.h * x.w) + best;
      }
    }
  }
}

void maxpool2_backward(const Tensor& gy, const std::vector<std::int32_t>& argmax, int in_c, int in_h, int in_w,
                       Tensor& gx) {
  if (gx.c != in_c || gx.h != in_h || gx.w != in_w) gx.resize(in_c, in_h, in_w);
  for (std::size_t i = 0; i < gy.v.size(); ++i) gx.v[argmax[i]] += gy.v[i];
}

void maxpool_same_forward(const Tensor& x, int k, Tensor& y, std::vector<std::int32_t>& argmax) {
  const int r = k / 2;
  y.resize(x.c, x.h, x.w);
  argmax.assign(y.v.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    const std::int32_t base = c * x.h * x.w;
    const float* src = x.data() + base;
    for (int yy = 0; yy < x.h; ++yy) {
      for (int xx = 0; xx < x.w; ++xx, ++o) {
        std::int32_t best = yy * x.w + xx;
        float bv = src[best];
        for (int dy = std::max(0, yy - r); dy <= std::min(x.h - 1, yy + r); ++dy) {
          for (int dx = std::max(0, xx - r); dx <= std::min(x.w - 1, xx + r); ++dx) {
            const std::int32_t idx = dy * x.w + dx;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
        }
        y.v[o] = bv;
        argmax[o] = base + best;
      }
    }
  }
}

}  // namespace appa::nn
