#pragma once

// Minimal convolutional building blocks for the built-in toy detector.
// Float storage, CHW layout, stride-1 "same" convolutions and 2x2 max pooling.

#include <cmath>
#include <cstdint>
#include <vector>

#include "appa/rng.hpp"

namespace appa::nn {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int height, int width) : c(channels), h(height), w(width), v(std::size_t(channels) * height * width, 0.0f) {}
  void resize(int channels, int height, int width) {
    c = channels;
    h = height;
    w = width;
    v.assign(std::size_t(channels) * height * width, 0.0f);
  }
  float* data() { return v.data(); }
  const float* data() const { return v.data(); }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

  /// He-uniform weights, zero bias.
  void init(Rng& rng);

  /// `col` receives the unfolded input and must be kept for backward.
  void forward(const Tensor& x, Tensor& y, std::vector<float>& col) const;

  /// Accumulates into `grad_w`/`grad_b` when non-null; writes `gx` when non-null.
  void backward(const std::vector<float>& col, const Tensor& gy, int in_h, int in_w, Tensor* gx, float* grad_w,
                float* grad_b) const;

  std::vector<float>& weight() { return weight_; }
  const std::vector<float>& weight() const { return weight_; }
  std::vector<float>& bias() { return bias_; }
  const std::vector<float>& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  std::vector<float> weight_;  // out x (in*k*k), row-major
  std::vector<float> bias_;
};

inline constexpr float kLeakySlope = 0.1f;

void leaky_relu_forward(Tensor& x);
/// `y` is the post-activation output from forward.
void leaky_relu_backward(const Tensor& y, Tensor& g);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax);
/// Scatters `gy` back through the recorded argmax. Accumulates into `gx` when it
/// already has the input shape, otherwise starts from zero.
void maxpool2_backward(const Tensor& gy, const std::vector<std::int32_t>& argmax, int in_c, int in_h, int in_w,
                       Tensor& gx);
/// k x k max pooling, stride 1, output the same size as the input (borders
/// only see in-image values). k must be odd.
void maxpool_same_forward(const Tensor& x, int k, Tensor& y, std::vector<std::int32_t>& argmax);

/// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  template <typename T>
  void step(T* params, const T* grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grads[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      params[i] = static_cast<T>(params[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }
  std::vector<double>& first_moment() { return m_; }
  std::vector<double>& second_moment() { return v_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace appa::nn

