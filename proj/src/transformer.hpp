// SPDX-License-Identifier: Apache-2.0
// Internal: forward/backward of the decoder-only transformer over a flat
// parameter vector. Instantiated for float (training) and double (gradients,
// evaluation).
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "arec/model.hpp"

namespace arec::model::detail {

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

struct ParamLayout {
  std::size_t tok = 0, pos = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& c) {
    const std::size_t V = c.vocab_size, E = c.embed_dim, H = c.hidden_dim, P = c.context_length;
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = at;
      at += n;
      return o;
    };
    tok = take((V + 1) * E);
    pos = take(P * E);
    for (int l = 0; l < c.num_layers; ++l) {
      LayerOffsets o{};
      o.ln1_g = take(E);
      o.ln1_b = take(E);
      o.w_qkv = take(E * 3 * E);
      o.b_qkv = take(3 * E);
      o.w_o = take(E * E);
      o.b_o = take(E);
      o.ln2_g = take(E);
      o.ln2_b = take(E);
      o.w_fc = take(E * H);
      o.b_fc = take(H);
      o.w_proj = take(H * E);
      o.b_proj = take(E);
      layers.push_back(o);
    }
    lnf_g = take(E);
    lnf_b = take(E);
    w_out = take(E * V);
    b_out = take(V);
    total = at;
  }
};

template <typename T>
class Transformer {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  using ConstMap = Eigen::Map<const Mat>;
  using GradMap = Eigen::Map<Mat>;
  using ConstRow = Eigen::Map<const RowVec>;
  using GradRow = Eigen::Map<RowVec>;

  Transformer(const ModelConfig& config, const T* params)
      : c_(config), layout_(config), p_(params), E_(config.embed_dim), H_(config.hidden_dim),
        V_(config.vocab_size), heads_(config.num_heads), dh_(config.embed_dim / config.num_heads),
        cache_(static_cast<std::size_t>(config.num_layers)) {}

  const ParamLayout& layout() const noexcept { return layout_; }

  /// Logits for every position of `input` (length 1..context_length).
  const Mat& forward(std::span<const int> input) {
    const int n = static_cast<int>(input.size());
    input_.assign(input.begin(), input.end());
    Mat x(n, E_);
    for (int i = 0; i < n; ++i)
      x.row(i) = row(layout_.tok + static_cast<std::size_t>(input_[i]) * E_, E_) +
                 row(layout_.pos + static_cast<std::size_t>(i) * E_, E_);

    const T scale = T(1) / std::sqrt(static_cast<T>(dh_));
    for (std::size_t l = 0; l < cache_.size(); ++l) {
      const LayerOffsets& o = layout_.layers[l];
      LayerCache& lc = cache_[l];
      layer_norm(x, o.ln1_g, o.ln1_b, lc.xhat1, lc.rstd1, lc.h1);
      lc.qkv.noalias() = lc.h1 * mat(o.w_qkv, E_, 3 * E_);
      lc.qkv.rowwise() += row(o.b_qkv, 3 * E_);
      lc.attn.resize(static_cast<std::size_t>(heads_));
      lc.o.resize(n, E_);
      for (int h = 0; h < heads_; ++h) {
        auto q = lc.qkv.middleCols(h * dh_, dh_);
        auto k = lc.qkv.middleCols(E_ + h * dh_, dh_);
        auto v = lc.qkv.middleCols(2 * E_ + h * dh_, dh_);
        Mat& a = lc.attn[static_cast<std::size_t>(h)];
        a.noalias() = (q * k.transpose()) * scale;
        for (int i = 0; i < n; ++i) {
          const T m = a.row(i).head(i + 1).maxCoeff();
          T sum = 0;
          for (int j = 0; j <= i; ++j) {
            const T e = std::exp(a(i, j) - m);
            a(i, j) = e;
            sum += e;
          }
          a.row(i).head(i + 1) /= sum;
          a.row(i).tail(n - i - 1).setZero();
        }
        lc.o.middleCols(h * dh_, dh_).noalias() = a * v;
      }
      x.noalias() += lc.o * mat(o.w_o, E_, E_);
      x.rowwise() += row(o.b_o, E_);

      layer_norm(x, o.ln2_g, o.ln2_b, lc.xhat2, lc.rstd2, lc.h2);
      lc.u.noalias() = lc.h2 * mat(o.w_fc, E_, H_);
      lc.u.rowwise() += row(o.b_fc, H_);
      lc.act = lc.u.unaryExpr([](T z) { return gelu(z); });
      x.noalias() += lc.act * mat(o.w_proj, H_, E_);
      x.rowwise() += row(o.b_proj, E_);
    }
    layer_norm(x, layout_.lnf_g, layout_.lnf_b, xhatf_, rstdf_, hf_);
    logits_.noalias() = hf_ * mat(layout_.w_out, E_, V_);
    logits_.rowwise() += row(layout_.b_out, V_);
    return logits_;
  }

  /// Accumulates d(loss)/d(params) into grad given d(loss)/d(logits) for the
  /// most recent forward call.
  void backward(const Mat& dlogits, T* grad) {
    const int n = static_cast<int>(input_.size());
    gmat(grad, layout_.w_out, E_, V_).noalias() += hf_.transpose() * dlogits;
    grow(grad, layout_.b_out, V_) += dlogits.colwise().sum();
    Mat dh = dlogits * mat(layout_.w_out, E_, V_).transpose();
    Mat dx(n, E_);
    layer_norm_backward(dh, xhatf_, rstdf_, layout_.lnf_g, layout_.lnf_b, grad, dx, false);

    const T scale = T(1) / std::sqrt(static_cast<T>(dh_));
    for (std::size_t li = cache_.size(); li-- > 0;) {
      const LayerOffsets& o = layout_.layers[li];
      LayerCache& lc = cache_[li];

      // MLP branch.
      gmat(grad, o.w_proj, H_, E_).noalias() += lc.act.transpose() * dx;
      grow(grad, o.b_proj, E_) += dx.colwise().sum();
      Mat du = dx * mat(o.w_proj, H_, E_).transpose();
      du = du.cwiseProduct(lc.u.unaryExpr([](T z) { return gelu_grad(z); }));
      gmat(grad, o.w_fc, E_, H_).noalias() += lc.h2.transpose() * du;
      grow(grad, o.b_fc, H_) += du.colwise().sum();
      Mat dh2 = du * mat(o.w_fc, E_, H_).transpose();
      layer_norm_backward(dh2, lc.xhat2, lc.rstd2, o.ln2_g, o.ln2_b, grad, dx, true);

      // Attention branch.
      gmat(grad, o.w_o, E_, E_).noalias() += lc.o.transpose() * dx;
      grow(grad, o.b_o, E_) += dx.colwise().sum();
      Mat dconcat = dx * mat(o.w_o, E_, E_).transpose();
      Mat dqkv(n, 3 * E_);
      for (int h = 0; h < heads_; ++h) {
        const Mat& a = lc.attn[static_cast<std::size_t>(h)];
        auto q = lc.qkv.middleCols(h * dh_, dh_);
        auto k = lc.qkv.middleCols(E_ + h * dh_, dh_);
        auto v = lc.qkv.middleCols(2 * E_ + h * dh_, dh_);
        auto dout = dconcat.middleCols(h * dh_, dh_);
        Mat da = dout * v.transpose();
        dqkv.middleCols(2 * E_ + h * dh_, dh_).noalias() = a.transpose() * dout;
        Mat ds = a.cwiseProduct(da);
        const auto rowdot = ds.rowwise().sum().eval();
        ds -= a.cwiseProduct(rowdot.replicate(1, n));
        ds *= scale;
        dqkv.middleCols(h * dh_, dh_).noalias() = ds * k;
        dqkv.middleCols(E_ + h * dh_, dh_).noalias() = ds.transpose() * q;
      }
      gmat(grad, o.w_qkv, E_, 3 * E_).noalias() += lc.h1.transpose() * dqkv;
      grow(grad, o.b_qkv, 3 * E_) += dqkv.colwise().sum();
      Mat dh1 = dqkv * mat(o.w_qkv, E_, 3 * E_).transpose();
      layer_norm_backward(dh1, lc.xhat1, lc.rstd1, o.ln1_g, o.ln1_b, grad, dx, true);
    }

    for (int i = 0; i < n; ++i) {
      grow(grad, layout_.tok + static_cast<std::size_t>(input_[i]) * E_, E_) += dx.row(i);
      grow(grad, layout_.pos + static_cast<std::size_t>(i) * E_, E_) += dx.row(i);
    }
  }

  static T gelu(T z) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    return T(0.5) * z * (T(1) + std::tanh(c * (z + T(0.044715) * z * z * z)));
  }
  static T gelu_grad(T z) {
    const T c = static_cast<T>(0.7978845608028654);
    const T t = std::tanh(c * (z + T(0.044715) * z * z * z));
    return T(0.5) * (T(1) + t) + T(0.5) * z * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * z * z);
  }

 private:
  struct LayerCache {
    Mat xhat1, h1, qkv, o, xhat2, h2, u, act;
    std::vector<Mat> attn;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1, rstd2;
  };

  ConstMap mat(std::size_t off, int r, int c) const { return ConstMap(p_ + off, r, c); }
  ConstRow row(std::size_t off, int n) const { return ConstRow(p_ + off, n); }
  static GradMap gmat(T* g, std::size_t off, int r, int c) { return GradMap(g + off, r, c); }
  static GradRow grow(T* g, std::size_t off, int n) { return GradRow(g + off, n); }

  void layer_norm(const Mat& x, std::size_t g, std::size_t b, Mat& xhat, Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd,
                  Mat& out) const {
    const int n = static_cast<int>(x.rows());
    xhat.resize(n, E_);
    rstd.resize(n);
    for (int i = 0; i < n; ++i) {
      const T mean = x.row(i).mean();
      const T var = (x.row(i).array() - mean).square().mean();
      rstd(i) = T(1) / std::sqrt(var + static_cast<T>(1e-5));
      xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
    }
    out = (xhat.array().rowwise() * row(g, E_).array()).rowwise() + row(b, E_).array();
  }

  // dx (+)= LN'(dy); accumulates gain/bias gradients.
  void layer_norm_backward(const Mat& dy, const Mat& xhat, const Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd,
                           std::size_t g, std::size_t b, T* grad, Mat& dx, bool accumulate) const {
    grow(grad, g, E_) += dy.cwiseProduct(xhat).colwise().sum();
    grow(grad, b, E_) += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * row(g, E_).array();
    const int n = static_cast<int>(dy.rows());
    if (!accumulate) dx.setZero(n, E_);
    for (int i = 0; i < n; ++i) {
      const T m1 = dxhat.row(i).mean();
      const T m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<T>(E_);
      dx.row(i).array() += rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
  }

  ModelConfig c_;
  ParamLayout layout_;
  const T* p_;
  int E_, H_, V_, heads_, dh_;
  std::vector<int> input_;
  std::vector<LayerCache> cache_;
  Mat xhatf_, hf_, logits_;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstdf_;
};

}  // namespace arec::model::detail
