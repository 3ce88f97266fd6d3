// Dense building blocks with explicit forward caches and analytic backward
// passes. Activations are row-major in the sense that every row is one
// sequence position: a T x d matrix holds T positions of width d.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "mcst/core.hpp"

namespace mcst {

using Mat = Eigen::MatrixXd;
using Row = Eigen::RowVectorXd;

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormParams {
  Row gain, bias;
};

struct AttentionParams {
  Mat wq, wk, wv, wo;
  Row bq, bk, bv, bo;
};

struct FeedForwardParams {
  Mat w1;
  Row b1;
  Mat w2;
  Row b2;
};

// Parameter visitors. `f(name, x...)` is called once per tensor with the
// matching member of every struct in the pack, so one visitor can walk a
// model and its gradient side by side.
template <class F, class... P>
void visit_ln(F& f, const std::string& p, P&... x) {
  f(p + ".gain", x.gain...);
  f(p + ".bias", x.bias...);
}

template <class F, class... P>
void visit_attn(F& f, const std::string& p, P&... x) {
  f(p + ".wq", x.wq...);
  f(p + ".bq", x.bq...);
  f(p + ".wk", x.wk...);
  f(p + ".bk", x.bk...);
  f(p + ".wv", x.wv...);
  f(p + ".bv", x.bv...);
  f(p + ".wo", x.wo...);
  f(p + ".bo", x.bo...);
}

template <class F, class... P>
void visit_ffn(F& f, const std::string& p, P&... x) {
  f(p + ".w1", x.w1...);
  f(p + ".b1", x.b1...);
  f(p + ".w2", x.w2...);
  f(p + ".b2", x.b2...);
}

inline LayerNormParams make_layer_norm(int d) { return {Row::Ones(d), Row::Zero(d)}; }

// ---------------------------------------------------------------- layer norm

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

inline Mat layer_norm(const LayerNormParams& p, const Mat& x, LayerNormCache& c) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  c.rstd = (var.array() + kLayerNormEps).rsqrt();
  c.xhat = centered.array().colwise() * c.rstd.array();
  Mat y = c.xhat.array().rowwise() * p.gain.array();
  y.rowwise() += p.bias;
  return y;
}

inline Mat layer_norm_backward(const LayerNormParams& p, const LayerNormCache& c, const Mat& dy,
                               LayerNormParams& g) {
  g.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * p.gain.array();
  const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
  const Eigen::VectorXd mean_dx = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Mat dx = dxhat.array() - c.xhat.array().colwise() * mean_dx.array();
  dx = dx.colwise() - mean_d;
  return dx.array().colwise() * c.rstd.array();
}

// ----------------------------------------------------------------- attention

struct AttentionCache {
  Mat xq, xkv, q, k, v, ctx;
  std::vector<Mat> probs;  // one Tq x Tk matrix per head
};

/// Multi-head scaled dot-product attention of queries from `xq` over keys
/// and values from `xkv`. `causal` hides keys after the query position;
/// `key_mask[j] == true` hides key j from every query.
inline Mat attention(const AttentionParams& p, const Mat& xq, const Mat& xkv, int heads, bool causal,
                     const std::vector<bool>* key_mask, AttentionCache& c) {
  const auto d = p.wq.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.xq = xq;
  c.xkv = xkv;
  c.q = (xq * p.wq).rowwise() + p.bq;
  c.k = (xkv * p.wk).rowwise() + p.bk;
  c.v = (xkv * p.wv).rowwise() + p.bv;
  c.ctx.resize(xq.rows(), d);
  c.probs.resize(static_cast<std::size_t>(heads));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int h = 0; h < heads; ++h) {
    Mat s = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.cols(); ++j)
        if ((causal && j > i) || (key_mask && (*key_mask)[static_cast<std::size_t>(j)]))
          s(i, j) = neg_inf;
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    c.ctx.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
    c.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat out = c.ctx * p.wo;
  out.rowwise() += p.bo;
  return out;
}

/// Accumulates parameter gradients into `g`; writes input gradients to
/// `dxq` and `dxkv` (for self-attention the caller adds them).
inline void attention_backward(const AttentionParams& p, const AttentionCache& c, const Mat& dout,
                               int heads, AttentionParams& g, Mat& dxq, Mat& dxkv) {
  const auto d = p.wq.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.wo += c.ctx.transpose() * dout;
  g.bo += dout.colwise().sum();
  const Mat dctx = dout * p.wo.transpose();
  Mat dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat& prob = c.probs[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    const Mat dprob = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = prob.transpose() * dctx_h;
    const Eigen::VectorXd row_dot = (dprob.array() * prob.array()).rowwise().sum();
    const Mat ds = prob.array() * (dprob.colwise() - row_dot).array();
    dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh) * scale;
    dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh) * scale;
  }
  g.wq += c.xq.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk += c.xkv.transpose() * dk;
  g.bk += dk.colwise().sum();
  g.wv += c.xkv.transpose() * dv;
  g.bv += dv.colwise().sum();
  dxq = dq * p.wq.transpose();
  dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
}

// -------------------------------------------------------------- feed-forward

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct FeedForwardCache {
  Mat x, pre, act;
};

inline Mat feed_forward(const FeedForwardParams& p, const Mat& x, FeedForwardCache& c) {
  c.x = x;
  c.pre = (x * p.w1).rowwise() + p.b1;
  c.act = c.pre.unaryExpr([](double v) { return gelu(v); });
  Mat out = c.act * p.w2;
  out.rowwise() += p.b2;
  return out;
}

inline Mat feed_forward_backward(const FeedForwardParams& p, const FeedForwardCache& c,
                                 const Mat& dout, FeedForwardParams& g) {
  g.w2 += c.act.transpose() * dout;
  g.b2 += dout.colwise().sum();
  const Mat dpre =
      (dout * p.w2.transpose()).array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  g.w1 += c.x.transpose() * dpre;
  g.b1 += dpre.colwise().sum();
  return dpre * p.w1.transpose();
}

// -------------------------------------------------------------- positions

/// Fixed sinusoidal encodings: even columns sin, odd columns cos.
inline Mat sinusoidal_positions(Eigen::Index length, Eigen::Index d) {
  Mat pe(length, d);
  for (Eigen::Index pos = 0; pos < length; ++pos)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe(pos, i) = i % 2 == 0 ? std::sin(static_cast<double>(pos) * rate)
                              : std::cos(static_cast<double>(pos) * rate);
    }
  return pe;
}

}  // namespace mcst
