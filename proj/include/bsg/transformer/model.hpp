#pragma once

// Forward and backward passes of the decoder-only transformer.
//
// Each block computes
//   resid_mid  = resid_pre + attn(LN1(resid_pre))
//   resid_post = resid_mid + mlp(LN2(resid_mid))
// and a final layer norm precedes the unembedding. Activations are stored
// row-major with row index b * length + t.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "bsg/error.hpp"
#include "bsg/types.hpp"
#include "bsg/transformer/params.hpp"

namespace bsg::nn {

using bsg::RowMat;

struct TokenBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> tokens;  // [b * length + t]

  int at(int b, int t) const { return tokens[static_cast<std::size_t>(b * length + t)]; }
  int rows() const { return batch * length; }

  static TokenBatch single(const std::vector<int>& seq) {
    return TokenBatch{1, static_cast<int>(seq.size()), seq};
  }
};

struct LayerNormCache {
  RowMat hat;
  Eigen::VectorXd rstd;
  RowMat out;
};

struct LayerCache {
  RowMat resid_pre;
  LayerNormCache ln1;
  RowMat qkv;      // N x 3*H*d_head, columns [Q | K | V]
  RowMat pattern;  // (B*H*T) x T attention probabilities
  RowMat z;        // N x H*d_head
  RowMat resid_mid;
  LayerNormCache ln2;
  RowMat pre_act;
  RowMat post_act;
  RowMat resid_post;
};

struct ForwardCache {
  int batch = 0;
  int length = 0;
  std::vector<LayerCache> layers;
  LayerNormCache ln_final;
  RowMat logits;  // N x vocab

  const RowMat& resid_post(int layer) const { return layers.at(static_cast<std::size_t>(layer)).resid_post; }
  const RowMat& resid_final_pre_ln() const { return layers.back().resid_post; }
};

namespace detail {

inline void layer_norm_forward(const RowMat& x, const ConstVecMap& gain, const ConstVecMap& bias, double eps,
                               LayerNormCache& c) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  c.hat = x.colwise() - mean;
  const Eigen::VectorXd var = c.hat.array().square().rowwise().mean();
  c.rstd = (var.array() + eps).rsqrt();
  c.hat = c.hat.array().colwise() * c.rstd.array();
  c.out = (c.hat.array().rowwise() * gain.transpose().array()).rowwise() + bias.transpose().array();
}

// Returns d(input); accumulates gain and bias gradients.
inline RowMat layer_norm_backward(const RowMat& dout, const ConstVecMap& gain, const LayerNormCache& c, VecMap dgain,
                                  VecMap dbias) {
  dgain += (dout.array() * c.hat.array()).colwise().sum().transpose().matrix();
  dbias += dout.colwise().sum().transpose();
  const RowMat dhat = dout.array().rowwise() * gain.transpose().array();
  const Eigen::VectorXd m1 = dhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dhat.array() * c.hat.array()).rowwise().mean();
  RowMat dx = (dhat.colwise() - m1) - (c.hat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

}  // namespace detail

inline void forward(const ModelParams& params, const TokenBatch& batch, ForwardCache& cache) {
  const ModelConfig& cfg = params.config();
  const ParamLayout& lay = params.layout();
  if (batch.length > cfg.context_length) {
    fail(ErrorCode::SequenceTooLong, "sequence of length " + std::to_string(batch.length) + " exceeds context " +
                                         std::to_string(cfg.context_length));
  }
  if (batch.length < 1 || batch.batch < 1) fail(ErrorCode::InvalidArgument, "empty batch");
  const int n = batch.rows();
  const int len = batch.length;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = cfg.d_head;
  const int hd = heads * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.batch = batch.batch;
  cache.length = len;
  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));

  const ConstMatMap w_e = params.mat(lay.embed(), cfg.vocab_size, d);
  const ConstMatMap w_pos = params.mat(lay.pos_embed(), cfg.context_length, d);
  RowMat x(n, d);
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < len; ++t) {
      const int tok = batch.at(b, t);
      if (tok < 0 || tok >= cfg.vocab_size) fail(ErrorCode::InvalidArgument, "token out of range");
      x.row(b * len + t) = w_e.row(tok) + w_pos.row(t);
    }
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerOffsets& o = lay.layer(l);
    LayerCache& c = cache.layers[static_cast<std::size_t>(l)];
    c.resid_pre = x;

    detail::layer_norm_forward(x, params.vec(o.ln1_w, d), params.vec(o.ln1_b, d), cfg.ln_eps, c.ln1);
    c.qkv.noalias() = c.ln1.out * params.mat(o.w_qkv, d, 3 * hd);
    c.pattern.resize(static_cast<Eigen::Index>(batch.batch) * heads * len, len);
    c.z.resize(n, hd);
    for (int b = 0; b < batch.batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(b * len, h * dh, len, dh);
        const auto k = c.qkv.block(b * len, hd + h * dh, len, dh);
        const auto v = c.qkv.block(b * len, 2 * hd + h * dh, len, dh);
        auto p = c.pattern.block((static_cast<Eigen::Index>(b) * heads + h) * len, 0, len, len);
        p.noalias() = (q * k.transpose()) * scale;
        for (int i = 0; i < len; ++i) {
          const double m = p.row(i).head(i + 1).maxCoeff();
          double sum = 0.0;
          for (int j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - m);
            sum += p(i, j);
          }
          p.row(i).head(i + 1) /= sum;
          p.row(i).tail(len - i - 1).setZero();
        }
        c.z.block(b * len, h * dh, len, dh).noalias() = p * v;
      }
    }
    c.resid_mid = c.resid_pre;
    c.resid_mid.noalias() += c.z * params.mat(o.w_o, hd, d);

    detail::layer_norm_forward(c.resid_mid, params.vec(o.ln2_w, d), params.vec(o.ln2_b, d), cfg.ln_eps, c.ln2);
    c.pre_act.noalias() = c.ln2.out * params.mat(o.w_in, d, cfg.d_mlp);
    c.pre_act.rowwise() += params.vec(o.b_in, cfg.d_mlp).transpose();
    c.post_act = c.pre_act.cwiseMax(0.0);
    c.resid_post = c.resid_mid;
    c.resid_post.noalias() += c.post_act * params.mat(o.w_out, cfg.d_mlp, d);
    c.resid_post.rowwise() += params.vec(o.b_out, d).transpose();
    x = c.resid_post;
  }

  detail::layer_norm_forward(x, params.vec(lay.ln_final_w(), d), params.vec(lay.ln_final_b(), d), cfg.ln_eps,
                             cache.ln_final);
  cache.logits.noalias() = cache.ln_final.out * params.mat(lay.unembed(), d, cfg.vocab_size);
}

inline ForwardCache forward(const ModelParams& params, const TokenBatch& batch) {
  ForwardCache cache;
  forward(params, batch, cache);
  return cache;
}

inline RowMat softmax_rows(const RowMat& logits) {
  RowMat p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  const Eigen::VectorXd s = p.rowwise().sum();
  return p.array().colwise() / s.array();
}

// Mean next-token cross-entropy over positions 0..length-2 of every sequence,
// each predicting the token that follows it. Fills d(loss)/d(logits) when
// `dlogits` is non-null.
inline double cross_entropy_loss(const RowMat& logits, const TokenBatch& batch, RowMat* dlogits = nullptr) {
  const int len = batch.length;
  if (len < 2) fail(ErrorCode::InvalidArgument, "loss needs sequences of length >= 2");
  const double count = static_cast<double>(batch.batch) * (len - 1);
  if (dlogits != nullptr) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t + 1 < len; ++t) {
      const int r = b * len + t;
      const int target = batch.at(b, t + 1);
      const double m = logits.row(r).maxCoeff();
      const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
      total += lse - logits(r, target);
      if (dlogits != nullptr) {
        dlogits->row(r) = (logits.row(r).array() - lse).exp() / count;
        (*dlogits)(r, target) -= 1.0 / count;
      }
    }
  }
  return total / count;
}

// Backpropagates d(loss)/d(logits) through a cached forward pass.
inline void backward(const ModelParams& params, const TokenBatch& batch, const ForwardCache& cache,
                     const RowMat& dlogits, Gradients& grads) {
  const ModelConfig& cfg = params.config();
  const ParamLayout& lay = params.layout();
  const int len = batch.length;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = cfg.d_head;
  const int hd = heads * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  grads.set_zero();

  grads.mat(lay.unembed(), d, cfg.vocab_size).noalias() = cache.ln_final.out.transpose() * dlogits;
  RowMat dx = dlogits * params.mat(lay.unembed(), d, cfg.vocab_size).transpose();
  dx = detail::layer_norm_backward(dx, params.vec(lay.ln_final_w(), d), cache.ln_final,
                                   grads.vec(lay.ln_final_w(), d), grads.vec(lay.ln_final_b(), d));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerOffsets& o = lay.layer(l);
    const LayerCache& c = cache.layers[static_cast<std::size_t>(l)];

    grads.mat(o.w_out, cfg.d_mlp, d).noalias() = c.post_act.transpose() * dx;
    grads.vec(o.b_out, d) = dx.colwise().sum().transpose();
    RowMat dpre = dx * params.mat(o.w_out, cfg.d_mlp, d).transpose();
    dpre = (c.pre_act.array() > 0.0).select(dpre, 0.0);
    grads.mat(o.w_in, d, cfg.d_mlp).noalias() = c.ln2.out.transpose() * dpre;
    grads.vec(o.b_in, cfg.d_mlp) = dpre.colwise().sum().transpose();
    const RowMat dln2 = dpre * params.mat(o.w_in, d, cfg.d_mlp).transpose();
    dx += detail::layer_norm_backward(dln2, params.vec(o.ln2_w, d), c.ln2, grads.vec(o.ln2_w, d),
                                      grads.vec(o.ln2_b, d));

    grads.mat(o.w_o, hd, d).noalias() = c.z.transpose() * dx;
    const RowMat dz = dx * params.mat(o.w_o, hd, d).transpose();
    RowMat dqkv = RowMat::Zero(c.qkv.rows(), c.qkv.cols());
    for (int b = 0; b < batch.batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto q = c.qkv.block(b * len, h * dh, len, dh);
        const auto k = c.qkv.block(b * len, hd + h * dh, len, dh);
        const auto v = c.qkv.block(b * len, 2 * hd + h * dh, len, dh);
        const auto p = c.pattern.block((static_cast<Eigen::Index>(b) * heads + h) * len, 0, len, len);
        const auto dzb = dz.block(b * len, h * dh, len, dh);
        const RowMat dp = dzb * v.transpose();
        dqkv.block(b * len, 2 * hd + h * dh, len, dh).noalias() = p.transpose() * dzb;
        const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
        const RowMat ds = (p.array() * (dp.colwise() - inner).array()) * scale;
        dqkv.block(b * len, h * dh, len, dh).noalias() = ds * k;
        dqkv.block(b * len, hd + h * dh, len, dh).noalias() = ds.transpose() * q;
      }
    }
    grads.mat(o.w_qkv, d, 3 * hd).noalias() = c.ln1.out.transpose() * dqkv;
    const RowMat dln1 = dqkv * params.mat(o.w_qkv, d, 3 * hd).transpose();
    dx += detail::layer_norm_backward(dln1, params.vec(o.ln1_w, d), c.ln1, grads.vec(o.ln1_w, d),
                                      grads.vec(o.ln1_b, d));
  }

  MatMap dw_e = grads.mat(lay.embed(), cfg.vocab_size, d);
  MatMap dw_pos = grads.mat(lay.pos_embed(), cfg.context_length, d);
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < len; ++t) {
      const int r = b * len + t;
      dw_e.row(batch.at(b, t)) += dx.row(r);
      dw_pos.row(t) += dx.row(r);
    }
  }
  if (!grads.all_finite()) fail(ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
}

// Mean next-token loss and its exact gradient for one batch.
inline double loss_and_grad(const ModelParams& params, const TokenBatch& batch, ForwardCache& cache,
                            Gradients& grads) {
  forward(params, batch, cache);
  RowMat dlogits;
  const double loss = cross_entropy_loss(cache.logits, batch, &dlogits);
  backward(params, batch, cache, dlogits, grads);
  return loss;
}

inline Gradients grad(const ModelParams& params, const TokenBatch& batch) {
  ForwardCache cache;
  Gradients g(params.config());
  loss_and_grad(params, batch, cache, g);
  return g;
}

inline double batch_loss(const ModelParams& params, const TokenBatch& batch) {
  ForwardCache cache;
  forward(params, batch, cache);
  return cross_entropy_loss(cache.logits, batch);
}

}  // namespace bsg::nn
