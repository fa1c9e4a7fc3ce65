#pragma once

// Model parameters live in one flat vector of doubles. Each named block is a
// column-major matrix at a fixed offset; the block order below is also the
// on-disk order of checkpoints.
//
//   embed.W_E            vocab x d_model
//   pos_embed.W_pos      context x d_model
//   for each layer l:
//     blocks.l.ln1.w     d_model
//     blocks.l.ln1.b     d_model
//     blocks.l.attn.W_Q  d_model x (n_heads * d_head)
//     blocks.l.attn.W_K  d_model x (n_heads * d_head)
//     blocks.l.attn.W_V  d_model x (n_heads * d_head)
//     blocks.l.attn.W_O  (n_heads * d_head) x d_model
//     blocks.l.ln2.w     d_model
//     blocks.l.ln2.b     d_model
//     blocks.l.mlp.W_in  d_model x d_mlp
//     blocks.l.mlp.b_in  d_mlp
//     blocks.l.mlp.W_out d_mlp x d_model
//     blocks.l.mlp.b_out d_model
//   ln_final.w           d_model
//   ln_final.b           d_model
//   unembed.W_U          d_model x vocab

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bsg/rng.hpp"
#include "bsg/transformer/config.hpp"

namespace bsg::nn {

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

enum class BlockKind { Embed, PosEmbed, LnGain, LnBias, AttnQ, AttnK, AttnV, AttnO, MlpIn, MlpInBias, MlpOut, MlpOutBias, Unembed };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Embed: return "embed";
    case BlockKind::PosEmbed: return "pos_embed";
    case BlockKind::LnGain: return "ln_gain";
    case BlockKind::LnBias: return "ln_bias";
    case BlockKind::AttnQ: return "attn_q";
    case BlockKind::AttnK: return "attn_k";
    case BlockKind::AttnV: return "attn_v";
    case BlockKind::AttnO: return "attn_o";
    case BlockKind::MlpIn: return "mlp_in";
    case BlockKind::MlpInBias: return "mlp_in_bias";
    case BlockKind::MlpOut: return "mlp_out";
    case BlockKind::MlpOutBias: return "mlp_out_bias";
    case BlockKind::Unembed: return "unembed";
  }
  return "?";
}

struct ParamBlock {
  std::string name;
  BlockKind kind;
  std::size_t offset;
  int rows;
  int cols;
  int fan_in;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct LayerOffsets {
  std::size_t ln1_w, ln1_b, w_qkv, w_o, ln2_w, ln2_b, w_in, b_in, w_out, b_out;
};

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    const int hd = cfg.n_heads * cfg.d_head;
    embed_ = add("embed.W_E", BlockKind::Embed, cfg.vocab_size, d, cfg.vocab_size);
    pos_ = add("pos_embed.W_pos", BlockKind::PosEmbed, cfg.context_length, d, cfg.context_length);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      LayerOffsets o{};
      o.ln1_w = add(p + "ln1.w", BlockKind::LnGain, d, 1, 0);
      o.ln1_b = add(p + "ln1.b", BlockKind::LnBias, d, 1, 0);
      o.w_qkv = add(p + "attn.W_Q", BlockKind::AttnQ, d, hd, d);
      add(p + "attn.W_K", BlockKind::AttnK, d, hd, d);
      add(p + "attn.W_V", BlockKind::AttnV, d, hd, d);
      o.w_o = add(p + "attn.W_O", BlockKind::AttnO, hd, d, hd);
      o.ln2_w = add(p + "ln2.w", BlockKind::LnGain, d, 1, 0);
      o.ln2_b = add(p + "ln2.b", BlockKind::LnBias, d, 1, 0);
      o.w_in = add(p + "mlp.W_in", BlockKind::MlpIn, d, cfg.d_mlp, d);
      o.b_in = add(p + "mlp.b_in", BlockKind::MlpInBias, cfg.d_mlp, 1, 0);
      o.w_out = add(p + "mlp.W_out", BlockKind::MlpOut, cfg.d_mlp, d, cfg.d_mlp);
      o.b_out = add(p + "mlp.b_out", BlockKind::MlpOutBias, d, 1, 0);
      layers_.push_back(o);
    }
    lnf_w_ = add("ln_final.w", BlockKind::LnGain, d, 1, 0);
    lnf_b_ = add("ln_final.b", BlockKind::LnBias, d, 1, 0);
    unembed_ = add("unembed.W_U", BlockKind::Unembed, d, cfg.vocab_size, d);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }

  std::size_t embed() const { return embed_; }
  std::size_t pos_embed() const { return pos_; }
  const LayerOffsets& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  std::size_t ln_final_w() const { return lnf_w_; }
  std::size_t ln_final_b() const { return lnf_b_; }
  std::size_t unembed() const { return unembed_; }

 private:
  std::size_t add(std::string name, BlockKind kind, int rows, int cols, int fan_in) {
    const std::size_t off = total_;
    blocks_.push_back(ParamBlock{std::move(name), kind, off, rows, cols, fan_in});
    total_ += blocks_.back().size();
    return off;
  }

  ModelConfig cfg_;
  std::vector<ParamBlock> blocks_;
  std::vector<LayerOffsets> layers_;
  std::size_t total_ = 0;
  std::size_t embed_ = 0, pos_ = 0, lnf_w_ = 0, lnf_b_ = 0, unembed_ = 0;
};

// Flat storage plus typed views. Also used for gradients.
// Storage is over-aligned so every block sits at the same alignment on every
// run; Eigen's vectorized reductions peel differently otherwise and results
// stop being bit-reproducible.
using ParamStorage = std::vector<double, Eigen::aligned_allocator<double>>;

class ParamVector {
 public:
  explicit ParamVector(const ModelConfig& cfg) : layout_(cfg), data_(layout_.total(), 0.0) {}

  const ParamLayout& layout() const { return layout_; }
  const ModelConfig& config() const { return layout_.config(); }
  ParamStorage& data() { return data_; }
  const ParamStorage& data() const { return data_; }

  MatMap mat(std::size_t offset, int rows, int cols) { return MatMap(data_.data() + offset, rows, cols); }
  ConstMatMap mat(std::size_t offset, int rows, int cols) const {
    return ConstMatMap(data_.data() + offset, rows, cols);
  }
  VecMap vec(std::size_t offset, int n) { return VecMap(data_.data() + offset, n); }
  ConstVecMap vec(std::size_t offset, int n) const { return ConstVecMap(data_.data() + offset, n); }

  MatMap block(const std::string& name) {
    for (const auto& b : layout_.blocks()) {
      if (b.name == name) return mat(b.offset, b.rows, b.cols);
    }
    fail(ErrorCode::InvalidArgument, "no parameter block '" + name + "'");
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) { return a.data_ == b.data_; }

 private:
  ParamLayout layout_;
  ParamStorage data_;
};

using ModelParams = ParamVector;
using Gradients = ParamVector;

// Zero-mean Gaussian weights with standard deviation 1/sqrt(fan_in); layer
// norm gains 1; all biases 0. Entries are drawn in storage order.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  SplitMix64 rng(derive_seed(seed, "init"));
  for (const auto& b : p.layout().blocks()) {
    double* dst = p.data().data() + b.offset;
    switch (b.kind) {
      case BlockKind::LnGain:
        std::fill(dst, dst + b.size(), 1.0);
        break;
      case BlockKind::LnBias:
      case BlockKind::MlpInBias:
      case BlockKind::MlpOutBias:
        std::fill(dst, dst + b.size(), 0.0);
        break;
      default: {
        const double scale = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
        for (std::size_t i = 0; i < b.size(); ++i) dst[i] = scale * rng.normal();
      }
    }
  }
  return p;
}

}  // namespace bsg::nn
