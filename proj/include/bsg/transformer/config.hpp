#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bsg/error.hpp"

namespace bsg::nn {

// Decoder-only, pre-layer-norm, ReLU MLP, causal attention, learned
// positional embeddings.
struct ModelConfig {
  int context_length = 10;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 1;
  int d_head = 8;
  int d_mlp = 256;
  int vocab_size = 3;
  double ln_eps = 1e-5;

  void validate() const {
    if (context_length < 2) fail(ErrorCode::Config, "context_length must be at least 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_head < 1 || d_mlp < 1 || vocab_size < 2) {
      fail(ErrorCode::Config, "model dimensions must be positive (vocab_size >= 2)");
    }
    if (!(ln_eps > 0.0)) fail(ErrorCode::Config, "ln_eps must be positive");
  }
};

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  std::int64_t steps = 50'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) fail(ErrorCode::Config, "batch_size must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorCode::Config, "learning_rate must be positive");
    if (weight_decay < 0.0) fail(ErrorCode::Config, "weight_decay must be non-negative");
    if (steps < 0) fail(ErrorCode::Config, "steps must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"context_length", c.context_length},
                     {"d_model", c.d_model},
                     {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},
                     {"d_head", c.d_head},
                     {"d_mlp", c.d_mlp},
                     {"vocab_size", c.vocab_size},
                     {"ln_eps", c.ln_eps},
                     {"activation", "relu"},
                     {"layer_norm", "pre"},
                     {"causal_mask", true}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.context_length = j.value("context_length", c.context_length);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_head = j.value("d_head", c.d_head);
  c.d_mlp = j.value("d_mlp", c.d_mlp);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"optimizer", "sgd"},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"steps", c.steps},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
}

}  // namespace bsg::nn
