#pragma once

// Plain SGD on freshly sampled batches.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "bsg/hmm.hpp"
#include "bsg/transformer/model.hpp"

namespace bsg::nn {

// 0, 10, 30, 100, 300, ... up to `steps`, plus `steps` itself.
inline std::vector<std::int64_t> checkpoint_schedule(std::int64_t steps) {
  std::vector<std::int64_t> out{0};
  for (std::int64_t p = 10; p < steps; p *= 10) {
    out.push_back(p);
    if (3 * p < steps) out.push_back(3 * p);
  }
  if (steps > 0) out.push_back(steps);
  return out;
}

// `batch_size` sequences, each started from a hidden state drawn from `initial`.
inline TokenBatch sample_batch(const TokenLabeledHmm& hmm, const BeliefState& initial, int batch_size, int length,
                               std::uint64_t seed) {
  SplitMix64 rng(seed);
  TokenBatch batch{batch_size, length, {}};
  batch.tokens.reserve(static_cast<std::size_t>(batch_size) * static_cast<std::size_t>(length));
  for (int b = 0; b < batch_size; ++b) {
    const HiddenPath path = sample_sequence(hmm, length, rng, initial);
    batch.tokens.insert(batch.tokens.end(), path.tokens.begin(), path.tokens.end());
  }
  return batch;
}

inline std::uint64_t batch_seed(std::uint64_t train_seed, std::int64_t step) {
  return derive_seed(train_seed, "batch", static_cast<std::uint64_t>(step));
}

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;  // losses[s - 1] is the batch loss at update s
};

// Called with (step, params after `step` updates, loss of the last batch or NaN at step 0).
using CheckpointSink = std::function<void(std::int64_t, const ModelParams&, double)>;

inline TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, const TokenLabeledHmm& hmm,
                         const CheckpointSink& on_checkpoint = {}) {
  model_config.validate();
  train_config.validate();
  if (model_config.vocab_size != hmm.vocab_size()) {
    fail(ErrorCode::Config, "model vocab_size " + std::to_string(model_config.vocab_size) + " != process vocab " +
                                std::to_string(hmm.vocab_size()));
  }
  const BeliefState pi = stationary_distribution(hmm);
  const auto schedule = checkpoint_schedule(train_config.steps);
  std::size_t next_ckpt = 0;

  TrainResult result{init_model(model_config, train_config.seed), {}};
  result.losses.reserve(static_cast<std::size_t>(train_config.steps));
  ModelParams& params = result.params;
  Gradients grads(model_config);
  ForwardCache cache;

  if (on_checkpoint && schedule.front() == 0) {
    on_checkpoint(0, params, std::numeric_limits<double>::quiet_NaN());
    ++next_ckpt;
  }
  const double lr = train_config.learning_rate;
  const double wd = train_config.weight_decay;
  for (std::int64_t step = 1; step <= train_config.steps; ++step) {
    const TokenBatch batch = sample_batch(hmm, pi, train_config.batch_size, model_config.context_length,
                                          batch_seed(train_config.seed, step));
    const double loss = loss_and_grad(params, batch, cache, grads);
    if (!std::isfinite(loss)) fail(ErrorCode::DivergedLoss, "non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);
    auto& w = params.data();
    const auto& g = grads.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
    if (on_checkpoint && next_ckpt < schedule.size() && schedule[next_ckpt] == step) {
      on_checkpoint(step, params, loss);
      ++next_ckpt;
    }
  }
  return result;
}

}  // namespace bsg::nn
