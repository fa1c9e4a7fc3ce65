#pragma once

// Residual-stream capture over an enumerated prefix set.
//
// For every labeled prefix the model is run on exactly that prefix, and the
// residual vectors at its last position are recorded for each block output
// (resid_post_1 .. resid_post_L) and for the final residual before the last
// layer norm. In a pre-LN model the last two coincide; both tags are kept.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsg/msp.hpp"
#include "bsg/transformer/checkpoint.hpp"
#include "bsg/transformer/model.hpp"

namespace bsg::nn {

inline const std::string kFinalTag = "resid_final_pre_ln";
// Stands for every resid_post_* tag, in layer order.
inline const std::string kAllBlocksTag = "resid_post_all";

inline std::vector<std::string> layer_tags(const ModelConfig& cfg) {
  std::vector<std::string> tags;
  for (int l = 1; l <= cfg.n_layers; ++l) tags.push_back("resid_post_" + std::to_string(l));
  tags.push_back(kFinalTag);
  return tags;
}

struct ActivationDataset {
  std::vector<std::string> layer_tags;
  int d_model = 0;
  std::vector<RowMat> vectors;  // one rows x d_model matrix per tag, rows aligned with the prefix list
  RowMat logits;                // rows x vocab, at each prefix's last position

  std::size_t rows() const { return vectors.empty() ? 0 : static_cast<std::size_t>(vectors.front().rows()); }

  const RowMat& layer(const std::string& tag) const {
    for (std::size_t i = 0; i < layer_tags.size(); ++i) {
      if (layer_tags[i] == tag) return vectors[i];
    }
    fail(ErrorCode::InvalidArgument, "no layer tag '" + tag + "' in activation dataset");
  }

  std::vector<std::string> expand(const std::vector<std::string>& tags) const {
    std::vector<std::string> out;
    for (const auto& t : tags) {
      if (t != kAllBlocksTag) {
        out.push_back(t);
        continue;
      }
      for (const auto& own : layer_tags) {
        if (own != kFinalTag) out.push_back(own);
      }
    }
    return out;
  }

  // One layer as is; several (after alias expansion) concatenated.
  RowMat probe_input(const std::vector<std::string>& tags) const {
    const auto t = expand(tags);
    return t.size() == 1 ? layer(t.front()) : concatenated(t);
  }

  // Column-wise concatenation in the order given.
  RowMat concatenated(const std::vector<std::string>& tags) const {
    RowMat out(static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(tags.size()) * d_model);
    for (std::size_t i = 0; i < tags.size(); ++i) {
      out.middleCols(static_cast<Eigen::Index>(i) * d_model, d_model) = layer(tags[i]);
    }
    return out;
  }
};

inline ActivationDataset capture_activations(const ModelParams& params, const std::vector<LabeledPrefix>& prefixes,
                                             std::size_t chunk = 4096) {
  const ModelConfig& cfg = params.config();
  ActivationDataset ds;
  ds.layer_tags = layer_tags(cfg);
  ds.d_model = cfg.d_model;
  const auto n = static_cast<Eigen::Index>(prefixes.size());
  ds.vectors.assign(ds.layer_tags.size(), RowMat(n, cfg.d_model));
  ds.logits.resize(n, cfg.vocab_size);

  // Group by length so each forward call is a rectangular batch.
  std::vector<std::vector<std::size_t>> by_length(static_cast<std::size_t>(cfg.context_length) + 1);
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const std::size_t len = prefixes[i].tokens.size();
    if (len == 0) fail(ErrorCode::InvalidArgument, "empty prefix");
    if (len > static_cast<std::size_t>(cfg.context_length)) {
      fail(ErrorCode::SequenceTooLong, "prefix longer than the context window");
    }
    by_length[len].push_back(i);
  }

  ForwardCache cache;
  for (std::size_t len = 1; len < by_length.size(); ++len) {
    const auto& ids = by_length[len];
    for (std::size_t start = 0; start < ids.size(); start += chunk) {
      const std::size_t count = std::min(chunk, ids.size() - start);
      TokenBatch batch{static_cast<int>(count), static_cast<int>(len), {}};
      batch.tokens.reserve(count * len);
      for (std::size_t k = 0; k < count; ++k) {
        const auto& toks = prefixes[ids[start + k]].tokens;
        batch.tokens.insert(batch.tokens.end(), toks.begin(), toks.end());
      }
      forward(params, batch, cache);
      for (std::size_t k = 0; k < count; ++k) {
        const auto dst = static_cast<Eigen::Index>(ids[start + k]);
        const auto src = static_cast<Eigen::Index>(k * len + len - 1);
        for (int l = 0; l < cfg.n_layers; ++l) ds.vectors[static_cast<std::size_t>(l)].row(dst) = cache.resid_post(l).row(src);
        ds.vectors.back().row(dst) = cache.resid_final_pre_ln().row(src);
        ds.logits.row(dst) = cache.logits.row(src);
      }
    }
  }
  return ds;
}

// Expected next-token cross-entropy of the model under the process,
// averaged over prefix lengths [min_length, max_length]. Equals the
// expectation of the training loss when the range is 1..context-1.
inline double expected_model_loss(const ActivationDataset& ds, const std::vector<LabeledPrefix>& prefixes,
                                  int min_length, int max_length) {
  double total = 0.0;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& p = prefixes[i];
    const int len = static_cast<int>(p.tokens.size());
    if (len < min_length || len > max_length) continue;
    const auto row = ds.logits.row(static_cast<Eigen::Index>(i));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    double ce = 0.0;
    for (Eigen::Index x = 0; x < row.size(); ++x) ce += p.next_token_dist[x] * (lse - row[x]);
    total += p.prefix_probability * ce;
  }
  return total / static_cast<double>(max_length - min_length + 1);
}

// File layout: 8-byte little-endian header length, JSON header, then for
// each layer tag a rows x d_model block of float64-le (row-major), then the
// rows x vocab logits block.
inline void save_activations(const ActivationDataset& ds, const std::vector<std::string>& sequences,
                             const std::vector<int>& positions, const std::filesystem::path& path) {
  nlohmann::ordered_json h;
  h["format"] = "bsg-activations-v1";
  h["rows"] = ds.rows();
  h["d_model"] = ds.d_model;
  h["vocab_size"] = ds.logits.cols();
  h["layer_tags"] = ds.layer_tags;
  h["dtype"] = "float64-le";
  h["sequences"] = sequences;
  h["positions"] = positions;
  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  const std::uint64_t len = header.size();
  unsigned char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& m : ds.vectors) write_f64_le(out, m.data(), static_cast<std::size_t>(m.size()));
  write_f64_le(out, ds.logits.data(), static_cast<std::size_t>(ds.logits.size()));
}

struct LoadedActivations {
  ActivationDataset dataset;
  std::vector<std::string> sequences;
  std::vector<int> positions;
};

inline LoadedActivations load_activations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  if (!in) fail(ErrorCode::Io, "truncated activation file");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(len_bytes[i]) << (8 * i);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  const auto h = nlohmann::json::parse(header);
  LoadedActivations out;
  auto& ds = out.dataset;
  ds.layer_tags = h.at("layer_tags").get<std::vector<std::string>>();
  ds.d_model = h.at("d_model").get<int>();
  const auto rows = h.at("rows").get<Eigen::Index>();
  for (std::size_t t = 0; t < ds.layer_tags.size(); ++t) {
    RowMat m(rows, ds.d_model);
    read_f64_le(in, m.data(), static_cast<std::size_t>(m.size()));
    ds.vectors.push_back(std::move(m));
  }
  ds.logits.resize(rows, h.at("vocab_size").get<Eigen::Index>());
  read_f64_le(in, ds.logits.data(), static_cast<std::size_t>(ds.logits.size()));
  out.sequences = h.at("sequences").get<std::vector<std::string>>();
  out.positions = h.at("positions").get<std::vector<int>>();
  return out;
}

}  // namespace bsg::nn
