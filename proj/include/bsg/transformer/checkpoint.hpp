#pragma once

// Checkpoints: step_<step>.json manifest next to step_<step>.bin, the flat
// parameter vector as little-endian IEEE-754 doubles in the block order of
// params.hpp (each block column-major).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsg/transformer/config.hpp"
#include "bsg/transformer/params.hpp"

namespace bsg {

inline std::uint64_t bswap64(std::uint64_t v) { return __builtin_bswap64(v); }

inline void write_f64_le(std::ostream& out, const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto bits = bswap64(std::bit_cast<std::uint64_t>(data[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) fail(ErrorCode::Io, "write failed");
}

inline void read_f64_le(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail(ErrorCode::Io, "truncated binary data");
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(bswap64(std::bit_cast<std::uint64_t>(data[i])));
  }
}

}  // namespace bsg

namespace bsg::nn {

inline std::string checkpoint_stem(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%09lld", static_cast<long long>(step));
  return buf;
}

struct CheckpointInfo {
  std::int64_t step = 0;
  std::filesystem::path manifest;
};

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params, std::int64_t step,
                            std::uint64_t seed, double loss) {
  std::filesystem::create_directories(dir);
  const std::string stem = checkpoint_stem(step);
  nlohmann::ordered_json j;
  j["format"] = "bsg-checkpoint-v1";
  j["config"] = nlohmann::json(params.config());
  j["step"] = step;
  j["seed"] = seed;
  if (std::isfinite(loss)) {
    j["loss"] = loss;
  } else {
    j["loss"] = nullptr;
  }
  j["dtype"] = "float64-le";
  j["layout"] = "column-major";
  j["data_file"] = stem + ".bin";
  j["num_params"] = params.data().size();
  auto blocks = nlohmann::ordered_json::array();
  for (const auto& b : params.layout().blocks()) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  j["blocks"] = std::move(blocks);
  {
    std::ofstream out(dir / (stem + ".json"));
    if (!out) fail(ErrorCode::Io, "cannot write checkpoint manifest in " + dir.string());
    out << j.dump(2) << "\n";
  }
  std::ofstream bin(dir / (stem + ".bin"), std::ios::binary);
  if (!bin) fail(ErrorCode::Io, "cannot write checkpoint data in " + dir.string());
  write_f64_le(bin, params.data().data(), params.data().size());
}

struct LoadedCheckpoint {
  ModelParams params;
  std::int64_t step;
  std::uint64_t seed;
  double loss;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::Io, "cannot open " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, manifest.string() + ": " + e.what());
  }
  ModelConfig cfg = j.at("config").get<ModelConfig>();
  ModelParams params(cfg);
  if (j.at("num_params").get<std::size_t>() != params.data().size()) {
    fail(ErrorCode::ShapeMismatch, "checkpoint parameter count does not match its config");
  }
  std::ifstream bin(manifest.parent_path() / j.at("data_file").get<std::string>(), std::ios::binary);
  if (!bin) fail(ErrorCode::Io, "missing checkpoint data for " + manifest.string());
  read_f64_le(bin, params.data().data(), params.data().size());
  const double loss = j.at("loss").is_null() ? std::nan("") : j.at("loss").get<double>();
  return LoadedCheckpoint{std::move(params), j.at("step").get<std::int64_t>(), j.at("seed").get<std::uint64_t>(), loss};
}

// Manifests in `dir`, ordered by step.
inline std::vector<CheckpointInfo> list_checkpoints(const std::filesystem::path& dir) {
  std::vector<CheckpointInfo> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("step_", 0) != 0 || entry.path().extension() != ".json") continue;
    out.push_back(CheckpointInfo{std::stoll(name.substr(5)), entry.path()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return out;
}

}  // namespace bsg::nn
