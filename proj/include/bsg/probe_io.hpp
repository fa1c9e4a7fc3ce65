#pragma once

// Probe files: a JSON manifest next to a binary file holding W (row-major,
// |S| x d) followed by c, as float64-le.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "bsg/probe.hpp"
#include "bsg/transformer/checkpoint.hpp"

namespace bsg {

inline void save_probe(const AffineProbe& probe, const std::filesystem::path& manifest) {
  const auto bin_name = manifest.stem().string() + ".bin";
  nlohmann::ordered_json j;
  j["format"] = "bsg-probe-v1";
  j["input_dim"] = probe.input_dim();
  j["output_dim"] = probe.output_dim();
  j["layer_tags"] = probe.layer_tags;
  j["fit_mse"] = probe.fit_mse;
  j["rank"] = probe.rank;
  j["rank_deficient"] = probe.rank_deficient;
  j["dtype"] = "float64-le";
  j["layout"] = "W row-major, then c";
  j["data_file"] = bin_name;
  {
    std::ofstream out(manifest);
    if (!out) fail(ErrorCode::Io, "cannot write " + manifest.string());
    out << j.dump(2) << "\n";
  }
  std::ofstream bin(manifest.parent_path() / bin_name, std::ios::binary);
  if (!bin) fail(ErrorCode::Io, "cannot write probe data next to " + manifest.string());
  const RowMat w = probe.W;
  write_f64_le(bin, w.data(), static_cast<std::size_t>(w.size()));
  write_f64_le(bin, probe.c.data(), static_cast<std::size_t>(probe.c.size()));
}

inline AffineProbe load_probe(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::Io, "cannot open " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
    AffineProbe p;
    const auto s = j.at("output_dim").get<Eigen::Index>();
    const auto d = j.at("input_dim").get<Eigen::Index>();
    p.layer_tags = j.at("layer_tags").get<std::vector<std::string>>();
    p.fit_mse = j.at("fit_mse").get<double>();
    p.rank = j.at("rank").get<int>();
    p.rank_deficient = j.at("rank_deficient").get<bool>();
    std::ifstream bin(manifest.parent_path() / j.at("data_file").get<std::string>(), std::ios::binary);
    if (!bin) fail(ErrorCode::Io, "missing probe data for " + manifest.string());
    RowMat w(s, d);
    read_f64_le(bin, w.data(), static_cast<std::size_t>(w.size()));
    p.W = w;
    p.c.resize(s);
    read_f64_le(bin, p.c.data(), static_cast<std::size_t>(s));
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, manifest.string() + ": " + e.what());
  }
}

}  // namespace bsg
