#pragma once

// HMM JSON files:
//   {"states": ["S0", ...], "vocab": ["0", ...],
//    "matrices": {"0": [[...], ...], "1": [[...], ...]}}
// Loading always goes through validate_hmm.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsg/hmm.hpp"

namespace bsg {

inline nlohmann::ordered_json hmm_to_json(const TokenLabeledHmm& hmm) {
  nlohmann::ordered_json j;
  j["states"] = hmm.state_names();
  j["vocab"] = hmm.vocab();
  nlohmann::ordered_json mats = nlohmann::ordered_json::object();
  for (int x = 0; x < hmm.vocab_size(); ++x) {
    const auto& m = hmm.matrix(x);
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
      rows.push_back(row);
    }
    mats[hmm.vocab()[static_cast<std::size_t>(x)]] = rows;
  }
  j["matrices"] = mats;
  return j;
}

inline TokenLabeledHmm hmm_from_json(const nlohmann::json& j) {
  try {
    auto states = j.at("states").get<std::vector<std::string>>();
    auto vocab = j.at("vocab").get<std::vector<std::string>>();
    const auto& mats = j.at("matrices");
    std::vector<Eigen::MatrixXd> raw;
    for (const auto& tok : vocab) {
      if (!mats.contains(tok)) fail(ErrorCode::ShapeMismatch, "no matrix for token '" + tok + "'");
      const auto rows = mats.at(tok).get<std::vector<std::vector<double>>>();
      const auto r = static_cast<Eigen::Index>(rows.size());
      const auto c = r == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != c) {
          fail(ErrorCode::ShapeMismatch, "ragged matrix for token '" + tok + "'");
        }
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      }
      raw.push_back(std::move(m));
    }
    return validate_hmm(std::move(raw), std::move(states), std::move(vocab));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed HMM JSON: ") + e.what());
  }
}

inline TokenLabeledHmm load_hmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return hmm_from_json(j);
}

// nlohmann emits the shortest decimal that round-trips each double exactly.
inline void save_hmm(const TokenLabeledHmm& hmm, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << hmm_to_json(hmm).dump(2) << "\n";
}

}  // namespace bsg
