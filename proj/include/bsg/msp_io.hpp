#pragma once

// MSP export (JSON) and labeled-prefix export (CSV).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsg/msp.hpp"

namespace bsg {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sequence_key(const TokenLabeledHmm& hmm, const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) out += ' ';
    out += hmm.vocab()[static_cast<std::size_t>(seq[i])];
  }
  return out;
}

inline nlohmann::ordered_json msp_to_json(const TokenLabeledHmm& hmm, const MixedStatePresentation& msp) {
  nlohmann::ordered_json j;
  j["depth"] = msp.depth;
  j["dedup_tolerance"] = msp.dedup_tolerance;
  j["vocab"] = hmm.vocab();
  j["hidden_states"] = hmm.state_names();
  auto states = nlohmann::ordered_json::array();
  for (const auto& b : msp.states) {
    std::vector<double> v(b.probs().data(), b.probs().data() + b.size());
    states.push_back(v);
  }
  j["states"] = std::move(states);
  j["first_depth"] = msp.first_depth;
  auto edges = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < msp.edges.size(); ++s) {
    for (const auto& e : msp.edges[s]) {
      nlohmann::ordered_json je;
      je["from"] = s;
      je["token"] = hmm.vocab()[static_cast<std::size_t>(e.token)];
      if (e.next == MspEdge::kBeyondHorizon) {
        je["to"] = nullptr;
      } else {
        je["to"] = e.next;
      }
      je["probability"] = e.probability;
      edges.push_back(std::move(je));
    }
  }
  j["edges"] = std::move(edges);
  // Keys are space-separated token names; the empty key is the initial belief.
  auto index = nlohmann::ordered_json::object();
  for (const auto& [seq, s] : msp.sequence_index) index[sequence_key(hmm, seq)] = s;
  j["sequence_index"] = std::move(index);
  return j;
}

inline void save_msp(const TokenLabeledHmm& hmm, const MixedStatePresentation& msp,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << msp_to_json(hmm, msp).dump() << "\n";
}

// Columns: sequence,position,belief_0..belief_k,next_0..next_v,prob
inline void write_labeled_csv(std::ostream& out, const TokenLabeledHmm& hmm, const std::vector<LabeledPrefix>& rows) {
  out << "sequence,position";
  for (int i = 0; i < hmm.num_states(); ++i) out << ",belief_" << i;
  for (int x = 0; x < hmm.vocab_size(); ++x) out << ",next_" << x;
  out << ",prob\n";
  for (const auto& r : rows) {
    out << sequence_key(hmm, r.tokens) << ',' << r.position;
    for (int i = 0; i < r.belief.size(); ++i) out << ',' << format_double(r.belief[i]);
    for (Eigen::Index x = 0; x < r.next_token_dist.size(); ++x) out << ',' << format_double(r.next_token_dist[x]);
    out << ',' << format_double(r.prefix_probability) << '\n';
  }
}

inline void save_labeled_csv(const TokenLabeledHmm& hmm, const std::vector<LabeledPrefix>& rows,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  write_labeled_csv(out, hmm, rows);
}

}  // namespace bsg
