#pragma once

// Mixed-state presentation: the HMM whose states are the belief states of an
// optimal observer and whose transitions are Bayesian updates on tokens.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "bsg/hmm.hpp"

namespace bsg {

inline constexpr double kDefaultDedupTolerance = 1e-8;

// Pr(x | eta) = eta T(x) 1
inline double msp_transition_probability(const TokenLabeledHmm& hmm, const BeliefState& belief, int token) {
  return (belief.probs().transpose() * hmm.matrix(token)).sum();
}

inline Eigen::VectorXd next_token_distribution(const TokenLabeledHmm& hmm, const BeliefState& belief) {
  Eigen::VectorXd out(hmm.vocab_size());
  for (int x = 0; x < hmm.vocab_size(); ++x) out[x] = msp_transition_probability(hmm, belief, x);
  return out;
}

// eta' = eta T(x) / (eta T(x) 1)
inline BeliefState update_belief(const TokenLabeledHmm& hmm, const BeliefState& belief, int token) {
  if (token < 0 || token >= hmm.vocab_size()) fail(ErrorCode::InvalidArgument, "token index out of range");
  if (belief.size() != hmm.num_states()) fail(ErrorCode::ShapeMismatch, "belief size != state count");
  const Eigen::VectorXd mass = (belief.probs().transpose() * hmm.matrix(token)).transpose();
  if (!(mass.sum() > 0.0)) {
    fail(ErrorCode::ZeroProbabilityToken, "token '" + hmm.vocab()[static_cast<std::size_t>(token)] +
                                              "' has zero probability from this belief");
  }
  return BeliefState::normalize(mass);
}

inline BeliefState belief_for_sequence(const TokenLabeledHmm& hmm, const BeliefState& initial, const TokenSeq& tokens) {
  BeliefState b = initial;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    try {
      b = update_belief(hmm, b, tokens[i]);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroProbabilityToken) throw;
      fail(ErrorCode::ZeroProbabilitySequence, "sequence '" + hmm.decode(tokens) + "' is impossible (fails at position " +
                                                   std::to_string(i) + ")");
    }
  }
  return b;
}

inline BeliefState belief_for_sequence(const TokenLabeledHmm& hmm, const TokenSeq& tokens) {
  return belief_for_sequence(hmm, stationary_distribution(hmm), tokens);
}

struct MspEdge {
  static constexpr std::size_t kBeyondHorizon = std::numeric_limits<std::size_t>::max();

  int token = 0;
  std::size_t next = kBeyondHorizon;  // kBeyondHorizon: target first appears past the build depth
  double probability = 0.0;
};

struct MixedStatePresentation {
  std::vector<BeliefState> states;            // states[0] is the initial belief
  std::vector<std::vector<MspEdge>> edges;    // positive-probability edges per state, by token
  std::vector<int> first_depth;               // shortest prefix length reaching each state
  std::map<TokenSeq, std::size_t> sequence_index;
  int depth = 0;
  double dedup_tolerance = kDefaultDedupTolerance;

  std::size_t size() const { return states.size(); }

  const MspEdge* find_edge(std::size_t state, int token) const {
    for (const auto& e : edges.at(state)) {
      if (e.token == token) return &e;
    }
    return nullptr;
  }

  std::size_t state_of(const TokenSeq& seq) const {
    const auto it = sequence_index.find(seq);
    if (it == sequence_index.end()) fail(ErrorCode::InvalidArgument, "sequence not in MSP index");
    return it->second;
  }
};

struct MspOptions {
  double dedup_tolerance = kDefaultDedupTolerance;
  std::size_t max_states = 1'000'000;
};

namespace detail {

// Exact L-infinity search over stored beliefs, narrowed by a sorted index on
// the first coordinate (any match must lie within tol of it there too).
class BeliefIndex {
 public:
  explicit BeliefIndex(double tol) : tol_(tol) {}

  std::size_t find(const std::vector<BeliefState>& states, const BeliefState& b) const {
    const double key = b[0];
    for (auto it = by_first_.lower_bound(key - tol_); it != by_first_.end() && it->first <= key + tol_; ++it) {
      if (states[it->second].linf_distance(b) <= tol_) return it->second;
    }
    return MspEdge::kBeyondHorizon;
  }

  void insert(const BeliefState& b, std::size_t index) { by_first_.emplace(b[0], index); }

 private:
  double tol_;
  std::multimap<double, std::size_t> by_first_;
};

}  // namespace detail

// Breadth-first expansion from the stationary belief over all positive
// probability continuations up to `depth` tokens.
inline MixedStatePresentation build_msp(const TokenLabeledHmm& hmm, int depth, const MspOptions& opt = {}) {
  if (depth < 1) fail(ErrorCode::InvalidArgument, "depth must be at least 1");
  if (!(opt.dedup_tolerance > 0.0)) fail(ErrorCode::InvalidArgument, "dedup tolerance must be positive");

  MixedStatePresentation msp;
  msp.depth = depth;
  msp.dedup_tolerance = opt.dedup_tolerance;
  detail::BeliefIndex index(opt.dedup_tolerance);
  std::vector<bool> expanded;

  auto intern = [&](BeliefState b, int at_depth) -> std::size_t {
    const std::size_t found = index.find(msp.states, b);
    if (found != MspEdge::kBeyondHorizon) return found;
    if (msp.states.size() >= opt.max_states) {
      fail(ErrorCode::StateExplosion, "MSP exceeds " + std::to_string(opt.max_states) + " states");
    }
    const std::size_t id = msp.states.size();
    index.insert(b, id);
    msp.states.push_back(std::move(b));
    msp.edges.emplace_back();
    msp.first_depth.push_back(at_depth);
    expanded.push_back(false);
    return id;
  };

  auto expand = [&](std::size_t s) {
    if (expanded[s]) return;
    expanded[s] = true;
    const int child_depth = msp.first_depth[s] + 1;
    std::vector<MspEdge> out;
    for (int x = 0; x < hmm.vocab_size(); ++x) {
      const Eigen::VectorXd mass = (msp.states[s].probs().transpose() * hmm.matrix(x)).transpose();
      const double p = mass.sum();
      if (!(p > 0.0)) continue;
      MspEdge e;
      e.token = x;
      e.probability = p;
      e.next = intern(BeliefState::normalize(mass), child_depth);
      out.push_back(e);
    }
    msp.edges[s] = std::move(out);
  };

  intern(stationary_distribution(hmm), 0);
  msp.sequence_index.emplace(TokenSeq{}, 0);

  std::vector<std::pair<TokenSeq, std::size_t>> frontier{{TokenSeq{}, 0}};
  for (int d = 1; d <= depth; ++d) {
    std::vector<std::pair<TokenSeq, std::size_t>> next_frontier;
    next_frontier.reserve(frontier.size() * static_cast<std::size_t>(hmm.vocab_size()));
    for (const auto& [seq, s] : frontier) {
      expand(s);
      for (const auto& e : msp.edges[s]) {
        TokenSeq child = seq;
        child.push_back(e.token);
        msp.sequence_index.emplace(child, e.next);
        next_frontier.emplace_back(std::move(child), e.next);
      }
    }
    frontier = std::move(next_frontier);
  }

  // States first reached at the horizon still get their outgoing mass; edges
  // whose target was never reached within `depth` keep kBeyondHorizon.
  for (std::size_t s = 0; s < msp.states.size(); ++s) {
    if (expanded[s]) continue;
    expanded[s] = true;
    std::vector<MspEdge> out;
    for (int x = 0; x < hmm.vocab_size(); ++x) {
      const Eigen::VectorXd mass = (msp.states[s].probs().transpose() * hmm.matrix(x)).transpose();
      const double p = mass.sum();
      if (!(p > 0.0)) continue;
      out.push_back(MspEdge{x, index.find(msp.states, BeliefState::normalize(mass)), p});
    }
    msp.edges[s] = std::move(out);
  }
  return msp;
}

struct LabeledPrefix {
  TokenSeq tokens;
  int position = 0;  // index of the last token
  std::size_t state_index = 0;
  BeliefState belief;
  Eigen::VectorXd next_token_dist;
  double prefix_probability = 0.0;
};

// One row per positive-probability sequence of length 1..depth, ordered by
// length and then lexicographically by token index.
inline std::vector<LabeledPrefix> enumerate_labeled_dataset(const TokenLabeledHmm& hmm,
                                                            const MixedStatePresentation& msp, int depth) {
  if (depth > msp.depth) fail(ErrorCode::InvalidArgument, "MSP was built to a smaller depth");
  const BeliefState& initial = msp.states.front();
  std::vector<std::vector<LabeledPrefix>> by_length(static_cast<std::size_t>(depth) + 1);
  for (const auto& [seq, s] : msp.sequence_index) {
    if (seq.empty() || static_cast<int>(seq.size()) > depth) continue;
    LabeledPrefix row;
    row.tokens = seq;
    row.position = static_cast<int>(seq.size()) - 1;
    row.state_index = s;
    row.belief = msp.states[s];
    row.next_token_dist = next_token_distribution(hmm, row.belief);
    row.prefix_probability = sequence_probability(hmm, initial, seq);
    by_length[seq.size()].push_back(std::move(row));
  }
  std::vector<LabeledPrefix> out;
  for (auto& group : by_length) {
    for (auto& row : group) out.push_back(std::move(row));
  }
  return out;
}

// Sum over prefixes of P(prefix) * H(next | prefix), averaged over the prefix
// lengths in [min_length, max_length]. With min_length 1 and max_length equal
// to context_length - 1 this is the lowest achievable mean next-token loss.
inline double entropy_floor(const std::vector<LabeledPrefix>& rows, int min_length, int max_length) {
  double total = 0.0;
  for (const auto& r : rows) {
    const int len = static_cast<int>(r.tokens.size());
    if (len < min_length || len > max_length) continue;
    double h = 0.0;
    for (Eigen::Index x = 0; x < r.next_token_dist.size(); ++x) {
      const double q = r.next_token_dist[x];
      if (q > 0.0) h -= q * std::log(q);
    }
    total += r.prefix_probability * h;
  }
  return total / static_cast<double>(max_length - min_length + 1);
}

}  // namespace bsg
