#pragma once

// Edge-emitting hidden Markov models.
//
// A process over hidden states S and tokens X is given by one |S|x|S| matrix
// per token, T(x)[i][j] = Pr(emit x, move to j | in i). The combined matrix
// sum_x T(x) is row-stochastic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bsg/error.hpp"
#include "bsg/rng.hpp"

namespace bsg {

using TokenSeq = std::vector<int>;

inline constexpr double kProbTol = 1e-12;
inline constexpr double kValidationTol = 1e-9;

// A point on the probability simplex over hidden states.
class BeliefState {
 public:
  BeliefState() = default;

  // Checks the simplex invariants; throws InvalidArgument on violation.
  static BeliefState from(Eigen::VectorXd probs, double tol = kProbTol) {
    if (probs.size() == 0) fail(ErrorCode::InvalidArgument, "empty belief");
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      if (!(probs[i] >= 0.0)) fail(ErrorCode::InvalidArgument, "belief has a negative or NaN entry");
    }
    if (std::abs(probs.sum() - 1.0) > tol) {
      fail(ErrorCode::InvalidArgument, "belief does not sum to 1");
    }
    return BeliefState(std::move(probs));
  }

  // Normalizes a non-negative mass vector with positive total.
  static BeliefState normalize(const Eigen::VectorXd& mass) {
    const double total = mass.sum();
    if (!(total > 0.0)) fail(ErrorCode::InvalidArgument, "cannot normalize zero mass");
    return BeliefState(mass / total);
  }

  static BeliefState uniform(int n) { return BeliefState(Eigen::VectorXd::Constant(n, 1.0 / n)); }

  static BeliefState point_mass(int n, int i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v[i] = 1.0;
    return BeliefState(std::move(v));
  }

  const Eigen::VectorXd& probs() const { return probs_; }
  int size() const { return static_cast<int>(probs_.size()); }
  double operator[](int i) const { return probs_[i]; }

  double linf_distance(const BeliefState& other) const {
    return (probs_ - other.probs_).cwiseAbs().maxCoeff();
  }

 private:
  explicit BeliefState(Eigen::VectorXd probs) : probs_(std::move(probs)) {}

  Eigen::VectorXd probs_;
};

struct HiddenPath {
  std::vector<int> states;  // states[i] is the state that emitted tokens[i]
  TokenSeq tokens;
};

class TokenLabeledHmm {
 public:
  const std::vector<std::string>& state_names() const { return state_names_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  int num_states() const { return static_cast<int>(state_names_.size()); }
  int vocab_size() const { return static_cast<int>(vocab_.size()); }

  const Eigen::MatrixXd& matrix(int token) const { return matrices_.at(static_cast<std::size_t>(token)); }
  const std::vector<Eigen::MatrixXd>& matrices() const { return matrices_; }

  Eigen::MatrixXd combined() const {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(num_states(), num_states());
    for (const auto& m : matrices_) t += m;
    return t;
  }

  int token_index(const std::string& name) const {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      if (vocab_[i] == name) return static_cast<int>(i);
    }
    fail(ErrorCode::InvalidArgument, "unknown token '" + name + "'");
  }

  TokenSeq encode(const std::vector<std::string>& tokens) const {
    TokenSeq out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(token_index(t));
    return out;
  }

  // Concatenates token names; only unambiguous when every name is one character.
  std::string decode(const TokenSeq& tokens) const {
    std::string out;
    for (int t : tokens) out += vocab_.at(static_cast<std::size_t>(t));
    return out;
  }

  // Cumulative (token, next-state) mass for row `state`, token-major order.
  const std::vector<double>& cumulative_row(int state) const {
    return cumulative_.at(static_cast<std::size_t>(state));
  }

  friend TokenLabeledHmm validate_hmm(std::vector<Eigen::MatrixXd> raw, std::vector<std::string> state_names,
                                      std::vector<std::string> vocab);

 private:
  TokenLabeledHmm() = default;

  std::vector<std::string> state_names_;
  std::vector<std::string> vocab_;
  std::vector<Eigen::MatrixXd> matrices_;
  std::vector<std::vector<double>> cumulative_;
};

inline TokenLabeledHmm validate_hmm(std::vector<Eigen::MatrixXd> raw, std::vector<std::string> state_names,
                                    std::vector<std::string> vocab) {
  if (vocab.size() < 2) fail(ErrorCode::ShapeMismatch, "vocabulary needs at least 2 tokens");
  if (state_names.empty()) fail(ErrorCode::ShapeMismatch, "need at least one hidden state");
  if (raw.size() != vocab.size()) {
    fail(ErrorCode::ShapeMismatch, "expected one matrix per token (" + std::to_string(vocab.size()) + "), got " +
                                       std::to_string(raw.size()));
  }
  const auto n = static_cast<Eigen::Index>(state_names.size());
  for (std::size_t x = 0; x < raw.size(); ++x) {
    if (raw[x].rows() != n || raw[x].cols() != n) {
      fail(ErrorCode::ShapeMismatch, "matrix for token '" + vocab[x] + "' is not " + std::to_string(n) + "x" +
                                         std::to_string(n));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double v = raw[x](i, j);
        if (!std::isfinite(v)) fail(ErrorCode::NegativeEntry, "non-finite entry in T(" + vocab[x] + ")");
        if (v < 0.0) {
          fail(ErrorCode::NegativeEntry, "T(" + vocab[x] + ")[" + std::to_string(i) + "][" + std::to_string(j) +
                                             "] = " + std::to_string(v));
        }
      }
    }
  }
  for (std::size_t x = 0; x < raw.size(); ++x) {
    if (raw[x].maxCoeff() > 1.0 + kValidationTol) fail(ErrorCode::RowSumMismatch, "entry exceeds 1 in T(" + vocab[x] + ")");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (const auto& m : raw) row += m.row(i).sum();
    if (std::abs(row - 1.0) > kValidationTol) {
      fail(ErrorCode::RowSumMismatch, "combined row " + std::to_string(i) + " sums to " + std::to_string(row));
    }
  }

  TokenLabeledHmm hmm;
  hmm.state_names_ = std::move(state_names);
  hmm.vocab_ = std::move(vocab);
  hmm.matrices_ = std::move(raw);
  hmm.cumulative_.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& cum = hmm.cumulative_[static_cast<std::size_t>(i)];
    cum.reserve(hmm.matrices_.size() * static_cast<std::size_t>(n));
    double acc = 0.0;
    for (const auto& m : hmm.matrices_) {
      for (Eigen::Index j = 0; j < n; ++j) {
        acc += m(i, j);
        cum.push_back(acc);
      }
    }
  }
  return hmm;
}

struct StationaryOptions {
  std::int64_t max_iterations = 1'000'000;
  double residual_tol = 1e-13;     // L-infinity norm of pi T - pi
  double uniqueness_tol = 1e-9;    // restarts must agree to this
  std::uint64_t restart_seed = 0x5eed;
};

namespace detail {

// Power iteration on the lazy chain (I + T) / 2, which shares its stationary
// vectors with T but is aperiodic. Returns (vector, converged).
inline std::pair<Eigen::RowVectorXd, bool> lazy_power_iteration(const Eigen::MatrixXd& t, Eigen::RowVectorXd p,
                                                                 const StationaryOptions& opt) {
  Eigen::RowVectorXd pt(p.size());
  for (std::int64_t it = 0; it < opt.max_iterations; ++it) {
    pt.noalias() = p * t;
    if ((pt - p).cwiseAbs().maxCoeff() <= opt.residual_tol) return {p, true};
    p = 0.5 * (p + pt);
    p /= p.sum();
  }
  pt.noalias() = p * t;
  return {p, (pt - p).cwiseAbs().maxCoeff() <= opt.residual_tol};
}

}  // namespace detail

// Left fixed point of the combined matrix. Uniqueness is checked by running
// from the uniform vector and from two random starting points.
inline BeliefState stationary_distribution(const TokenLabeledHmm& hmm, const StationaryOptions& opt = {}) {
  const Eigen::MatrixXd t = hmm.combined();
  const int n = hmm.num_states();

  auto [pi, ok] = detail::lazy_power_iteration(t, Eigen::RowVectorXd::Constant(n, 1.0 / n), opt);
  if (!ok) fail(ErrorCode::NonConvergent, "stationary distribution residual above tolerance after iteration cap");

  SplitMix64 rng(opt.restart_seed);
  for (int restart = 0; restart < 2; ++restart) {
    Eigen::RowVectorXd start(n);
    // Exponential draws give a uniform point on the simplex; cubing sharpens
    // it toward vertices so distinct closed classes are not weighted alike.
    for (int i = 0; i < n; ++i) start[i] = std::pow(-std::log(1.0 - rng.uniform()), 3.0);
    start /= start.sum();
    auto [other, other_ok] = detail::lazy_power_iteration(t, start, opt);
    if (!other_ok) fail(ErrorCode::NonConvergent, "stationary restart did not converge");
    if ((other - pi).cwiseAbs().maxCoeff() > opt.uniqueness_tol) {
      fail(ErrorCode::NonUnique, "restarts reached different fixed points; combined matrix has several closed classes");
    }
  }
  Eigen::VectorXd v = pi.transpose().cwiseMax(0.0);
  return BeliefState::normalize(v);
}

// Draws one index from a cumulative mass vector with a single uniform. The
// first bin whose upper edge exceeds u wins, so boundaries go to the lower
// index and zero-width bins are never chosen.
inline int draw_cumulative(const std::vector<double>& cum, double u) {
  const double total = cum.back();
  const double target = u * total;
  int last_nonzero = 0;
  double prev = 0.0;
  for (std::size_t k = 0; k < cum.size(); ++k) {
    if (cum[k] > prev) {
      if (target < cum[k]) return static_cast<int>(k);
      last_nonzero = static_cast<int>(k);
    }
    prev = cum[k];
  }
  return last_nonzero;
}

inline int draw_state(const BeliefState& belief, SplitMix64& rng) {
  std::vector<double> cum(static_cast<std::size_t>(belief.size()));
  double acc = 0.0;
  for (int i = 0; i < belief.size(); ++i) {
    acc += belief[i];
    cum[static_cast<std::size_t>(i)] = acc;
  }
  return draw_cumulative(cum, rng.uniform());
}

inline HiddenPath sample_sequence(const TokenLabeledHmm& hmm, int length, SplitMix64& rng,
                                  const BeliefState& initial_belief) {
  if (length < 1) fail(ErrorCode::InvalidArgument, "sequence length must be at least 1");
  if (initial_belief.size() != hmm.num_states()) fail(ErrorCode::ShapeMismatch, "belief size != state count");
  const int n = hmm.num_states();
  HiddenPath path;
  path.states.reserve(static_cast<std::size_t>(length));
  path.tokens.reserve(static_cast<std::size_t>(length));
  int state = draw_state(initial_belief, rng);
  for (int step = 0; step < length; ++step) {
    const int k = draw_cumulative(hmm.cumulative_row(state), rng.uniform());
    path.states.push_back(state);
    path.tokens.push_back(k / n);
    state = k % n;
  }
  return path;
}

inline HiddenPath sample_sequence(const TokenLabeledHmm& hmm, int length, std::uint64_t seed,
                                  const BeliefState& initial_belief) {
  SplitMix64 rng(seed);
  return sample_sequence(hmm, length, rng, initial_belief);
}

// eta T(x0) T(x1) ... T(xN) 1
inline double sequence_probability(const TokenLabeledHmm& hmm, const BeliefState& initial_belief,
                                   const TokenSeq& tokens) {
  Eigen::RowVectorXd v = initial_belief.probs().transpose();
  for (int x : tokens) {
    if (x < 0 || x >= hmm.vocab_size()) fail(ErrorCode::InvalidArgument, "token index out of range");
    v = v * hmm.matrix(x);
  }
  return std::clamp(v.sum(), 0.0, 1.0);
}

}  // namespace bsg
