#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bsg/msp.hpp"
#include "bsg/msp_io.hpp"
#include "bsg/processes.hpp"

using namespace bsg;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::Io;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Independent oracle: eta T(x) / (eta T(x) 1) written as explicit sums.
Eigen::VectorXd oracle_update(const TokenLabeledHmm& hmm, const Eigen::VectorXd& eta, int x) {
  const int n = hmm.num_states();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  double total = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) out[j] += eta[i] * hmm.matrix(x)(i, j);
    total += out[j];
  }
  return out / total;
}

bool contains_belief(const MixedStatePresentation& msp, const Eigen::VectorXd& b, double tol) {
  return std::any_of(msp.states.begin(), msp.states.end(),
                     [&](const BeliefState& s) { return (s.probs() - b).cwiseAbs().maxCoeff() <= tol; });
}

TokenLabeledHmm permute_vocab(const TokenLabeledHmm& hmm, const std::vector<int>& order) {
  std::vector<Eigen::MatrixXd> mats;
  std::vector<std::string> vocab;
  for (int x : order) {
    mats.push_back(hmm.matrix(x));
    vocab.push_back(hmm.vocab()[static_cast<std::size_t>(x)]);
  }
  return validate_hmm(mats, hmm.state_names(), vocab);
}

std::vector<std::vector<double>> canonical(const MixedStatePresentation& msp) {
  std::vector<std::vector<double>> out;
  for (const auto& s : msp.states) {
    std::vector<double> v(s.probs().data(), s.probs().data() + s.size());
    for (double& x : v) x = std::round(x * 1e9) / 1e9;
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(UpdateBelief, ZeroOneRandomFromPi) {
  const auto hmm = zero_one_random();
  const auto b = update_belief(hmm, stationary_distribution(hmm), 0);
  EXPECT_LT((b.probs() - vec({1.0 / 3, 2.0 / 3, 0})).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(UpdateBelief, Mess3TokenA) {
  const auto hmm = mess3();
  const auto b = update_belief(hmm, stationary_distribution(hmm), 0);
  EXPECT_LT((b.probs() - vec({0.85, 0.075, 0.075})).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((b.probs() - oracle_update(hmm, Eigen::VectorXd::Constant(3, 1.0 / 3), 0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(UpdateBelief, ImpossibleToken) {
  EXPECT_EQ(code_of([] { update_belief(zero_one_random(), BeliefState::point_mass(3, 0), 1); }),
            ErrorCode::ZeroProbabilityToken);
}

TEST(UpdateBelief, PreservesSimplexOnRandomWalks) {
  SplitMix64 rng(12);
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    BeliefState b = stationary_distribution(hmm);
    for (int step = 0; step < 3000; ++step) {
      const auto next = next_token_distribution(hmm, b);
      std::vector<double> cum;
      double acc = 0;
      for (Eigen::Index x = 0; x < next.size(); ++x) cum.push_back(acc += next[x]);
      const int x = draw_cumulative(cum, rng.uniform());
      b = update_belief(hmm, b, x);
      ASSERT_NEAR(b.probs().sum(), 1.0, 1e-12);
      ASSERT_GE(b.probs().minCoeff(), 0.0);
    }
  }
}

TEST(BeliefForSequence, Examples) {
  const auto hmm = zero_one_random();
  EXPECT_LT((belief_for_sequence(hmm, {1, 1}).probs() - vec({1, 0, 0})).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((belief_for_sequence(hmm, {1, 0}).probs() - vec({0.5, 0.5, 0})).cwiseAbs().maxCoeff(), 1e-12);
  for (const auto& h : {mess3(), rrxor(), zero_one_random()}) {
    EXPECT_EQ(belief_for_sequence(h, {}).probs(), stationary_distribution(h).probs());
  }
  EXPECT_EQ(code_of([&] { belief_for_sequence(hmm, {0, 0, 0}); }), ErrorCode::ZeroProbabilitySequence);
}

TEST(BeliefForSequence, MatchesClosedFormProduct) {
  SplitMix64 rng(3);
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    const auto pi = stationary_distribution(hmm);
    for (int trial = 0; trial < 50; ++trial) {
      const auto seq = sample_sequence(hmm, 9, rng, pi).tokens;
      Eigen::RowVectorXd v = pi.probs().transpose();
      for (int x : seq) v = v * hmm.matrix(x);
      v /= v.sum();
      EXPECT_LT((belief_for_sequence(hmm, seq).probs() - v.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(BeliefForSequence, ChainConsistency) {
  SplitMix64 rng(31);
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    const auto pi = stationary_distribution(hmm);
    for (int trial = 0; trial < 50; ++trial) {
      auto seq = sample_sequence(hmm, 7, rng, pi).tokens;
      const int x = seq.back();
      seq.pop_back();
      const auto a = belief_for_sequence(hmm, seq);
      seq.push_back(x);
      EXPECT_LT(belief_for_sequence(hmm, seq).linf_distance(update_belief(hmm, a, x)), 1e-12);
    }
  }
}

TEST(TransitionProbability, Examples) {
  const auto hmm = zero_one_random();
  const auto pi = stationary_distribution(hmm);
  EXPECT_NEAR(msp_transition_probability(hmm, pi, 0), 0.5, 1e-12);
  EXPECT_NEAR(msp_transition_probability(hmm, pi, 0), sequence_probability(hmm, pi, {0}), 1e-15);
  EXPECT_EQ(msp_transition_probability(hmm, BeliefState::point_mass(3, 0), 1), 0.0);
}

TEST(BuildMsp, ZeroOneRandomSevenStates) {
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 10);
  ASSERT_EQ(msp.size(), 7u);
  const std::vector<Eigen::VectorXd> expected{vec({1.0 / 3, 1.0 / 3, 1.0 / 3}), vec({1.0 / 3, 2.0 / 3, 0}),
                                              vec({1.0 / 3, 0, 2.0 / 3}),         vec({0.5, 0.5, 0}),
                                              vec({1, 0, 0}),                     vec({0, 1, 0}),
                                              vec({0, 0, 1})};
  for (const auto& e : expected) EXPECT_TRUE(contains_belief(msp, e, 1e-8)) << e.transpose();
  EXPECT_LT((msp.states[0].probs() - expected[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BuildMsp, RrxorThirtySixStates) { EXPECT_EQ(build_msp(rrxor(), 10).size(), 36u); }

TEST(BuildMsp, Mess3DepthOne) {
  const auto msp = build_msp(mess3(), 1);
  ASSERT_EQ(msp.size(), 4u);
  for (std::size_t s = 1; s < 4; ++s) {
    std::vector<double> v(msp.states[s].probs().data(), msp.states[s].probs().data() + 3);
    std::sort(v.begin(), v.end());
    EXPECT_NEAR(v[0], 0.075, 1e-12);
    EXPECT_NEAR(v[1], 0.075, 1e-12);
    EXPECT_NEAR(v[2], 0.85, 1e-12);
  }
}

TEST(BuildMsp, OutgoingProbabilitiesSumToOne) {
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    const auto msp = build_msp(hmm, hmm.num_states() == 3 && hmm.vocab_size() == 3 ? 6 : 10);
    for (std::size_t s = 0; s < msp.size(); ++s) {
      double total = 0;
      for (const auto& e : msp.edges[s]) {
        EXPECT_GT(e.probability, 0.0);
        total += e.probability;
      }
      EXPECT_NEAR(total, 1.0, 1e-10);
      EXPECT_NEAR(msp.states[s].probs().sum(), 1.0, 1e-12);
      EXPECT_GE(msp.states[s].probs().minCoeff(), 0.0);
    }
  }
}

TEST(BuildMsp, EdgesAgreeWithUpdates) {
  const auto hmm = rrxor();
  const auto msp = build_msp(hmm, 10);
  for (std::size_t s = 0; s < msp.size(); ++s) {
    for (const auto& e : msp.edges[s]) {
      ASSERT_NE(e.next, MspEdge::kBeyondHorizon);
      EXPECT_LT(msp.states[e.next].linf_distance(update_belief(hmm, msp.states[s], e.token)), 1e-8);
    }
  }
}

TEST(BuildMsp, SequenceIndexCoversPositiveSequences) {
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 6);
  const auto pi = stationary_distribution(hmm);
  for (int len = 1; len <= 6; ++len) {
    for (int code = 0; code < (1 << len); ++code) {
      TokenSeq seq;
      for (int k = 0; k < len; ++k) seq.push_back((code >> k) & 1);
      const double p = sequence_probability(hmm, pi, seq);
      const bool indexed = msp.sequence_index.contains(seq);
      EXPECT_EQ(indexed, p > 0.0);
      if (indexed) {
        EXPECT_LT(msp.states[msp.state_of(seq)].linf_distance(belief_for_sequence(hmm, seq)), 1e-8);
      }
    }
  }
}

TEST(BuildMsp, OrderIndependent) {
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    const int depth = hmm.vocab_size() == 3 ? 5 : 10;
    std::vector<int> order(static_cast<std::size_t>(hmm.vocab_size()));
    for (int x = 0; x < hmm.vocab_size(); ++x) order[static_cast<std::size_t>(x)] = hmm.vocab_size() - 1 - x;
    const auto a = build_msp(hmm, depth);
    const auto b = build_msp(permute_vocab(hmm, order), depth);
    EXPECT_EQ(a.size(), b.size());
    EXPECT_EQ(canonical(a), canonical(b));
  }
}

TEST(BuildMsp, StateExplosionAndBadArguments) {
  MspOptions opt;
  opt.max_states = 10;
  EXPECT_EQ(code_of([&] { build_msp(mess3(), 5, opt); }), ErrorCode::StateExplosion);
  EXPECT_EQ(code_of([] { build_msp(mess3(), 0); }), ErrorCode::InvalidArgument);
}

TEST(BuildMsp, ZeroOneRandomDegeneracy) {
  const auto hmm = zero_one_random();
  const auto pi = stationary_distribution(hmm);
  const auto eta10 = belief_for_sequence(hmm, {1, 0});
  const auto eta01 = belief_for_sequence(hmm, {0, 1});
  EXPECT_LT((eta01.probs() - vec({0, 0, 1})).cwiseAbs().maxCoeff(), 1e-12);
  const auto n0 = next_token_distribution(hmm, pi);
  const auto n1 = next_token_distribution(hmm, eta10);
  const auto n2 = next_token_distribution(hmm, eta01);
  EXPECT_LT((n0 - n1).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((n0 - n2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((n1 - n2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(pi.linf_distance(eta10), 0.1);
  EXPECT_GT(eta10.linf_distance(eta01), 0.1);
}

TEST(LabeledDataset, ZeroOneRandomDepthTwo) {
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 2);
  const auto rows = enumerate_labeled_dataset(hmm, msp, 2);
  ASSERT_EQ(rows.size(), 6u);
  const std::vector<TokenSeq> expected{{0}, {1}, {0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].tokens, expected[i]);
  EXPECT_NEAR(rows[5].prefix_probability, 1.0 / 6, 1e-12);
}

TEST(LabeledDataset, Mess3DepthTenCount) {
  const auto hmm = mess3();
  const auto msp = build_msp(hmm, 10);
  const auto rows = enumerate_labeled_dataset(hmm, msp, 10);
  EXPECT_EQ(rows.size(), 88572u);
}

TEST(LabeledDataset, InvariantsAndDepthOneMass) {
  for (const auto& hmm : {mess3(), rrxor(), zero_one_random()}) {
    const auto msp = build_msp(hmm, 6);
    const auto rows = enumerate_labeled_dataset(hmm, msp, 6);
    std::vector<double> mass(7, 0.0);
    for (const auto& r : rows) {
      EXPECT_NEAR(r.next_token_dist.sum(), 1.0, 1e-12);
      EXPECT_GT(r.prefix_probability, 0.0);
      EXPECT_LE(r.prefix_probability, 1.0);
      EXPECT_EQ(r.position, static_cast<int>(r.tokens.size()) - 1);
      EXPECT_EQ(r.belief.probs(), msp.states[msp.state_of(r.tokens)].probs());
      mass[r.tokens.size()] += r.prefix_probability;
    }
    for (int len = 1; len <= 6; ++len) EXPECT_NEAR(mass[static_cast<std::size_t>(len)], 1.0, 1e-12);
  }
}

TEST(LabeledDataset, EntropyFloorOfUniformProcessIsLog2) {
  // A memoryless fair coin: every prefix has next-token entropy ln 2.
  Eigen::MatrixXd h = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const auto coin = validate_hmm({h, h}, {"s"}, {"H", "T"});
  const auto msp = build_msp(coin, 5);
  EXPECT_EQ(msp.size(), 1u);
  const auto rows = enumerate_labeled_dataset(coin, msp, 5);
  EXPECT_NEAR(entropy_floor(rows, 1, 4), std::log(2.0), 1e-14);
}

TEST(MspIo, JsonAndCsvShapes) {
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 3);
  const auto j = msp_to_json(hmm, msp);
  EXPECT_EQ(j["states"].size(), 7u);
  EXPECT_EQ(j["edges"].size(), 12u);
  EXPECT_EQ(j["sequence_index"][""], 0);
  std::ostringstream csv;
  write_labeled_csv(csv, hmm, enumerate_labeled_dataset(hmm, msp, 1));
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "sequence,position,belief_0,belief_1,belief_2,next_0,next_1,prob");
}
