#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <map>

#include "bsg/hmm.hpp"
#include "bsg/hmm_io.hpp"
#include "bsg/msp.hpp"
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

std::vector<TokenLabeledHmm> all_processes() { return {mess3(), rrxor(), zero_one_random()}; }

BeliefState random_belief(int n, SplitMix64& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(1.0 - rng.uniform());
  return BeliefState::normalize(v);
}

}  // namespace

TEST(ValidateHmm, AcceptsBuiltInProcesses) {
  EXPECT_EQ(mess3().num_states(), 3);
  EXPECT_EQ(mess3().vocab_size(), 3);
  EXPECT_EQ(rrxor().num_states(), 5);
  EXPECT_EQ(rrxor().vocab_size(), 2);
  EXPECT_EQ(zero_one_random().num_states(), 3);
}

TEST(ValidateHmm, RowSumMismatch) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 0.4, 0.1, 0.5, 0;
  b << 0.2, 0.2, 0, 0.5;  // row 0 of a + b sums to 0.9
  EXPECT_EQ(code_of([&] { validate_hmm({a, b}, {"x", "y"}, {"a", "b"}); }), ErrorCode::RowSumMismatch);
}

TEST(ValidateHmm, NegativeEntry) {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1.1, -0.1, 0.5, 0;
  b << 0, 0, 0, 0.5;
  EXPECT_EQ(code_of([&] { validate_hmm({a, b}, {"x", "y"}, {"a", "b"}); }), ErrorCode::NegativeEntry);
}

TEST(ValidateHmm, ShapeMismatch) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(2, 2) * 0.5;
  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(3, 3) * 0.5;
  EXPECT_EQ(code_of([&] { validate_hmm({a, b}, {"x", "y"}, {"a", "b"}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { validate_hmm({a}, {"x", "y"}, {"a", "b"}); }), ErrorCode::ShapeMismatch);
  Eigen::MatrixXd r(2, 3);
  r.setZero();
  EXPECT_EQ(code_of([&] { validate_hmm({r, r}, {"x", "y"}, {"a", "b"}); }), ErrorCode::ShapeMismatch);
}

TEST(Stationary, KnownDistributions) {
  const auto m = stationary_distribution(mess3());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(m[i], 1.0 / 3, 1e-12);
  const auto z = stationary_distribution(zero_one_random());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(z[i], 1.0 / 3, 1e-12);
  const auto r = stationary_distribution(rrxor());
  const std::array<double, 5> expect{1.0 / 3, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(r[i], expect[static_cast<std::size_t>(i)], 1e-12);
}

TEST(Stationary, FixedPointResidualAndSimplex) {
  for (const auto& hmm : all_processes()) {
    const auto pi = stationary_distribution(hmm);
    const Eigen::RowVectorXd res = pi.probs().transpose() * hmm.combined() - pi.probs().transpose();
    EXPECT_LT(res.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(pi.probs().sum(), 1.0, 1e-12);
    EXPECT_GE(pi.probs().minCoeff(), 0.0);
  }
}

TEST(Stationary, DetectsNonUniqueness) {
  // Two absorbing states: every distribution is stationary.
  Eigen::MatrixXd a = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  const auto hmm = validate_hmm({a, a}, {"x", "y"}, {"a", "b"});
  EXPECT_EQ(code_of([&] { stationary_distribution(hmm); }), ErrorCode::NonUnique);
}

TEST(Stationary, ReportsNonConvergence) {
  StationaryOptions opt;
  opt.max_iterations = 1;
  opt.residual_tol = 1e-300;
  EXPECT_EQ(code_of([&] { stationary_distribution(rrxor(), opt); }), ErrorCode::NonConvergent);
}

TEST(Sample, ZeroOneRandomPattern) {
  const auto hmm = zero_one_random();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto path = sample_sequence(hmm, 6, seed, BeliefState::point_mass(3, 0));
    ASSERT_EQ(path.tokens.size(), 6u);
    EXPECT_EQ(path.tokens[0], 0);
    EXPECT_EQ(path.tokens[1], 1);
    EXPECT_EQ(path.tokens[3], 0);
    EXPECT_EQ(path.tokens[4], 1);
    EXPECT_EQ(path.states[0], 0);
    EXPECT_EQ(path.states[2], 2);
  }
}

TEST(Sample, DeterministicForSeed) {
  const auto hmm = mess3();
  const auto pi = stationary_distribution(hmm);
  const auto a = sample_sequence(hmm, 10, 1234, pi);
  const auto b = sample_sequence(hmm, 10, 1234, pi);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.states, b.states);
}

TEST(Sample, PathsUsePositiveTransitions) {
  for (const auto& hmm : all_processes()) {
    const auto pi = stationary_distribution(hmm);
    const auto p = sample_sequence(hmm, 500, 9, pi);
    for (std::size_t i = 0; i + 1 < p.tokens.size(); ++i) {
      EXPECT_GT(hmm.matrix(p.tokens[i])(p.states[i], p.states[i + 1]), 0.0);
    }
  }
}

TEST(Sample, RrxorZeroFrequency) {
  const auto hmm = rrxor();
  const auto pi = stationary_distribution(hmm);
  const auto p = sample_sequence(hmm, 100000, 77, pi);
  double zeros = 0;
  for (int t : p.tokens) zeros += t == 0;
  // pi T(0) 1
  const double analytic = (pi.probs().transpose() * hmm.matrix(0)).sum();
  EXPECT_NEAR(analytic, 0.5, 1e-12);
  EXPECT_NEAR(zeros / 1e5, analytic, 0.01);
}

TEST(Sample, RrxorLagOneCorrelationNearZero) {
  const auto hmm = rrxor();
  const auto p = sample_sequence(hmm, 100000, 5, stationary_distribution(hmm));
  double m = 0;
  for (int t : p.tokens) m += t;
  m /= static_cast<double>(p.tokens.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i + 1 < p.tokens.size(); ++i) num += (p.tokens[i] - m) * (p.tokens[i + 1] - m);
  for (int t : p.tokens) den += (t - m) * (t - m);
  EXPECT_LT(std::abs(num / den), 0.02);
}

TEST(Sample, BigramFrequenciesMatchAnalytic) {
  // Chi-square goodness of fit of length-2 sequences from pi, 8 degrees of
  // freedom; 40 is far in the tail (p < 1e-5).
  const auto hmm = mess3();
  const auto pi = stationary_distribution(hmm);
  SplitMix64 rng(21);
  std::map<TokenSeq, double> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[sample_sequence(hmm, 2, rng, pi).tokens] += 1;
  double chi2 = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const double e = n * sequence_probability(hmm, pi, {a, b});
      const double o = counts[{a, b}];
      chi2 += (o - e) * (o - e) / e;
    }
  }
  EXPECT_LT(chi2, 40.0);
}

TEST(Sample, LowerIndexWinsTies) {
  EXPECT_EQ(draw_cumulative({0.5, 1.0}, 0.5), 1);
  EXPECT_EQ(draw_cumulative({0.5, 1.0}, 0.4999), 0);
  EXPECT_EQ(draw_cumulative({0.0, 0.0, 1.0}, 0.0), 2);
}

TEST(SequenceProbability, ZeroOneRandomExamples) {
  const auto hmm = zero_one_random();
  const auto pi = stationary_distribution(hmm);
  EXPECT_NEAR(sequence_probability(hmm, pi, {0}), 0.5, 1e-12);
  EXPECT_NEAR(sequence_probability(hmm, pi, {1}), 0.5, 1e-12);
  EXPECT_EQ(sequence_probability(hmm, BeliefState::point_mass(3, 0), {1, 1, 1}), 0.0);
  EXPECT_NEAR(sequence_probability(hmm, BeliefState::point_mass(3, 0), {0, 1, 0}), 0.5, 1e-15);
}

TEST(SequenceProbability, Decomposes) {
  SplitMix64 rng(4);
  for (const auto& hmm : all_processes()) {
    const auto pi = stationary_distribution(hmm);
    for (int trial = 0; trial < 20; ++trial) {
      const auto seq = sample_sequence(hmm, 8, rng, pi).tokens;
      const double whole = sequence_probability(hmm, pi, seq);
      for (std::size_t k = 1; k < seq.size(); ++k) {
        const TokenSeq head(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(k));
        const TokenSeq tail(seq.begin() + static_cast<std::ptrdiff_t>(k), seq.end());
        const auto b = belief_for_sequence(hmm, pi, head);
        EXPECT_NEAR(whole, sequence_probability(hmm, pi, head) * sequence_probability(hmm, b, tail), 1e-12);
      }
    }
  }
}

TEST(SequenceProbability, TotalNextTokenMassIsOne) {
  SplitMix64 rng(6);
  for (const auto& hmm : all_processes()) {
    for (int trial = 0; trial < 200; ++trial) {
      const auto b = random_belief(hmm.num_states(), rng);
      double total = 0;
      for (int x = 0; x < hmm.vocab_size(); ++x) total += sequence_probability(hmm, b, {x});
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Processes, MatrixEntries) {
  EXPECT_EQ(mess3().matrix(0)(0, 0), 0.765);
  const Eigen::MatrixXd t = mess3().combined();
  EXPECT_NEAR(t.row(0).sum(), 1.0, 1e-15);
  // Per-token mass leaving state 0: 0.7725 + 0.11375 + 0.11375.
  EXPECT_NEAR(mess3().matrix(0).row(0).sum(), 0.7725, 1e-15);
  EXPECT_NEAR(mess3().matrix(1).row(0).sum(), 0.11375, 1e-15);
  EXPECT_NEAR(mess3().matrix(2).row(0).sum(), 0.11375, 1e-15);
  EXPECT_EQ(rrxor().matrix(0)(4, 0), 1.0);
  for (const auto& hmm : all_processes()) {
    const Eigen::VectorXd rows = hmm.combined().rowwise().sum();
    for (Eigen::Index i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows[i], 1.0, 1e-12);
  }
}

TEST(Processes, ReferentiallyTransparent) {
  for (const auto& name : process_names()) {
    const auto a = process_by_name(name), b = process_by_name(name);
    for (int x = 0; x < a.vocab_size(); ++x) EXPECT_EQ(a.matrix(x), b.matrix(x));
  }
  EXPECT_EQ(code_of([] { process_by_name("nope"); }), ErrorCode::Config);
}

TEST(HmmJson, RoundTripsExactly) {
  for (const auto& hmm : all_processes()) {
    const auto back = hmm_from_json(nlohmann::json::parse(hmm_to_json(hmm).dump()));
    EXPECT_EQ(back.state_names(), hmm.state_names());
    EXPECT_EQ(back.vocab(), hmm.vocab());
    for (int x = 0; x < hmm.vocab_size(); ++x) EXPECT_EQ(back.matrix(x), hmm.matrix(x));
  }
}

TEST(HmmJson, LoaderValidates) {
  auto j = nlohmann::json::parse(hmm_to_json(zero_one_random()).dump());
  j["matrices"]["0"][0][1] = 0.9;
  EXPECT_EQ(code_of([&] { hmm_from_json(j); }), ErrorCode::RowSumMismatch);
  EXPECT_EQ(code_of([] { hmm_from_json(nlohmann::json::parse(R"({"states": ["a"]})")); }), ErrorCode::Config);
}

TEST(HmmJson, ShippedProcessFilesMatchConstructors) {
  const std::filesystem::path dir = BSG_SOURCE_DIR "/processes";
  for (const auto& name : process_names()) {
    const auto file = load_hmm(dir / (name + ".json"));
    const auto hmm = process_by_name(name);
    EXPECT_EQ(file.vocab(), hmm.vocab());
    for (int x = 0; x < hmm.vocab_size(); ++x) EXPECT_EQ(file.matrix(x), hmm.matrix(x)) << name;
  }
}
