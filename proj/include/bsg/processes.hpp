#pragma once

// The three benchmark processes, with matrices as exact decimal literals.

#include <string>
#include <vector>

#include "bsg/hmm.hpp"

namespace bsg {

// 3 states, tokens {A, B, C}. The token matrices are cyclic relabelings of
// one another, so the stationary distribution is uniform.
inline TokenLabeledHmm mess3() {
  Eigen::MatrixXd a(3, 3), b(3, 3), c(3, 3);
  a << 0.765, 0.00375, 0.00375,
       0.0425, 0.0675, 0.00375,
       0.0425, 0.00375, 0.0675;
  b << 0.0675, 0.0425, 0.00375,
       0.00375, 0.765, 0.00375,
       0.00375, 0.0425, 0.0675;
  c << 0.0675, 0.00375, 0.0425,
       0.00375, 0.0675, 0.0425,
       0.00375, 0.00375, 0.765;
  return validate_hmm({a, b, c}, {"0", "1", "2"}, {"A", "B", "C"});
}

// Random-Random-XOR: two fair coin flips followed by their XOR.
inline TokenLabeledHmm rrxor() {
  Eigen::MatrixXd t0(5, 5), t1(5, 5);
  t0 << 0, 0.5, 0, 0, 0,
        0, 0, 0, 0, 0.5,
        0, 0, 0, 0.5, 0,
        0, 0, 0, 0, 0,
        1, 0, 0, 0, 0;
  t1 << 0, 0, 0.5, 0, 0,
        0, 0, 0, 0.5, 0,
        0, 0, 0, 0, 0.5,
        1, 0, 0, 0, 0,
        0, 0, 0, 0, 0;
  return validate_hmm({t0, t1}, {"S", "0", "1", "T", "F"}, {"0", "1"});
}

// "...01R01R...": S0 emits 0 and moves to S1, S1 emits 1 and moves to SR,
// SR emits a fair bit and returns to S0. Transition weights are reconstructed
// from the verbal description of the process.
inline TokenLabeledHmm zero_one_random() {
  Eigen::MatrixXd t0(3, 3), t1(3, 3);
  t0 << 0, 1, 0,
        0, 0, 0,
        0.5, 0, 0;
  t1 << 0, 0, 0,
        0, 0, 1,
        0.5, 0, 0;
  return validate_hmm({t0, t1}, {"S0", "S1", "SR"}, {"0", "1"});
}

inline const std::vector<std::string>& process_names() {
  static const std::vector<std::string> names{"mess3", "rrxor", "zero_one_random"};
  return names;
}

inline TokenLabeledHmm process_by_name(const std::string& name) {
  if (name == "mess3") return mess3();
  if (name == "rrxor") return rrxor();
  if (name == "zero_one_random" || name == "01r") return zero_one_random();
  fail(ErrorCode::Config, "unknown process '" + name + "'");
}

}  // namespace bsg
