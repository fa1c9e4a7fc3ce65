// Fits an affine probe to activations that are a random linear image of the
// Mess3 belief states plus noise, then runs the two controls.

#include <cstdio>

#include "bsg/bsg.hpp"

int main() {
  using namespace bsg;
  const auto hmm = mess3();
  const auto msp = build_msp(hmm, 6);
  const auto prefixes = enumerate_labeled_dataset(hmm, msp, 6);

  SplitMix64 rng(7);
  const int d = 16;
  Eigen::MatrixXd embed(3, d);
  for (Eigen::Index i = 0; i < embed.size(); ++i) embed.data()[i] = rng.normal();
  RowMat acts(static_cast<Eigen::Index>(prefixes.size()), d);
  for (std::size_t r = 0; r < prefixes.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    acts.row(row) = prefixes[r].belief.probs().transpose() * embed;
    for (int k = 0; k < d; ++k) acts(row, k) += 0.01 * rng.normal();
  }

  const ProbeRows rows = make_probe_rows(acts, prefixes);
  const auto probe = fit_affine_probe(rows);
  const auto cv = cross_validate(rows, 0.2, 50, 1);
  const auto sh = shuffle_control(rows, 50, 2);
  std::printf("rows %zu\n", rows.size());
  std::printf("probe mse      %.3e\n", probe.fit_mse);
  std::printf("baseline mse   %.3e\n", centroid_baseline_mse(rows));
  std::printf("cv mse         %.3e +- %.1e\n", cv.mse_mean, cv.mse_std);
  std::printf("shuffled mse   %.3e  spread ratio %.3f\n", sh.mse_mean, sh.spread_ratio_mean);
}
