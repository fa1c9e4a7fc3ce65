#pragma once

// Affine probes from residual activations to belief-state coordinates.
//
// A probe predicts b ~ W a + c. Fitting minimizes the weighted squared error
// sum_i w_i ||b_i - (W a_i + c)||^2. Activations and targets are centered by
// their weighted means, the centered normal equations G W^T = R are solved
// with a complete orthogonal decomposition (minimum-norm W when G is
// singular), and c = mean(b) - W mean(a).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bsg/error.hpp"
#include "bsg/rng.hpp"
#include "bsg/types.hpp"

namespace bsg {

struct AffineProbe {
  Eigen::MatrixXd W;  // |S| x d
  Eigen::VectorXd c;  // |S|
  double fit_mse = 0.0;
  int rank = 0;                 // rank of the design matrix [A 1]
  bool rank_deficient = false;  // rank < d + 1; W is the minimum-norm solution
  std::vector<std::string> layer_tags;

  int input_dim() const { return static_cast<int>(W.cols()); }
  int output_dim() const { return static_cast<int>(W.rows()); }

  RowMat predict(const RowMat& activations) const {
    if (activations.cols() != W.cols()) fail(ErrorCode::DimensionMismatch, "activation width != probe input dim");
    RowMat out = activations * W.transpose();
    out.rowwise() += c.transpose();
    return out;
  }
};

// Activations, belief targets and row weights for one regression problem.
struct ProbeRows {
  RowMat activations;      // n x d
  RowMat beliefs;          // n x |S|
  Eigen::VectorXd weights; // n, non-negative

  std::size_t size() const { return static_cast<std::size_t>(activations.rows()); }

  void check() const {
    if (beliefs.rows() != activations.rows() || weights.size() != activations.rows()) {
      fail(ErrorCode::DimensionMismatch, "activations, beliefs and weights must have the same row count");
    }
  }
};

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

namespace detail {

// Weighted affine least squares over a subset of rows, with the targets of
// row idx[k] taken from target_row[k] (identity when empty) and likewise for
// the weight. With unit_weights every listed row counts once; repeated
// indices then act as repeated samples.
inline AffineProbe fit_rows(const ProbeRows& data, std::span<const std::size_t> idx,
                            std::span<const std::size_t> target_row, bool unit_weights = false) {
  const auto d = data.activations.cols();
  const auto s = data.beliefs.cols();
  const auto n = static_cast<Eigen::Index>(idx.size());
  auto tgt = [&](Eigen::Index k) { return target_row.empty() ? idx[k] : target_row[k]; };

  double wsum = 0.0;
  Eigen::RowVectorXd amean = Eigen::RowVectorXd::Zero(d);
  Eigen::RowVectorXd bmean = Eigen::RowVectorXd::Zero(s);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double w = unit_weights ? 1.0 : data.weights[static_cast<Eigen::Index>(tgt(k))];
    wsum += w;
    amean += w * data.activations.row(static_cast<Eigen::Index>(idx[k]));
    bmean += w * data.beliefs.row(static_cast<Eigen::Index>(tgt(k)));
  }
  if (!(wsum > 0.0)) fail(ErrorCode::InsufficientRows, "total row weight is zero");
  amean /= wsum;
  bmean /= wsum;

  RowMat xs(n, d);
  RowMat bs(n, s);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double sw = unit_weights ? 1.0 : std::sqrt(data.weights[static_cast<Eigen::Index>(tgt(k))]);
    xs.row(k) = sw * (data.activations.row(static_cast<Eigen::Index>(idx[k])) - amean);
    bs.row(k) = sw * (data.beliefs.row(static_cast<Eigen::Index>(tgt(k))) - bmean);
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose());
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  const Eigen::MatrixXd rhs = xs.transpose() * bs;

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
  AffineProbe probe;
  probe.W = cod.solve(rhs).transpose();
  probe.c = (bmean - amean * probe.W.transpose()).transpose();
  probe.rank = static_cast<int>(cod.rank()) + 1;
  probe.rank_deficient = cod.rank() < d;

  const RowMat resid = xs * probe.W.transpose() - bs;
  probe.fit_mse = resid.squaredNorm() / wsum;
  return probe;
}

inline double mse_rows(const AffineProbe& probe, const ProbeRows& data, std::span<const std::size_t> idx,
                       std::span<const std::size_t> target_row = {}, bool unit_weights = false) {
  if (data.activations.cols() != probe.W.cols() || data.beliefs.cols() != probe.W.rows()) {
    fail(ErrorCode::DimensionMismatch, "rows do not match probe dimensions");
  }
  const auto n = static_cast<Eigen::Index>(idx.size());
  RowMat x(n, data.activations.cols());
  RowMat b(n, data.beliefs.cols());
  Eigen::VectorXd w(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto t = static_cast<Eigen::Index>(target_row.empty() ? idx[static_cast<std::size_t>(k)]
                                                                : target_row[static_cast<std::size_t>(k)]);
    x.row(k) = data.activations.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]));
    b.row(k) = data.beliefs.row(t);
    w[k] = unit_weights ? 1.0 : data.weights[t];
  }
  const RowMat err = probe.predict(x) - b;
  const double num = w.dot(err.rowwise().squaredNorm());
  const double den = w.sum();
  if (!(den > 0.0)) fail(ErrorCode::InsufficientRows, "total row weight is zero");
  return num / den;
}

// Rows needed for a determined fit: |S|+1, or d+1 when the input is narrower
// (d+1 points in general position already pin down an affine map).
inline std::size_t min_rows(const ProbeRows& data) {
  return static_cast<std::size_t>(std::min(data.beliefs.cols(), data.activations.cols())) + 1;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// n row indices drawn i.i.d. with probability proportional to weight.
inline std::vector<std::size_t> weighted_draws(const Eigen::VectorXd& weights, std::size_t n, SplitMix64& rng) {
  std::vector<double> cum(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) cum[static_cast<std::size_t>(i)] = acc += weights[i];
  if (!(acc > 0.0)) fail(ErrorCode::InsufficientRows, "total row weight is zero");
  std::vector<std::size_t> out(n);
  for (auto& o : out) {
    const auto it = std::upper_bound(cum.begin(), cum.end(), rng.uniform() * acc);
    o = std::min(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
  }
  return out;
}

}  // namespace detail

inline AffineProbe fit_affine_probe(const ProbeRows& data) {
  data.check();
  const auto n = data.size();
  if (n < detail::min_rows(data)) {
    fail(ErrorCode::InsufficientRows, "need at least min(|S|, d)+1 rows to fit a probe");
  }
  const auto idx = all_rows(n);
  return detail::fit_rows(data, idx, {});
}

// Weighted mean of squared Euclidean error between W a + c and b.
inline double probe_mse(const AffineProbe& probe, const ProbeRows& data) {
  data.check();
  const auto idx = all_rows(data.size());
  return detail::mse_rows(probe, data, idx);
}

// The constant probe predicting the weighted mean belief.
inline AffineProbe centroid_probe(const ProbeRows& data) {
  data.check();
  AffineProbe p;
  p.W = Eigen::MatrixXd::Zero(data.beliefs.cols(), data.activations.cols());
  p.c = (data.weights.transpose() * data.beliefs).transpose() / data.weights.sum();
  p.fit_mse = probe_mse(p, data);
  return p;
}

// Weighted variance of the beliefs around their weighted mean; the MSE of
// the centroid probe.
inline double centroid_baseline_mse(const ProbeRows& data) { return centroid_probe(data).fit_mse; }

// How the controls turn weighted rows into a sample.
//   Resample: draw as many rows as there are, i.i.d. by weight, and treat the
//             draws as an unweighted sampled dataset (duplicates included).
//   Rows:     operate on the distinct rows themselves, weights attached.
enum class ControlSampling { Resample, Rows };

inline const char* to_string(ControlSampling s) { return s == ControlSampling::Resample ? "resample" : "rows"; }

struct CrossValidationResult {
  double mse_mean = 0.0;
  double mse_std = 0.0;
  int repeats = 0;
  double train_fraction = 0.0;
  std::vector<double> mses;
};

// Repeated random splits: fit on `train_fraction` of the rows, score the rest.
inline CrossValidationResult cross_validate(const ProbeRows& data, double train_fraction, int repeats,
                                            std::uint64_t seed, ControlSampling mode = ControlSampling::Resample) {
  data.check();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorCode::InvalidArgument, "train_fraction in (0,1)");
  if (repeats < 1) fail(ErrorCode::InvalidArgument, "repeats must be positive");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train < detail::min_rows(data) || n_train >= n) {
    fail(ErrorCode::InsufficientRows, "train split needs at least min(|S|, d)+1 rows and a non-empty test split");
  }
  const bool unit = mode == ControlSampling::Resample;
  CrossValidationResult out;
  out.repeats = repeats;
  out.train_fraction = train_fraction;
  for (int r = 0; r < repeats; ++r) {
    SplitMix64 rng(derive_seed(seed, "cv-split", static_cast<std::uint64_t>(r)));
    std::vector<std::size_t> rows = unit ? detail::weighted_draws(data.weights, n, rng) : all_rows(n);
    shuffle(rows, rng);
    const std::span<const std::size_t> train(rows.data(), n_train);
    const std::span<const std::size_t> test(rows.data() + n_train, n - n_train);
    const AffineProbe probe = detail::fit_rows(data, train, {}, unit);
    out.mses.push_back(detail::mse_rows(probe, data, test, {}, unit));
  }
  out.mse_mean = detail::mean(out.mses);
  out.mse_std = detail::stddev(out.mses);
  return out;
}

struct ShuffleResult {
  double mse_mean = 0.0;
  double mse_std = 0.0;
  // Mean distance of predictions from the belief centroid, divided by the
  // mean distance of the true beliefs from it. Near 0 means the fit
  // collapsed to the centroid.
  double spread_ratio_mean = 0.0;
  double spread_ratio_std = 0.0;
  int repeats = 0;
  std::vector<double> mses;
};

// Each repeat permutes the belief labels across the sample, which keeps the
// belief cloud intact while destroying its pairing with the inputs, and then
// refits. In Rows mode the weight travels with its belief.
inline ShuffleResult shuffle_control(const ProbeRows& data, int repeats, std::uint64_t seed,
                                     ControlSampling mode = ControlSampling::Resample) {
  data.check();
  if (repeats < 1) fail(ErrorCode::InvalidArgument, "repeats must be positive");
  const std::size_t n = data.size();
  {
    bool distinct = false;
    for (std::size_t i = 1; i < n && !distinct; ++i) {
      distinct = (data.beliefs.row(static_cast<Eigen::Index>(i)) - data.beliefs.row(0)).cwiseAbs().maxCoeff() > 0.0;
    }
    if (!distinct) fail(ErrorCode::InvalidArgument, "shuffle control needs at least two distinct beliefs");
  }
  const Eigen::RowVectorXd centroid = (data.weights.transpose() * data.beliefs) / data.weights.sum();
  double true_spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    true_spread += data.weights[ii] * (data.beliefs.row(ii) - centroid).norm();
  }
  true_spread /= data.weights.sum();

  const bool unit = mode == ControlSampling::Resample;
  ShuffleResult out;
  out.repeats = repeats;
  std::vector<double> ratios;
  for (int r = 0; r < repeats; ++r) {
    SplitMix64 rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(r)));
    const std::vector<std::size_t> input = unit ? detail::weighted_draws(data.weights, n, rng) : all_rows(n);
    const auto perm = permutation(n, rng);
    std::vector<std::size_t> target(n);
    for (std::size_t k = 0; k < n; ++k) target[k] = input[perm[k]];
    const AffineProbe probe = detail::fit_rows(data, input, target, unit);
    out.mses.push_back(probe.fit_mse);
    const RowMat pred = probe.predict(data.activations);
    double spread = 0.0;
    double wsum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w = unit ? 1.0 : data.weights[static_cast<Eigen::Index>(target[k])];
      spread += w * (pred.row(static_cast<Eigen::Index>(input[k])) - centroid).norm();
      wsum += w;
    }
    ratios.push_back(true_spread > 0.0 ? (spread / wsum) / true_spread : 0.0);
  }
  out.mse_mean = detail::mean(out.mses);
  out.mse_std = detail::stddev(out.mses);
  out.spread_ratio_mean = detail::mean(ratios);
  out.spread_ratio_std = detail::stddev(ratios);
  return out;
}

}  // namespace bsg
