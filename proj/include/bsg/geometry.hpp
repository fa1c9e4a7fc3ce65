#pragma once

// Analyses of probed belief geometry: projections, per-state centroids,
// pairwise distance studies, layer sweeps and next-token degeneracy.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bsg/msp.hpp"
#include "bsg/probe.hpp"
#include "bsg/stats.hpp"
#include "bsg/transformer/capture.hpp"

namespace bsg {

enum class Weighting { Probability, Uniform };

inline const char* to_string(Weighting w) { return w == Weighting::Probability ? "probability" : "uniform"; }

inline Weighting weighting_from_string(const std::string& s) {
  if (s == "probability") return Weighting::Probability;
  if (s == "uniform") return Weighting::Uniform;
  fail(ErrorCode::Config, "weighting must be 'probability' or 'uniform', got '" + s + "'");
}

inline ProbeRows make_probe_rows(const RowMat& activations, const std::vector<LabeledPrefix>& prefixes,
                                 Weighting weighting = Weighting::Probability) {
  if (static_cast<std::size_t>(activations.rows()) != prefixes.size()) {
    fail(ErrorCode::DimensionMismatch, "activation rows != labeled prefixes");
  }
  ProbeRows rows;
  rows.activations = activations;
  const auto n = static_cast<Eigen::Index>(prefixes.size());
  const int s = prefixes.empty() ? 0 : prefixes.front().belief.size();
  rows.beliefs.resize(n, s);
  rows.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = prefixes[static_cast<std::size_t>(i)];
    rows.beliefs.row(i) = p.belief.probs().transpose();
    rows.weights[i] = weighting == Weighting::Probability ? p.prefix_probability : 1.0;
  }
  return rows;
}

// Distinct, well-spread colors for processes with more than three states.
inline std::array<double, 3> palette_color(std::size_t index) {
  const double hue = std::fmod(static_cast<double>(index) * 0.618033988749895, 1.0) * 6.0;
  const double sat = 0.75;
  const double val = index % 2 == 0 ? 0.95 : 0.7;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  switch (sector) {
    case 0: return {val, t, p};
    case 1: return {q, val, p};
    case 2: return {p, val, t};
    case 3: return {p, q, val};
    case 4: return {t, p, val};
    default: return {val, p, q};
  }
}

struct ProjectedRow {
  TokenSeq tokens;
  int position = 0;
  std::size_t state_index = 0;
  double weight = 0.0;
  Eigen::VectorXd predicted;  // raw W a + c
  Eigen::VectorXd clipped;    // negatives zeroed, renormalized; for plotting only
  Eigen::VectorXd true_belief;
  std::array<double, 3> rgb{};
};

struct ProjectedGeometry {
  std::vector<ProjectedRow> rows;
};

inline ProjectedGeometry project_geometry(const AffineProbe& probe, const RowMat& activations,
                                          const std::vector<LabeledPrefix>& prefixes) {
  if (static_cast<std::size_t>(activations.rows()) != prefixes.size()) {
    fail(ErrorCode::DimensionMismatch, "activation rows != labeled prefixes");
  }
  const RowMat pred = probe.predict(activations);
  ProjectedGeometry out;
  out.rows.reserve(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto& p = prefixes[i];
    ProjectedRow r;
    r.tokens = p.tokens;
    r.position = p.position;
    r.state_index = p.state_index;
    r.weight = p.prefix_probability;
    r.predicted = pred.row(static_cast<Eigen::Index>(i)).transpose();
    r.clipped = r.predicted.cwiseMax(0.0);
    const double s = r.clipped.sum();
    r.clipped = s > 0.0 ? Eigen::VectorXd(r.clipped / s)
                        : Eigen::VectorXd::Constant(r.clipped.size(), 1.0 / static_cast<double>(r.clipped.size()));
    r.true_belief = p.belief.probs();
    if (r.true_belief.size() == 3) {
      r.rgb = {r.true_belief[0], r.true_belief[1], r.true_belief[2]};
    } else {
      r.rgb = palette_color(p.state_index);
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

using CentroidMap = std::map<std::size_t, Eigen::VectorXd>;

// Weighted mean of the predicted beliefs for each ground-truth state label.
// Every label in `required` must have at least one row.
inline CentroidMap belief_centroids(const ProjectedGeometry& projected, const std::vector<std::size_t>& required = {}) {
  std::map<std::size_t, std::pair<Eigen::VectorXd, double>> acc;
  for (const auto& r : projected.rows) {
    auto [it, inserted] = acc.try_emplace(r.state_index, Eigen::VectorXd::Zero(r.predicted.size()), 0.0);
    it->second.first += r.weight * r.predicted;
    it->second.second += r.weight;
  }
  CentroidMap out;
  for (auto& [label, sum] : acc) {
    if (!(sum.second > 0.0)) continue;
    out.emplace(label, sum.first / sum.second);
  }
  for (std::size_t label : required) {
    if (!out.contains(label)) fail(ErrorCode::EmptyLabel, "no rows for belief state " + std::to_string(label));
  }
  return out;
}

// Total prefix probability per MSP state.
inline std::map<std::size_t, double> state_weights(const std::vector<LabeledPrefix>& prefixes) {
  std::map<std::size_t, double> w;
  for (const auto& p : prefixes) w[p.state_index] += p.prefix_probability;
  return w;
}

// The `max_states` states carrying the most prefix probability (ties by
// index), returned in index order. All states when there are few enough.
inline std::vector<std::size_t> select_states(const std::map<std::size_t, double>& weights, std::size_t max_states) {
  std::vector<std::pair<std::size_t, double>> v(weights.begin(), weights.end());
  if (v.size() > max_states) {
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    v.resize(max_states);
  }
  std::vector<std::size_t> out;
  for (const auto& [s, w] : v) out.push_back(s);
  std::sort(out.begin(), out.end());
  return out;
}

struct DistancePair {
  std::size_t a = 0;
  std::size_t b = 0;
  double d_truth = 0.0;
  double d_repr = 0.0;
  double d_next = 0.0;
};

struct DistanceStudy {
  std::vector<std::size_t> states;
  std::vector<DistancePair> pairs;  // sorted lexicographically by (a, b)
  stats::LinearFit truth_fit;       // d_repr ~ d_truth
  stats::LinearFit next_fit;        // d_repr ~ d_next
  double r2_truth_vs_repr = 0.0;
  double r2_next_vs_repr = 0.0;
};

inline DistanceStudy distance_study(const TokenLabeledHmm& hmm, const MixedStatePresentation& msp,
                                    const CentroidMap& centroids, std::vector<std::size_t> states) {
  std::sort(states.begin(), states.end());
  states.erase(std::unique(states.begin(), states.end()), states.end());
  if (states.size() < 2) fail(ErrorCode::TooFewStates, "distance study needs at least two belief states");
  std::vector<Eigen::VectorXd> next(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i] >= msp.size()) fail(ErrorCode::InvalidArgument, "state index out of range");
    if (!centroids.contains(states[i])) {
      fail(ErrorCode::EmptyLabel, "no centroid for belief state " + std::to_string(states[i]));
    }
    next[i] = next_token_distribution(hmm, msp.states[states[i]]);
  }
  DistanceStudy study;
  study.states = states;
  study.pairs.reserve(states.size() * (states.size() - 1) / 2);
  std::vector<double> truth, repr, nxt;
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      DistancePair p;
      p.a = states[i];
      p.b = states[j];
      p.d_truth = (msp.states[p.a].probs() - msp.states[p.b].probs()).norm();
      p.d_repr = (centroids.at(p.a) - centroids.at(p.b)).norm();
      p.d_next = (next[i] - next[j]).norm();
      truth.push_back(p.d_truth);
      repr.push_back(p.d_repr);
      nxt.push_back(p.d_next);
      study.pairs.push_back(p);
    }
  }
  study.truth_fit = stats::linear_fit(truth, repr);
  study.next_fit = stats::linear_fit(nxt, repr);
  study.r2_truth_vs_repr = study.truth_fit.r2;
  study.r2_next_vs_repr = study.next_fit.r2;
  return study;
}

struct LayerSweep {
  std::vector<std::pair<std::string, double>> per_layer;  // in layer order
  std::vector<std::string> concatenated_tags;
  double concatenated_mse = 0.0;
  double baseline_mse = 0.0;  // centroid probe

  double mse(const std::string& tag) const {
    for (const auto& [t, m] : per_layer) {
      if (t == tag) return m;
    }
    fail(ErrorCode::InvalidArgument, "no layer '" + tag + "' in sweep");
  }

  double best_single() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [t, m] : per_layer) best = std::min(best, m);
    return best;
  }
};

// One probe per captured tag and one on the concatenation of every block's
// resid_post vector, each scored on the rows it was fit to.
inline LayerSweep per_layer_probe_sweep(const nn::ActivationDataset& ds, const std::vector<LabeledPrefix>& prefixes,
                                        Weighting weighting = Weighting::Probability) {
  LayerSweep sweep;
  for (const auto& tag : ds.layer_tags) {
    const ProbeRows rows = make_probe_rows(ds.layer(tag), prefixes, weighting);
    const AffineProbe probe = fit_affine_probe(rows);
    sweep.per_layer.emplace_back(tag, probe_mse(probe, rows));
    if (sweep.per_layer.size() == 1) sweep.baseline_mse = centroid_baseline_mse(rows);
  }
  for (const auto& tag : ds.layer_tags) {
    if (tag != nn::kFinalTag) sweep.concatenated_tags.push_back(tag);
  }
  const ProbeRows rows = make_probe_rows(ds.concatenated(sweep.concatenated_tags), prefixes, weighting);
  sweep.concatenated_mse = probe_mse(fit_affine_probe(rows), rows);
  return sweep;
}

// Pairs of MSP states (i < j) whose next-token distributions agree within
// `tolerance` (L-infinity) although the beliefs differ by more than the MSP
// dedup tolerance.
inline std::vector<std::pair<std::size_t, std::size_t>> degeneracy_report(const TokenLabeledHmm& hmm,
                                                                         const MixedStatePresentation& msp,
                                                                         double tolerance) {
  const std::size_t n = msp.size();
  std::vector<Eigen::VectorXd> next(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    next[i] = next_token_distribution(hmm, msp.states[i]);
    order[i] = i;
  }
  // Candidates must agree within tolerance on the first coordinate, so a
  // sweep over the sorted first coordinate finds every pair.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return next[a][0] < next[b][0] || (next[a][0] == next[b][0] && a < b);
  });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n && next[order[v]][0] - next[order[u]][0] <= tolerance; ++v) {
      const std::size_t a = order[u], b = order[v];
      if ((next[a] - next[b]).cwiseAbs().maxCoeff() > tolerance) continue;
      if (msp.states[a].linf_distance(msp.states[b]) <= msp.dedup_tolerance) continue;
      out.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bsg
