#pragma once

// End-to-end experiment driver.
//
// run_experiment walks process -> MSP -> labeled prefixes -> training ->
// activation capture -> probes -> analyses and writes every artifact into
// one directory. All randomness comes from the root seed: training uses it
// directly (init and batches derive their own streams from it) and the
// probe controls use derive_seed(seed, "cv") and derive_seed(seed, "shuffle").
// The summary carries no timestamps or paths, so a rerun with the same
// config reproduces it byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsg/geometry.hpp"
#include "bsg/hmm_io.hpp"
#include "bsg/msp_io.hpp"
#include "bsg/probe.hpp"
#include "bsg/probe_io.hpp"
#include "bsg/processes.hpp"
#include "bsg/stats.hpp"
#include "bsg/svg.hpp"
#include "bsg/transformer/capture.hpp"
#include "bsg/transformer/checkpoint.hpp"
#include "bsg/transformer/train.hpp"

namespace bsg {

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "BSG_OUTPUT_ROOT";

// An Error raised inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "[" + stage + "] " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class F>
decltype(auto) run_stage(const std::string& name, F&& f) {
  try {
    return std::forward<F>(f)();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(name, Error(ErrorCode::Io, e.what()));
  } catch (const nlohmann::json::exception& e) {
    throw StageError(name, Error(ErrorCode::Io, e.what()));
  }
}

struct ProbeSettings {
  std::vector<std::string> layer_tags{nn::kFinalTag};
  Weighting weighting = Weighting::Probability;
  int cv_repeats = 1000;
  double cv_train_fraction = 0.2;
  int shuffle_repeats = 1000;
  ControlSampling control_sampling = ControlSampling::Resample;
};

struct AnalysisSettings {
  std::size_t distance_max_states = 1500;
  double degeneracy_tolerance = 1e-9;
  bool checkpoint_sweep = true;
  bool save_activations = true;
  std::size_t plot_max_points = 20000;
  int loss_window = 1000;
};

struct ExperimentConfig {
  std::string process = "mess3";  // built-in name; ignored when hmm_path is set
  std::string hmm_path;
  std::uint64_t seed = 0;
  int msp_depth = 0;  // 0: the model's context length
  double dedup_tolerance = kDefaultDedupTolerance;
  nn::ModelConfig model;
  nn::TrainConfig train;
  ProbeSettings probe;
  AnalysisSettings analysis;
  std::string output_dir;  // empty: runs/<process>

  std::string process_label() const {
    return hmm_path.empty() ? process : std::filesystem::path(hmm_path).stem().string();
  }
};

// Desk-scale step counts: RRXOR's objective is harder and gets twice as many.
inline std::int64_t default_steps(const std::string& process) { return process == "rrxor" ? 100'000 : 50'000; }

inline ExperimentConfig default_config(const std::string& process) {
  ExperimentConfig c;
  c.process = process;
  c.train.steps = default_steps(process);
  // RRXOR's geometry is spread over the blocks rather than held in the last one.
  if (process == "rrxor") c.probe.layer_tags = {nn::kAllBlocksTag};
  return c;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  if (c.hmm_path.empty()) {
    j["process"] = c.process;
  } else {
    j["hmm_path"] = c.hmm_path;
  }
  j["seed"] = c.seed;
  j["msp_depth"] = c.msp_depth;
  j["dedup_tolerance"] = c.dedup_tolerance;
  j["model"] = nlohmann::json(c.model);
  nlohmann::json train = c.train;
  train.erase("seed");
  j["train"] = train;
  j["probe"] = {{"layer_tags", c.probe.layer_tags},
                {"weighting", to_string(c.probe.weighting)},
                {"cv_repeats", c.probe.cv_repeats},
                {"cv_train_fraction", c.probe.cv_train_fraction},
                {"shuffle_repeats", c.probe.shuffle_repeats},
                {"control_sampling", to_string(c.probe.control_sampling)}};
  j["analysis"] = {{"distance_max_states", c.analysis.distance_max_states},
                   {"degeneracy_tolerance", c.analysis.degeneracy_tolerance},
                   {"checkpoint_sweep", c.analysis.checkpoint_sweep},
                   {"save_activations", c.analysis.save_activations},
                   {"plot_max_points", c.analysis.plot_max_points},
                   {"loss_window", c.analysis.loss_window}};
  j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) fail(ErrorCode::Config, "unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) fail(ErrorCode::Config, "experiment config must be a JSON object");
    detail::reject_unknown(j,
                           {"process", "hmm_path", "seed", "msp_depth", "dedup_tolerance", "model", "train", "probe",
                            "analysis", "output_dir"},
                           "config");
    ExperimentConfig c = default_config(j.value("process", std::string("mess3")));
    c.hmm_path = j.value("hmm_path", std::string());
    c.seed = j.value("seed", c.seed);
    c.msp_depth = j.value("msp_depth", c.msp_depth);
    c.dedup_tolerance = j.value("dedup_tolerance", c.dedup_tolerance);
    if (j.contains("model")) {
      detail::reject_unknown(j["model"],
                             {"context_length", "d_model", "n_layers", "n_heads", "d_head", "d_mlp", "vocab_size",
                              "ln_eps", "activation", "layer_norm", "causal_mask"},
                             "model");
      c.model = j["model"].get<nn::ModelConfig>();
      if (j["model"].value("activation", std::string("relu")) != "relu" ||
          j["model"].value("layer_norm", std::string("pre")) != "pre" || !j["model"].value("causal_mask", true)) {
        fail(ErrorCode::Config, "only relu activation, pre layer norm and causal masking are supported");
      }
    }
    if (j.contains("train")) {
      detail::reject_unknown(j["train"], {"optimizer", "batch_size", "learning_rate", "weight_decay", "steps"}, "train");
      if (j["train"].value("optimizer", std::string("sgd")) != "sgd") fail(ErrorCode::Config, "optimizer must be sgd");
      c.train = j["train"].get<nn::TrainConfig>();
      if (!j["train"].contains("steps")) c.train.steps = default_steps(c.process);
    }
    if (j.contains("probe")) {
      const auto& p = j["probe"];
      detail::reject_unknown(
          p, {"layer_tags", "weighting", "cv_repeats", "cv_train_fraction", "shuffle_repeats", "control_sampling"},
          "probe");
      c.probe.layer_tags = p.value("layer_tags", c.probe.layer_tags);
      c.probe.weighting = weighting_from_string(p.value("weighting", std::string(to_string(c.probe.weighting))));
      c.probe.cv_repeats = p.value("cv_repeats", c.probe.cv_repeats);
      c.probe.cv_train_fraction = p.value("cv_train_fraction", c.probe.cv_train_fraction);
      c.probe.shuffle_repeats = p.value("shuffle_repeats", c.probe.shuffle_repeats);
      const auto mode = p.value("control_sampling", std::string("resample"));
      if (mode != "resample" && mode != "rows") fail(ErrorCode::Config, "control_sampling must be resample or rows");
      c.probe.control_sampling = mode == "rows" ? ControlSampling::Rows : ControlSampling::Resample;
    }
    if (j.contains("analysis")) {
      const auto& a = j["analysis"];
      detail::reject_unknown(a,
                             {"distance_max_states", "degeneracy_tolerance", "checkpoint_sweep", "save_activations",
                              "plot_max_points", "loss_window"},
                             "analysis");
      c.analysis.distance_max_states = a.value("distance_max_states", c.analysis.distance_max_states);
      c.analysis.degeneracy_tolerance = a.value("degeneracy_tolerance", c.analysis.degeneracy_tolerance);
      c.analysis.checkpoint_sweep = a.value("checkpoint_sweep", c.analysis.checkpoint_sweep);
      c.analysis.save_activations = a.value("save_activations", c.analysis.save_activations);
      c.analysis.plot_max_points = a.value("plot_max_points", c.analysis.plot_max_points);
      c.analysis.loss_window = a.value("loss_window", c.analysis.loss_window);
    }
    c.output_dir = j.value("output_dir", std::string());
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, std::string("bad experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Config, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline TokenLabeledHmm resolve_process(const ExperimentConfig& c) {
  if (!c.hmm_path.empty()) {
    if (!std::filesystem::exists(c.hmm_path)) fail(ErrorCode::Config, "HMM file not found: " + c.hmm_path);
    return load_hmm(c.hmm_path);
  }
  try {
    return process_by_name(c.process);
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

// Relative output directories live under $BSG_OUTPUT_ROOT when it is set.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
  std::filesystem::path dir = c.output_dir.empty() ? std::filesystem::path("runs") / c.process_label()
                                                   : std::filesystem::path(c.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') dir = root / dir;
  }
  return dir;
}

inline void validate_config(const ExperimentConfig& c) {
  c.model.validate();
  c.train.validate();
  if (c.msp_depth < 0 || c.msp_depth > c.model.context_length) {
    fail(ErrorCode::Config, "msp_depth must be in [0, context_length]");
  }
  if (!(c.dedup_tolerance > 0.0)) fail(ErrorCode::Config, "dedup_tolerance must be positive");
  if (c.probe.layer_tags.empty()) fail(ErrorCode::Config, "probe.layer_tags must not be empty");
  const auto tags = nn::layer_tags(c.model);
  for (const auto& t : c.probe.layer_tags) {
    if (t != nn::kAllBlocksTag && std::find(tags.begin(), tags.end(), t) == tags.end()) fail(ErrorCode::Config, "unknown layer tag '" + t + "'");
  }
  if (c.probe.cv_repeats < 1 || c.probe.shuffle_repeats < 1) fail(ErrorCode::Config, "repeats must be positive");
  if (!(c.probe.cv_train_fraction > 0.0 && c.probe.cv_train_fraction < 1.0)) {
    fail(ErrorCode::Config, "cv_train_fraction must be in (0, 1)");
  }
  if (c.analysis.distance_max_states < 2) fail(ErrorCode::Config, "distance_max_states must be at least 2");
  if (c.analysis.loss_window < 1) fail(ErrorCode::Config, "loss_window must be positive");
}

using Logger = std::function<void(const std::string&)>;

struct SweepResult {
  std::vector<std::int64_t> steps;
  std::vector<double> mse;
  std::vector<double> baseline_mse;
  double spearman_mse_vs_log_step = 0.0;
};

namespace detail {

inline std::vector<std::size_t> plot_rows(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> out;
  const std::size_t stride = cap == 0 || n <= cap ? 1 : (n + cap - 1) / cap;
  for (std::size_t i = 0; i < n; i += stride) out.push_back(i);
  return out;
}

inline std::string projection_svg(const ProjectedGeometry& g, const TokenLabeledHmm& hmm, bool predicted,
                                  const std::string& title, std::size_t cap) {
  std::vector<svg::SimplexPoint> pts;
  for (std::size_t i : plot_rows(g.rows.size(), cap)) {
    const auto& r = g.rows[i];
    pts.push_back({predicted ? r.predicted : r.true_belief, r.rgb});
  }
  return svg::simplex_scatter(pts, hmm.num_states(), title, hmm.state_names());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { svg::write_file(path, text); }

inline std::vector<std::string> sequence_keys(const TokenLabeledHmm& hmm, const std::vector<LabeledPrefix>& rows) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(sequence_key(hmm, r.tokens));
  return out;
}

}  // namespace detail

// Capture and probe every checkpoint in <dir>/checkpoints.
inline SweepResult checkpoint_sweep_analysis(const std::filesystem::path& dir, const TokenLabeledHmm& hmm,
                                             const std::vector<LabeledPrefix>& prefixes, const ProbeSettings& probe,
                                             std::size_t plot_max_points = 20000, const Logger& log = {}) {
  const auto ckpts = nn::list_checkpoints(dir / "checkpoints");
  if (ckpts.size() < 2) {
    fail(ErrorCode::MissingCheckpoints, "checkpoint sweep needs at least 2 checkpoints in " + (dir / "checkpoints").string());
  }
  std::filesystem::create_directories(dir / "sweep");
  SweepResult out;
  std::ostringstream csv;
  csv << "step,mse,baseline_mse\n";
  for (const auto& info : ckpts) {
    const auto ck = nn::load_checkpoint(info.manifest);
    const auto ds = nn::capture_activations(ck.params, prefixes);
    const ProbeRows rows = make_probe_rows(ds.probe_input(probe.layer_tags), prefixes, probe.weighting);
    AffineProbe p = fit_affine_probe(rows);
    const double mse = probe_mse(p, rows);
    const double base = centroid_baseline_mse(rows);
    out.steps.push_back(info.step);
    out.mse.push_back(mse);
    out.baseline_mse.push_back(base);
    csv << info.step << ',' << format_double(mse) << ',' << format_double(base) << '\n';
    const auto geom = project_geometry(p, rows.activations, prefixes);
    detail::write_text(dir / "sweep" / (nn::checkpoint_stem(info.step) + ".svg"),
                       detail::projection_svg(geom, hmm, true, "step " + std::to_string(info.step), plot_max_points));
    if (log) log("sweep step " + std::to_string(info.step) + " mse " + format_double(mse));
  }
  detail::write_text(dir / "checkpoint_sweep.csv", csv.str());
  // Spearman is rank-based, so log(step) and step give the same value; step 0
  // simply ranks first.
  std::vector<double> x(out.steps.begin(), out.steps.end());
  out.spearman_mse_vs_log_step = stats::spearman(x, out.mse);
  return out;
}

// Rebuilds the process and prefixes from an experiment directory.
inline SweepResult checkpoint_sweep_analysis(const std::filesystem::path& dir, const Logger& log = {}) {
  if (nn::list_checkpoints(dir / "checkpoints").size() < 2) {
    fail(ErrorCode::MissingCheckpoints, "checkpoint sweep needs at least 2 checkpoints in " + (dir / "checkpoints").string());
  }
  const ExperimentConfig cfg = load_config(dir / "config.json");
  const TokenLabeledHmm hmm = load_hmm(dir / "hmm.json");
  const int depth = cfg.msp_depth == 0 ? cfg.model.context_length : cfg.msp_depth;
  const auto msp = build_msp(hmm, depth, MspOptions{cfg.dedup_tolerance});
  const auto prefixes = enumerate_labeled_dataset(hmm, msp, depth);
  return checkpoint_sweep_analysis(dir, hmm, prefixes, cfg.probe, cfg.analysis.plot_max_points, log);
}

struct ExperimentResult {
  std::filesystem::path dir;
  nlohmann::ordered_json summary;
};

inline ExperimentResult run_experiment(ExperimentConfig cfg, const Logger& log = {}) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const TokenLabeledHmm hmm = run_stage("config", [&] {
    TokenLabeledHmm h = resolve_process(cfg);
    cfg.model.vocab_size = h.vocab_size();
    cfg.train.seed = cfg.seed;
    validate_config(cfg);
    return h;
  });
  const std::filesystem::path dir = resolve_output_dir(cfg);
  const int depth = cfg.msp_depth == 0 ? cfg.model.context_length : cfg.msp_depth;

  run_stage("setup", [&] {
    std::filesystem::create_directories(dir);
    // a summary is only present once every stage of this run has finished
    std::filesystem::remove(dir / "summary.json");
    detail::write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
    save_hmm(hmm, dir / "hmm.json");
  });

  say("building MSP to depth " + std::to_string(depth));
  const auto msp = run_stage("msp", [&] { return build_msp(hmm, depth, MspOptions{cfg.dedup_tolerance}); });
  const auto prefixes = run_stage("msp", [&] {
    save_msp(hmm, msp, dir / "msp.json");
    auto rows = enumerate_labeled_dataset(hmm, msp, depth);
    save_labeled_csv(hmm, rows, dir / "labeled_prefixes.csv");
    return rows;
  });
  const double floor = entropy_floor(prefixes, 1, cfg.model.context_length - 1);
  say("MSP states " + std::to_string(msp.size()) + ", prefixes " + std::to_string(prefixes.size()) +
      ", entropy floor " + format_double(floor));

  const auto degenerate = run_stage("degeneracy", [&] {
    auto pairs = degeneracy_report(hmm, msp, cfg.analysis.degeneracy_tolerance);
    std::ostringstream csv;
    csv << "state_a,state_b\n";
    for (const auto& [a, b] : pairs) csv << a << ',' << b << '\n';
    detail::write_text(dir / "degeneracy.csv", csv.str());
    return pairs;
  });

  say("training " + std::to_string(cfg.train.steps) + " steps");
  const auto trained = run_stage("train", [&] {
    std::filesystem::remove_all(dir / "checkpoints");
    auto sink = [&](std::int64_t step, const nn::ModelParams& p, double loss) {
      nn::save_checkpoint(dir / "checkpoints", p, step, cfg.seed, loss);
      say("checkpoint " + std::to_string(step));
    };
    auto r = nn::train(cfg.model, cfg.train, hmm, sink);
    std::ostringstream csv;
    csv << "step,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) csv << i + 1 << ',' << format_double(r.losses[i]) << '\n';
    detail::write_text(dir / "loss_curve.csv", csv.str());
    return r;
  });

  say("capturing activations");
  const auto ds = run_stage("capture", [&] {
    auto d = nn::capture_activations(trained.params, prefixes);
    if (cfg.analysis.save_activations) {
      std::vector<int> positions;
      for (const auto& p : prefixes) positions.push_back(p.position);
      nn::save_activations(d, detail::sequence_keys(hmm, prefixes), positions, dir / "activations.bin");
    }
    return d;
  });
  const double expected_loss = nn::expected_model_loss(ds, prefixes, 1, cfg.model.context_length - 1);

  say("fitting probes");
  const ProbeRows rows = run_stage("probe", [&] {
    return make_probe_rows(ds.probe_input(cfg.probe.layer_tags), prefixes, cfg.probe.weighting);
  });
  AffineProbe probe = run_stage("probe", [&] {
    auto p = fit_affine_probe(rows);
    p.layer_tags = cfg.probe.layer_tags;
    std::filesystem::create_directories(dir / "probe");
    save_probe(p, dir / "probe" / "probe.json");
    return p;
  });
  const double mse_full = probe_mse(probe, rows);
  const double baseline = centroid_baseline_mse(rows);
  const auto cv = run_stage("probe cv", [&] {
    return cross_validate(rows, cfg.probe.cv_train_fraction, cfg.probe.cv_repeats, derive_seed(cfg.seed, "cv"),
                          cfg.probe.control_sampling);
  });
  const auto shuffled = run_stage("probe shuffle", [&] {
    return shuffle_control(rows, cfg.probe.shuffle_repeats, derive_seed(cfg.seed, "shuffle"),
                           cfg.probe.control_sampling);
  });

  say("layer sweep");
  const LayerSweep sweep = run_stage("analyze layers", [&] {
    auto s = per_layer_probe_sweep(ds, prefixes, cfg.probe.weighting);
    std::ostringstream csv;
    csv << "layer,mse\n";
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [tag, m] : s.per_layer) {
      csv << tag << ',' << format_double(m) << '\n';
      labels.push_back(tag);
      values.push_back(m);
    }
    csv << "concatenated," << format_double(s.concatenated_mse) << '\n';
    labels.emplace_back("concatenated");
    values.push_back(s.concatenated_mse);
    detail::write_text(dir / "layers.csv", csv.str());
    detail::write_text(dir / "layers.svg", svg::bar_chart(labels, values, "probe MSE by layer", "weighted MSE"));
    return s;
  });

  nlohmann::ordered_json probe_report;
  probe_report["layer_tags"] = cfg.probe.layer_tags;
  probe_report["weighting"] = to_string(cfg.probe.weighting);
  probe_report["n_rows"] = rows.size();
  probe_report["control_sampling"] = to_string(cfg.probe.control_sampling);
  probe_report["mse_full"] = mse_full;
  probe_report["baseline_mse"] = baseline;
  probe_report["mse_cv_mean"] = cv.mse_mean;
  probe_report["mse_cv_std"] = cv.mse_std;
  probe_report["cv_repeats"] = cv.repeats;
  probe_report["cv_train_fraction"] = cv.train_fraction;
  probe_report["mse_shuffle_mean"] = shuffled.mse_mean;
  probe_report["mse_shuffle_std"] = shuffled.mse_std;
  probe_report["shuffle_repeats"] = shuffled.repeats;
  probe_report["shuffle_spread_ratio_mean"] = shuffled.spread_ratio_mean;
  probe_report["shuffle_spread_ratio_std"] = shuffled.spread_ratio_std;
  {
    nlohmann::ordered_json per_layer;
    for (const auto& [tag, m] : sweep.per_layer) per_layer[tag] = m;
    probe_report["per_layer_mse"] = per_layer;
  }
  probe_report["concatenated_mse"] = sweep.concatenated_mse;
  probe_report["rank"] = probe.rank;
  probe_report["rank_deficient"] = probe.rank_deficient;
  run_stage("probe", [&] { detail::write_text(dir / "probe" / "report.json", probe_report.dump(2) + "\n"); });

  say("geometry and distances");
  const auto geom = project_geometry(probe, rows.activations, prefixes);
  const DistanceStudy dist = run_stage("analyze distances", [&] {
    std::ostringstream csv;
    csv << "sequence,position,state,weight";
    for (int i = 0; i < hmm.num_states(); ++i) csv << ",pred_" << i;
    for (int i = 0; i < hmm.num_states(); ++i) csv << ",true_" << i;
    csv << ",r,g,b\n";
    for (const auto& r : geom.rows) {
      csv << sequence_key(hmm, r.tokens) << ',' << r.position << ',' << r.state_index << ','
          << format_double(r.weight);
      for (Eigen::Index i = 0; i < r.predicted.size(); ++i) csv << ',' << format_double(r.predicted[i]);
      for (Eigen::Index i = 0; i < r.true_belief.size(); ++i) csv << ',' << format_double(r.true_belief[i]);
      for (double ch : r.rgb) csv << ',' << format_double(ch);
      csv << '\n';
    }
    detail::write_text(dir / "geometry.csv", csv.str());
    detail::write_text(dir / "simplex_truth.svg",
                       detail::projection_svg(geom, hmm, false, "ground-truth beliefs", cfg.analysis.plot_max_points));
    detail::write_text(dir / "simplex_probe.svg",
                       detail::projection_svg(geom, hmm, true, "probe projection", cfg.analysis.plot_max_points));

    const auto states = select_states(state_weights(prefixes), cfg.analysis.distance_max_states);
    const auto centroids = belief_centroids(geom, states);
    auto study = distance_study(hmm, msp, centroids, states);
    std::ostringstream dcsv;
    dcsv << "state_a,state_b,d_truth,d_repr,d_next\n";
    std::vector<double> t, n, r;
    for (const auto& p : study.pairs) {
      dcsv << p.a << ',' << p.b << ',' << format_double(p.d_truth) << ',' << format_double(p.d_repr) << ','
           << format_double(p.d_next) << '\n';
    }
    detail::write_text(dir / "distances.csv", dcsv.str());
    const auto pick = detail::plot_rows(study.pairs.size(), cfg.analysis.plot_max_points);
    for (std::size_t i : pick) {
      t.push_back(study.pairs[i].d_truth);
      n.push_back(study.pairs[i].d_next);
      r.push_back(study.pairs[i].d_repr);
    }
    detail::write_text(dir / "distances_truth.svg",
                       svg::distance_scatter(t, r, study.truth_fit, "belief distance", "representation distance",
                                             "representation vs belief distance"));
    detail::write_text(dir / "distances_next.svg",
                       svg::distance_scatter(n, r, study.next_fit, "next-token distance", "representation distance",
                                             "representation vs next-token distance"));
    return study;
  });

  std::optional<SweepResult> ck_sweep;
  if (cfg.analysis.checkpoint_sweep) {
    say("checkpoint sweep");
    ck_sweep = run_stage("sweep", [&] {
      return checkpoint_sweep_analysis(dir, hmm, prefixes, cfg.probe, cfg.analysis.plot_max_points, log);
    });
  }

  nlohmann::ordered_json s;
  s["schema_version"] = kSummarySchemaVersion;
  s["process"] = cfg.process_label();
  s["seed"] = cfg.seed;
  s["hmm"] = {{"states", hmm.num_states()}, {"vocab", hmm.vocab()}};
  s["msp"] = {{"depth", depth},
              {"dedup_tolerance", cfg.dedup_tolerance},
              {"num_states", msp.size()},
              {"degenerate_pairs", degenerate.size()},
              {"degeneracy_tolerance", cfg.analysis.degeneracy_tolerance}};
  s["dataset"] = {{"rows", prefixes.size()}, {"entropy_floor", floor}};
  {
    const auto& losses = trained.losses;
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(cfg.analysis.loss_window), losses.size());
    const double window = w == 0 ? std::nan("")
                                 : std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(w), losses.end(), 0.0) /
                                       static_cast<double>(w);
    nlohmann::ordered_json t;
    t["steps"] = cfg.train.steps;
    t["initial_loss"] = losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(losses.front());
    t["final_loss_window"] = w == 0 ? nlohmann::json(nullptr) : nlohmann::json(window);
    t["final_loss_window_size"] = w;
    t["final_expected_loss"] = expected_loss;
    t["gap_to_floor"] = expected_loss - floor;
    s["training"] = t;
  }
  s["probe"] = probe_report;
  s["probe"]["mse_over_baseline"] = mse_full / baseline;
  s["probe"]["mse_over_shuffle"] = mse_full / shuffled.mse_mean;
  s["probe"]["cv_over_full"] = cv.mse_mean / mse_full;
  {
    nlohmann::ordered_json l;
    nlohmann::ordered_json per_layer;
    for (const auto& [tag, m] : sweep.per_layer) per_layer[tag] = m;
    l["per_layer_mse"] = per_layer;
    l["concatenated_tags"] = sweep.concatenated_tags;
    l["concatenated_mse"] = sweep.concatenated_mse;
    l["best_single_mse"] = sweep.best_single();
    l["final_over_best"] = sweep.mse(nn::kFinalTag) / sweep.best_single();
    l["concatenated_below_all"] = sweep.concatenated_mse < sweep.best_single();
    l["baseline_mse"] = sweep.baseline_mse;
    s["layers"] = l;
  }
  s["distances"] = {{"states_compared", dist.states.size()},
                    {"pairs", dist.pairs.size()},
                    {"r2_truth_vs_repr", dist.r2_truth_vs_repr},
                    {"r2_next_vs_repr", dist.r2_next_vs_repr},
                    {"r2_gap", dist.r2_truth_vs_repr - dist.r2_next_vs_repr},
                    {"truth_slope", dist.truth_fit.slope},
                    {"next_slope", dist.next_fit.slope}};
  if (ck_sweep) {
    s["checkpoints"] = {{"steps", ck_sweep->steps},
                        {"mse", ck_sweep->mse},
                        {"baseline_mse", ck_sweep->baseline_mse},
                        {"spearman_mse_vs_log_step", ck_sweep->spearman_mse_vs_log_step}};
  } else {
    s["checkpoints"] = nullptr;
  }
  run_stage("summary", [&] { detail::write_text(dir / "summary.json", s.dump(2) + "\n"); });
  say("done: " + dir.string());
  return ExperimentResult{dir, s};
}

}  // namespace bsg
