// bsg: command-line driver for the belief-state geometry pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsg/bsg.hpp"

namespace fs = std::filesystem;
using namespace bsg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct ProcessOpt {
  std::string process = "mess3";
  std::string hmm_path;

  void add(CLI::App* app) {
    app->add_option("--process", process, "built-in process (mess3, rrxor, 01r)");
    app->add_option("--hmm", hmm_path, "HMM JSON file (overrides --process)");
  }

  TokenLabeledHmm load() const {
    ExperimentConfig c;
    c.process = process;
    c.hmm_path = hmm_path;
    return resolve_process(c);
  }
};

void log_line(const std::string& s) { std::cerr << "[bsg] " << s << std::endl; }

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  svg::write_file(path, j.dump(2) + "\n");
}

// Activations plus the labeled prefixes they were captured on, rebuilt from
// the process and checked against the sequence keys stored in the file.
struct ProbeInputs {
  TokenLabeledHmm hmm;
  std::vector<LabeledPrefix> prefixes;
  MixedStatePresentation msp;
  nn::ActivationDataset ds;
};

ProbeInputs load_probe_inputs(const ProcessOpt& proc, const fs::path& activations) {
  auto loaded = nn::load_activations(activations);
  ProbeInputs in{proc.load(), {}, {}, std::move(loaded.dataset)};
  int depth = 1;
  for (int p : loaded.positions) depth = std::max(depth, p + 1);
  in.msp = build_msp(in.hmm, depth);
  in.prefixes = enumerate_labeled_dataset(in.hmm, in.msp, depth);
  if (in.prefixes.size() != loaded.sequences.size()) {
    fail(ErrorCode::DimensionMismatch, "activation file rows do not match the process's labeled prefixes");
  }
  for (std::size_t i = 0; i < in.prefixes.size(); ++i) {
    if (sequence_key(in.hmm, in.prefixes[i].tokens) != loaded.sequences[i]) {
      fail(ErrorCode::DimensionMismatch, "activation row " + std::to_string(i) + " is for a different sequence");
    }
  }
  return in;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Belief-state geometry: HMMs, mixed-state presentations, a small transformer and linear probes"};
  app.require_subcommand(1);
  int workers = 1;
  app.add_option("--workers", workers, "worker threads (computation is serial; kept at 1 for determinism)")
      ->check(CLI::PositiveNumber);

  // run
  auto* run = app.add_subcommand("run", "full pipeline into one artifact directory");
  std::string run_config;
  ProcessOpt run_proc;
  std::optional<std::int64_t> run_steps;
  std::optional<int> run_repeats;
  std::optional<std::uint64_t> run_seed;
  std::string run_out;
  bool run_no_sweep = false, run_no_acts = false;
  run->add_option("--config", run_config, "experiment config JSON");
  run_proc.add(run);
  run->add_option("--steps", run_steps, "training steps");
  run->add_option("--repeats", run_repeats, "cross-validation and shuffle repeats");
  run->add_option("--seed", run_seed, "root seed");
  run->add_option("--out", run_out, "output directory (relative paths resolve under $BSG_OUTPUT_ROOT)");
  run->add_flag("--no-sweep", run_no_sweep, "skip the checkpoint sweep");
  run->add_flag("--no-activations", run_no_acts, "do not write activations.bin");

  // msp build
  auto* msp_cmd = app.add_subcommand("msp", "mixed-state presentation tools");
  msp_cmd->require_subcommand(1);
  auto* msp_build = msp_cmd->add_subcommand("build", "build an MSP and its labeled prefix dataset");
  ProcessOpt msp_proc;
  int msp_depth = 10;
  double msp_tol = kDefaultDedupTolerance;
  std::string msp_out = "msp_out";
  msp_proc.add(msp_build);
  msp_build->add_option("--depth", msp_depth, "prefix depth")->check(CLI::PositiveNumber);
  msp_build->add_option("--tol", msp_tol, "L-infinity dedup tolerance");
  msp_build->add_option("--out", msp_out, "output directory");

  // sample
  auto* sample = app.add_subcommand("sample", "sample token sequences from a process");
  ProcessOpt sample_proc;
  int sample_len = 10, sample_count = 10;
  std::uint64_t sample_seed = 0;
  std::string sample_out;
  sample_proc.add(sample);
  sample->add_option("--length", sample_len, "sequence length")->check(CLI::PositiveNumber);
  sample->add_option("--count", sample_count, "number of sequences")->check(CLI::PositiveNumber);
  sample->add_option("--seed", sample_seed, "seed");
  sample->add_option("--out", sample_out, "CSV file (stdout when omitted)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the transformer and write checkpoints");
  ProcessOpt train_proc;
  nn::TrainConfig tc;
  std::string train_out = "train_out";
  train_proc.add(train_cmd);
  train_cmd->add_option("--steps", tc.steps, "training steps");
  train_cmd->add_option("--seed", tc.seed, "seed");
  train_cmd->add_option("--lr", tc.learning_rate, "learning rate");
  train_cmd->add_option("--batch", tc.batch_size, "batch size");
  train_cmd->add_option("--out", train_out, "output directory");

  // capture
  auto* capture = app.add_subcommand("capture", "capture residual activations for every labeled prefix");
  ProcessOpt cap_proc;
  std::string cap_ckpt, cap_out = "activations.bin";
  cap_proc.add(capture);
  capture->add_option("--checkpoint", cap_ckpt, "checkpoint manifest")->required();
  capture->add_option("--out", cap_out, "activation file");

  // probe fit / cv / shuffle
  auto* probe_cmd = app.add_subcommand("probe", "affine probes on captured activations");
  probe_cmd->require_subcommand(1);
  ProcessOpt probe_proc;
  std::string probe_acts, probe_out;
  std::vector<std::string> probe_tags{nn::kFinalTag};
  std::string probe_weighting = "probability";
  int probe_repeats = 1000;
  double probe_fraction = 0.2;
  std::uint64_t probe_seed = 0;
  auto add_probe_common = [&](CLI::App* c) {
    probe_proc.add(c);
    c->add_option("--activations", probe_acts, "activation file")->required();
    c->add_option("--layer", probe_tags, "layer tag(s); several are concatenated, resid_post_all means every block");
    c->add_option("--weighting", probe_weighting, "probability or uniform");
    c->add_option("--out", probe_out, "output file")->required();
  };
  auto* probe_fit = probe_cmd->add_subcommand("fit", "fit a probe");
  add_probe_common(probe_fit);
  auto* probe_cv = probe_cmd->add_subcommand("cv", "repeated train/test splits");
  add_probe_common(probe_cv);
  probe_cv->add_option("--repeats", probe_repeats, "repeats")->check(CLI::PositiveNumber);
  probe_cv->add_option("--train-fraction", probe_fraction, "fraction of rows used to fit");
  probe_cv->add_option("--seed", probe_seed, "seed");
  auto* probe_shuffle = probe_cmd->add_subcommand("shuffle", "shuffled-label control");
  add_probe_common(probe_shuffle);
  probe_shuffle->add_option("--repeats", probe_repeats, "repeats")->check(CLI::PositiveNumber);
  probe_shuffle->add_option("--seed", probe_seed, "seed");

  // analyze distances / layers
  auto* analyze = app.add_subcommand("analyze", "geometry analyses");
  analyze->require_subcommand(1);
  ProcessOpt an_proc;
  std::string an_acts, an_out;
  std::size_t an_max_states = 1500;
  std::vector<std::string> an_tags{nn::kFinalTag};
  auto* an_dist = analyze->add_subcommand("distances", "pairwise distance study over belief-state centroids");
  an_proc.add(an_dist);
  an_dist->add_option("--activations", an_acts, "activation file")->required();
  an_dist->add_option("--max-states", an_max_states, "cap on compared states (most probable kept)");
  an_dist->add_option("--layer", an_tags, "layer tag(s) for the probe; several are concatenated, resid_post_all means every block");
  an_dist->add_option("--out", an_out, "CSV of pairs")->required();
  auto* an_layers = analyze->add_subcommand("layers", "per-layer and concatenated probe MSE");
  an_proc.add(an_layers);
  an_layers->add_option("--activations", an_acts, "activation file")->required();
  an_layers->add_option("--out", an_out, "CSV")->required();
  double degen_tol = 1e-9;
  auto* an_degen = analyze->add_subcommand("degeneracy", "MSP state pairs with identical next-token distributions");
  an_proc.add(an_degen);
  an_degen->add_option("--depth", msp_depth, "MSP depth");
  an_degen->add_option("--tol", degen_tol, "L-infinity tolerance on next-token distributions");

  // plot
  auto* plot = app.add_subcommand("plot", "simplex projection SVG of a probe's predictions");
  ProcessOpt plot_proc;
  std::string plot_acts, plot_probe, plot_out;
  bool plot_truth = false;
  plot_proc.add(plot);
  plot->add_option("--activations", plot_acts, "activation file")->required();
  plot->add_option("--probe", plot_probe, "probe manifest (fit on the spot when omitted)");
  plot->add_flag("--truth", plot_truth, "plot ground-truth beliefs instead of predictions");
  plot->add_option("--out", plot_out, "SVG file")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "probe every checkpoint of an experiment directory");
  std::string sweep_dir;
  sweep->add_option("dir", sweep_dir, "experiment directory")->required();

  // export-processes
  auto* exportp = app.add_subcommand("export-processes", "write the built-in processes as HMM JSON");
  std::string export_out = "processes";
  exportp->add_option("--out", export_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = run_config.empty() ? default_config(run_proc.process) : load_config(run_config);
      if (run_config.empty()) cfg.hmm_path = run_proc.hmm_path;
      if (run_steps) cfg.train.steps = *run_steps;
      if (run_repeats) cfg.probe.cv_repeats = cfg.probe.shuffle_repeats = *run_repeats;
      if (run_seed) cfg.seed = *run_seed;
      if (!run_out.empty()) cfg.output_dir = run_out;
      if (run_no_sweep) cfg.analysis.checkpoint_sweep = false;
      if (run_no_acts) cfg.analysis.save_activations = false;
      const auto result = run_experiment(cfg, log_line);
      std::cout << result.summary.dump(2) << "\n";
    } else if (*msp_build) {
      const auto hmm = msp_proc.load();
      const auto msp = build_msp(hmm, msp_depth, MspOptions{msp_tol});
      const auto rows = enumerate_labeled_dataset(hmm, msp, msp_depth);
      fs::create_directories(msp_out);
      save_hmm(hmm, fs::path(msp_out) / "hmm.json");
      save_msp(hmm, msp, fs::path(msp_out) / "msp.json");
      save_labeled_csv(hmm, rows, fs::path(msp_out) / "labeled_prefixes.csv");
      std::cout << "states " << msp.size() << "\nprefixes " << rows.size() << "\nentropy_floor "
                << format_double(entropy_floor(rows, 1, msp_depth - 1 > 0 ? msp_depth - 1 : 1)) << "\n";
    } else if (*sample) {
      const auto hmm = sample_proc.load();
      const auto pi = stationary_distribution(hmm);
      std::ofstream file;
      if (!sample_out.empty()) {
        file.open(sample_out);
        if (!file) fail(ErrorCode::Io, "cannot write " + sample_out);
      }
      std::ostream& out = sample_out.empty() ? std::cout : file;
      out << "index,tokens,states\n";
      for (int i = 0; i < sample_count; ++i) {
        const auto path = sample_sequence(hmm, sample_len,
                                          derive_seed(sample_seed, "sample", static_cast<std::uint64_t>(i)), pi);
        out << i << ',' << sequence_key(hmm, path.tokens) << ',';
        for (std::size_t k = 0; k < path.states.size(); ++k) {
          out << (k ? " " : "") << hmm.state_names()[static_cast<std::size_t>(path.states[k])];
        }
        out << '\n';
      }
    } else if (*train_cmd) {
      const auto hmm = train_proc.load();
      nn::ModelConfig mc;
      mc.vocab_size = hmm.vocab_size();
      const fs::path dir(train_out);
      fs::remove_all(dir / "checkpoints");
      auto r = nn::train(mc, tc, hmm, [&](std::int64_t step, const nn::ModelParams& p, double loss) {
        nn::save_checkpoint(dir / "checkpoints", p, step, tc.seed, loss);
        log_line("checkpoint " + std::to_string(step));
      });
      std::ostringstream csv;
      csv << "step,loss\n";
      for (std::size_t i = 0; i < r.losses.size(); ++i) csv << i + 1 << ',' << format_double(r.losses[i]) << '\n';
      svg::write_file(dir / "loss_curve.csv", csv.str());
    } else if (*capture) {
      const auto hmm = cap_proc.load();
      const auto ck = nn::load_checkpoint(cap_ckpt);
      const int depth = ck.params.config().context_length;
      const auto msp = build_msp(hmm, depth);
      const auto rows = enumerate_labeled_dataset(hmm, msp, depth);
      const auto ds = nn::capture_activations(ck.params, rows);
      std::vector<std::string> keys;
      std::vector<int> positions;
      for (const auto& r : rows) {
        keys.push_back(sequence_key(hmm, r.tokens));
        positions.push_back(r.position);
      }
      nn::save_activations(ds, keys, positions, cap_out);
      std::cout << "rows " << ds.rows() << "\n";
    } else if (*probe_cmd) {
      const auto in = load_probe_inputs(probe_proc, probe_acts);
      const ProbeRows rows =
          make_probe_rows(in.ds.probe_input(probe_tags), in.prefixes, weighting_from_string(probe_weighting));
      nlohmann::ordered_json report;
      report["layer_tags"] = probe_tags;
      report["weighting"] = probe_weighting;
      report["n_rows"] = rows.size();
      if (*probe_fit) {
        AffineProbe p = fit_affine_probe(rows);
        p.layer_tags = probe_tags;
        if (fs::path(probe_out).has_parent_path()) fs::create_directories(fs::path(probe_out).parent_path());
        save_probe(p, probe_out);
        std::cout << "mse_full " << format_double(p.fit_mse) << "\nbaseline_mse "
                  << format_double(centroid_baseline_mse(rows)) << "\n";
      } else if (*probe_cv) {
        const auto cv = cross_validate(rows, probe_fraction, probe_repeats, probe_seed);
        report["mse_full"] = fit_affine_probe(rows).fit_mse;
        report["mse_cv_mean"] = cv.mse_mean;
        report["mse_cv_std"] = cv.mse_std;
        report["cv_repeats"] = cv.repeats;
        report["cv_train_fraction"] = cv.train_fraction;
        write_json(probe_out, report);
      } else {
        const auto sh = shuffle_control(rows, probe_repeats, probe_seed);
        report["mse_full"] = fit_affine_probe(rows).fit_mse;
        report["mse_shuffle_mean"] = sh.mse_mean;
        report["mse_shuffle_std"] = sh.mse_std;
        report["shuffle_repeats"] = sh.repeats;
        report["shuffle_spread_ratio_mean"] = sh.spread_ratio_mean;
        report["shuffle_spread_ratio_std"] = sh.spread_ratio_std;
        write_json(probe_out, report);
      }
    } else if (*an_degen) {
      const auto hmm = an_proc.load();
      const auto msp = build_msp(hmm, msp_depth);
      std::cout << "state_a,state_b\n";
      for (const auto& [a, b] : degeneracy_report(hmm, msp, degen_tol)) std::cout << a << ',' << b << '\n';
    } else if (*analyze) {
      const auto in = load_probe_inputs(an_proc, an_acts);
      if (*an_dist) {
        const ProbeRows rows = make_probe_rows(in.ds.probe_input(an_tags), in.prefixes);
        const auto probe = fit_affine_probe(rows);
        const auto geom = project_geometry(probe, rows.activations, in.prefixes);
        const auto states = select_states(state_weights(in.prefixes), an_max_states);
        const auto study = distance_study(in.hmm, in.msp, belief_centroids(geom, states), states);
        std::ostringstream csv;
        csv << "state_a,state_b,d_truth,d_repr,d_next\n";
        for (const auto& p : study.pairs) {
          csv << p.a << ',' << p.b << ',' << format_double(p.d_truth) << ',' << format_double(p.d_repr) << ','
              << format_double(p.d_next) << '\n';
        }
        svg::write_file(an_out, csv.str());
        std::cout << "r2_truth_vs_repr " << format_double(study.r2_truth_vs_repr) << "\nr2_next_vs_repr "
                  << format_double(study.r2_next_vs_repr) << "\n";
      } else {
        const auto sweep_result = per_layer_probe_sweep(in.ds, in.prefixes);
        std::ostringstream csv;
        csv << "layer,mse\n";
        for (const auto& [tag, m] : sweep_result.per_layer) csv << tag << ',' << format_double(m) << '\n';
        csv << "concatenated," << format_double(sweep_result.concatenated_mse) << '\n';
        svg::write_file(an_out, csv.str());
        std::cout << csv.str();
      }
    } else if (*plot) {
      const auto in = load_probe_inputs(plot_proc, plot_acts);
      AffineProbe probe;
      std::vector<std::string> tags{nn::kFinalTag};
      if (!plot_probe.empty()) {
        probe = load_probe(plot_probe);
        if (!probe.layer_tags.empty()) tags = probe.layer_tags;
      }
      const ProbeRows rows = make_probe_rows(in.ds.probe_input(tags), in.prefixes);
      if (plot_probe.empty()) probe = fit_affine_probe(rows);
      const auto geom = project_geometry(probe, rows.activations, in.prefixes);
      std::vector<svg::SimplexPoint> pts;
      const std::size_t stride = std::max<std::size_t>(1, geom.rows.size() / 20000);
      for (std::size_t i = 0; i < geom.rows.size(); i += stride) {
        const auto& r = geom.rows[i];
        pts.push_back({plot_truth ? r.true_belief : r.predicted, r.rgb});
      }
      svg::write_file(plot_out, svg::simplex_scatter(pts, in.hmm.num_states(),
                                                     plot_truth ? "ground-truth beliefs" : "probe projection",
                                                     in.hmm.state_names()));
    } else if (*sweep) {
      if (!fs::exists(fs::path(sweep_dir) / "config.json")) {
        fail(ErrorCode::Config, sweep_dir + " is not an experiment directory (no config.json)");
      }
      const auto r = checkpoint_sweep_analysis(sweep_dir, log_line);
      std::cout << "spearman_mse_vs_log_step " << format_double(r.spearman_mse_vs_log_step) << "\n";
    } else if (*exportp) {
      fs::create_directories(export_out);
      for (const auto& name : process_names()) save_hmm(process_by_name(name), fs::path(export_out) / (name + ".json"));
    }
  } catch (const Error& e) {
    std::cerr << "bsg: " << e.what() << "\n";
    return e.code() == ErrorCode::Config ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "bsg: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
