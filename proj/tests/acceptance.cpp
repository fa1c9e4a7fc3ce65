// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance <work_dir> [criteria...]
//
// Training runs go to <work_dir>/<name>. With BSG_ACCEPTANCE_REUSE=1 a run
// whose config.json matches (output_dir aside) and has a summary.json is reused.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bsg/bsg.hpp"
#include "support/gradcheck.hpp"

using namespace bsg;
namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

// ---- 1 -------------------------------------------------------------------

Outcome msp_zero_one_random() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto hmm = zero_one_random();
  const auto msp = build_msp(hmm, 10);
  // Hand derivation: pi uniform; after 0, 1, 00, 01, 10, ... beliefs below.
  const std::vector<std::vector<double>> derived{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 2.0 / 3, 0.0},
                                                 {1.0 / 3, 0.0, 2.0 / 3},     {0.5, 0.5, 0.0},
                                                 {1.0, 0.0, 0.0},             {0.0, 1.0, 0.0},
                                                 {0.0, 0.0, 1.0}};
  std::set<std::size_t> matched;
  for (const auto& d : derived) {
    for (std::size_t s = 0; s < msp.size(); ++s) {
      double err = 0.0;
      for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(msp.states[s].probs()[i] - d[static_cast<std::size_t>(i)]));
      if (err <= 1e-8) matched.insert(s);
    }
  }
  const auto pi = stationary_distribution(hmm);
  const auto n_pi = next_token_distribution(hmm, pi);
  const auto n10 = next_token_distribution(hmm, belief_for_sequence(hmm, {1, 0}));
  const auto n01 = next_token_distribution(hmm, belief_for_sequence(hmm, {0, 1}));
  const double next_gap = std::max({(n_pi - n10).cwiseAbs().maxCoeff(), (n_pi - n01).cwiseAbs().maxCoeff(),
                                    (n10 - n01).cwiseAbs().maxCoeff()});
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = msp.size() == 7 && matched.size() == 7 && next_gap <= 1e-12 && secs < 1.0;
  o.detail = std::to_string(msp.size()) + " states, " + std::to_string(matched.size()) +
             "/7 match derived beliefs, next-token gap " + fmt(next_gap, 3) + ", " + fmt(secs, 3) + " s";
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome msp_rrxor() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = build_msp(rrxor(), 10, MspOptions{1e-8}).size();
  const double secs = seconds_since(t0);
  note("rrxor MSP sensitivity (rows depth, cols dedup tolerance 1e-6 / 1e-8 / 1e-10):");
  for (int depth : {4, 6, 8, 10, 12}) {
    std::string line = "  depth " + std::to_string(depth) + ":";
    for (double tol : {1e-6, 1e-8, 1e-10}) line += " " + std::to_string(build_msp(rrxor(), depth, MspOptions{tol}).size());
    note(line);
  }
  return {n == 36 && secs < 10.0, std::to_string(n) + " states at depth 10, " + fmt(secs, 3) + " s"};
}

// ---- 3 -------------------------------------------------------------------

Outcome simplex_invariants() {
  const std::vector<TokenLabeledHmm> procs{mess3(), rrxor(), zero_one_random()};
  SplitMix64 rng(derive_seed(7, "acceptance-simplex"));
  double worst_neg = 0.0, worst_sum = 0.0;
  int updates = 0;
  for (int walk = 0; updates < 10'000; ++walk) {
    const auto& hmm = procs[static_cast<std::size_t>(walk) % procs.size()];
    Eigen::VectorXd w(hmm.num_states());
    for (int i = 0; i < w.size(); ++i) w[i] = -std::log(1.0 - rng.uniform());
    BeliefState b = BeliefState::normalize(w);
    for (int step = 0; step < 50 && updates < 10'000; ++step) {
      const Eigen::VectorXd next = next_token_distribution(hmm, b);
      std::vector<int> allowed;
      for (int x = 0; x < next.size(); ++x) {
        if (next[x] > 0.0) allowed.push_back(x);
      }
      b = update_belief(hmm, b, allowed[rng.below(allowed.size())]);
      ++updates;
      worst_neg = std::max(worst_neg, -b.probs().minCoeff());
      worst_sum = std::max(worst_sum, std::abs(b.probs().sum() - 1.0));
    }
  }
  double worst_out = 0.0;
  std::size_t states = 0;
  for (const auto& hmm : procs) {
    const auto msp = build_msp(hmm, 10);
    states += msp.size();
    for (std::size_t s = 0; s < msp.size(); ++s) {
      double total = 0.0;
      for (const auto& e : msp.edges[s]) total += e.probability;
      worst_out = std::max(worst_out, std::abs(total - 1.0));
    }
  }
  Outcome o;
  o.pass = worst_neg <= 1e-12 && worst_sum <= 1e-12 && worst_out <= 1e-10;
  o.detail = std::to_string(updates) + " updates: worst negative " + fmt(worst_neg, 3) + ", worst |sum-1| " +
             fmt(worst_sum, 3) + "; " + std::to_string(states) + " MSP states: worst |out-1| " + fmt(worst_out, 3);
  return o;
}

// ---- 4 -------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  nn::ModelConfig cfg;  // full-size model
  auto p = nn::init_model(cfg, 3);
  SplitMix64 rng(derive_seed(3, "acceptance-jitter"));
  for (double& v : p.data()) v += 0.05 * rng.normal();
  const auto hmm = mess3();
  const auto batch = nn::sample_batch(hmm, stationary_distribution(hmm), 4, cfg.context_length, 5);
  const auto checks = check::gradient_check(p, batch, 128, 17);
  bool ok = true;
  std::size_t min_checked = SIZE_MAX, refined = 0;
  double worst = 0.0;
  for (const auto& c : checks) {
    note(std::string(nn::to_string(c.kind)) + ": " + std::to_string(c.checked) + " params, worst rel " +
         fmt(c.worst_rel, 3) + (c.refined ? ", h refined for " + std::to_string(c.refined) : ""));
    ok = ok && c.checked >= 100 && c.worst_rel < 1e-5;
    min_checked = std::min(min_checked, c.checked);
    refined += c.refined;
    worst = std::max(worst, c.worst_rel);
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, std::to_string(checks.size()) + " kinds, >= " + std::to_string(min_checked) +
                                 " params each, worst rel " + fmt(worst, 3) + ", " + std::to_string(refined) +
                                 " kink-crossing params re-checked at smaller h, " + fmt(secs, 3) + " s"};
}

// ---- training runs -------------------------------------------------------

Json run_or_reuse(const std::string& process, const fs::path& dir) {
  ExperimentConfig cfg = default_config(process);
  cfg.output_dir = dir.string();
  cfg.model.vocab_size = process_by_name(process).vocab_size();
  cfg.train.seed = cfg.seed;
  const char* reuse = std::getenv("BSG_ACCEPTANCE_REUSE");
  // output_dir is left out so the same runs can be found from any working directory
  auto comparable = [](Json j) {
    j.erase("output_dir");
    return j.dump();
  };
  if (reuse != nullptr && std::string(reuse) == "1" && fs::exists(dir / "summary.json") &&
      fs::exists(dir / "config.json") &&
      comparable(Json::parse(slurp(dir / "config.json"))) == comparable(Json::parse(config_to_json(cfg).dump()))) {
    note("reusing " + dir.string());
    return Json::parse(slurp(dir / "summary.json"));
  }
  const auto t0 = std::chrono::steady_clock::now();
  note("running " + process + " (" + std::to_string(cfg.train.steps) + " steps) into " + dir.string());
  auto r = run_experiment(cfg);
  note(process + " finished in " + fmt(seconds_since(t0), 4) + " s");
  return Json::parse(r.summary.dump());
}

Outcome training_efficacy(const Json& m) {
  const double floor = m["dataset"]["entropy_floor"];
  const double expected = m["training"]["final_expected_loss"];
  const double window = m["training"]["final_loss_window"];
  note("final training-loss window (" + m["training"]["final_loss_window_size"].dump() +
       " steps): " + fmt(window) + ", gap " + fmt(window - floor));
  return {expected - floor < 0.05, "final expected loss " + fmt(expected) + ", floor " + fmt(floor) + ", gap " +
                                       fmt(expected - floor, 4)};
}

Outcome main_result(const Json& m) {
  const auto& p = m["probe"];
  const double full = p["mse_full"], base = p["baseline_mse"], shuf = p["mse_shuffle_mean"], cv = p["mse_cv_mean"];
  note("shuffle spread ratio " + fmt(p["shuffle_spread_ratio_mean"].get<double>(), 4) + ", shuffle/baseline " +
       fmt(shuf / base, 4));
  return {full < 0.25 * base && full < 0.1 * shuf && cv <= 2.0 * full,
          "mse " + fmt(full, 4) + ", /baseline " + fmt(full / base, 4) + ", /shuffle " + fmt(full / shuf, 4) +
              ", cv/full " + fmt(cv / full, 4)};
}

Outcome degeneracy(const Json& r, const Json& m) {
  const double gap = r["distances"]["r2_gap"];
  const double mt = m["distances"]["r2_truth_vs_repr"], mn = m["distances"]["r2_next_vs_repr"];
  return {gap >= 0.2 && mt >= 0.7 && mn >= 0.7,
          "rrxor R2 truth " + fmt(r["distances"]["r2_truth_vs_repr"].get<double>(), 4) + " next " +
              fmt(r["distances"]["r2_next_vs_repr"].get<double>(), 4) + " gap " + fmt(gap, 4) + "; mess3 R2 truth " +
              fmt(mt, 4) + " next " + fmt(mn, 4)};
}

Outcome layers(const Json& r, const Json& m) {
  const double concat = r["layers"]["concatenated_mse"], best = r["layers"]["best_single_mse"];
  const double ratio = m["layers"]["final_over_best"];
  return {concat < best && ratio <= 2.0, "rrxor concatenated " + fmt(concat, 4) + " vs best layer " + fmt(best, 4) +
                                             "; mess3 final/best " + fmt(ratio, 4)};
}

Outcome emergence(const Json& m) {
  const auto& c = m["checkpoints"];
  if (c.is_null()) return {false, "no checkpoint sweep"};
  const std::vector<double> mse = c["mse"];
  const std::vector<double> base = c["baseline_mse"];
  const double rho = c["spearman_mse_vs_log_step"];
  note("step-0 mse/baseline " + fmt(mse.front() / base.front(), 4));
  return {mse.back() < mse.front() && rho <= -0.8, std::to_string(mse.size()) + " checkpoints, mse " +
                                                      fmt(mse.front(), 4) + " -> " + fmt(mse.back(), 4) +
                                                      ", spearman " + fmt(rho, 4)};
}

Outcome determinism(const fs::path& dir) {
  ExperimentConfig c = default_config("zero_one_random");
  c.seed = 11;
  c.model.context_length = 6;
  c.model.d_model = 16;
  c.model.n_layers = 2;
  c.model.d_head = 4;
  c.model.d_mlp = 32;
  c.train.steps = 200;
  c.train.batch_size = 16;
  c.probe.cv_repeats = 20;
  c.probe.shuffle_repeats = 20;
  c.output_dir = dir.string();
  fs::remove_all(dir);
  run_experiment(c);
  const std::string first = slurp(dir / "summary.json");
  run_experiment(c);
  const std::string second = slurp(dir / "summary.json");
  return {!first.empty() && first == second,
          std::to_string(first.size()) + "-byte summary, reruns " + (first == second ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <work_dir> [criteria...]\n";
    return 2;
  }
  const fs::path work = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int k) { return only.empty() || only.contains(k); };
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int k, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << k << " " << name << ": " << o.detail << std::endl;
  };

  report(1, "msp_01r", msp_zero_one_random);
  report(2, "msp_rrxor", msp_rrxor);
  report(3, "simplex", simplex_invariants);
  report(4, "gradients", gradient_fidelity);

  Json mess, rr;
  auto need_mess = [&] {
    if (mess.is_null()) mess = run_or_reuse("mess3", work / "mess3");
    return mess;
  };
  auto need_rr = [&] {
    if (rr.is_null()) rr = run_or_reuse("rrxor", work / "rrxor");
    return rr;
  };
  report(5, "training", [&] { return training_efficacy(need_mess()); });
  report(6, "probe", [&] { return main_result(need_mess()); });
  report(7, "degeneracy", [&] { return degeneracy(need_rr(), need_mess()); });
  report(8, "layers", [&] { return layers(need_rr(), need_mess()); });
  report(9, "emergence", [&] { return emergence(need_mess()); });
  report(10, "determinism", [&] { return determinism(work / "determinism"); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
