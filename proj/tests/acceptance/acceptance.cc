// Acceptance suite: one PASS/FAIL line per criterion, driven by the shipped
// presets. Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/test_util.h"
#include "fllab/experiments.h"
#include "fllab/metrics.h"
#include "fllab/privacy.h"

namespace fs = std::filesystem;
using namespace fllab;

namespace {

const fs::path kPresets = FLLAB_PRESETS_DIR;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string num(double v) { return format_value(v); }

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

ExperimentConfig preset(const std::string& name, const std::vector<std::string>& overrides = {}) {
  return load_experiment(kPresets / (name + ".cfg"), overrides);
}

std::vector<double> trial_mses(const std::vector<LeakTrial>& trials) {
  std::vector<double> out;
  for (const auto& t : trials) out.push_back(std::isfinite(t.mse) ? t.mse : kInf);
  return out;
}

const EvalReport& final_eval(const RunLog& log) {
  return log.rounds.empty() || !log.rounds.back().eval ? log.initial_eval : *log.rounds.back().eval;
}

void info(const std::string& line) { std::cout << "  info: " << line << "\n"; }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<Verdict()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << v.detail << " ["
            << num(secs) << "s]" << std::endl;
}

// Central differences of the loss over every parameter.
double fd_param_error(const ModelSpec& spec, const ParamVector& p, const std::vector<Example>& batch) {
  const GradVector g = loss_and_param_grad(spec, p, batch).grad;
  double worst = 0.0;
  const double h = 1e-6;
  ParamVector q = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    q[i] = p[i] + h;
    const double up = loss_and_param_grad(spec, q, batch).loss;
    q[i] = p[i] - h;
    const double down = loss_and_param_grad(spec, q, batch).loss;
    q[i] = p[i];
    worst = std::max(worst, testing::rel_error(g[i], (up - down) / (2 * h)));
  }
  return worst;
}

double fd_input_error(const ModelSpec& spec, const ParamVector& p, const Example& ex,
                      const GradVector& target) {
  const GradMatch m = grad_match_input_grad(spec, p, ex.x, ex.label, target);
  double worst = 0.0;
  const double h = 1e-5;
  Tensor x = ex.x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = ex.x[i] + h;
    const double up = grad_match_input_grad(spec, p, x, ex.label, target).distance;
    x[i] = ex.x[i] - h;
    const double down = grad_match_input_grad(spec, p, x, ex.label, target).distance;
    x[i] = ex.x[i];
    worst = std::max(worst, testing::rel_error(m.dx[0][i], (up - down) / (2 * h)));
  }
  return worst;
}

Verdict autodiff() {
  Rng rng(2024);
  double param_worst = 0.0, input_worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng, 1.5);
    param_worst = std::max(param_worst, fd_param_error(spec, p, testing::random_batch(spec, 3, rng)));
  }
  for (int i = 0; i < 50; ++i) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng, 1.5);
    const Example ex = testing::random_batch(spec, 1, rng).front();
    const Example other = testing::random_batch(spec, 1, rng).front();
    const GradVector target = loss_and_param_grad(spec, p, std::span<const Example>(&other, 1)).grad;
    input_worst = std::max(input_worst, fd_input_error(spec, p, ex, target));
  }
  return {param_worst < 1e-5 && input_worst < 1e-4,
          "parameter gradient max rel error " + num(param_worst) +
              " over 100 models, double-backprop max rel error " + num(input_worst) +
              " over 50 instances"};
}

Verdict closed_form() {
  ModelSpec spec({8, 8}, {}, 10);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParamVector p = init_params(spec, rng);
    const Example ex{testing::random_tensor({8, 8}, rng), seed % 10};
    TargetGradient t{AttackSurface::kClientSgd,
                     loss_and_param_grad(spec, p, std::span<const Example>(&ex, 1)).grad, 0, 0};
    const LayerSegment& head = t.grad.layout().head();
    const std::size_t r = infer_label(t, spec);
    Tensor closed({8, 8});
    for (std::size_t j = 0; j < closed.size(); ++j) {
      closed[j] = t.grad[head.weight_offset() + r * head.cols + j] / t.grad[head.bias_offset() + r];
    }
    AttackConfig cfg;
    cfg.optimizer = AttackOptimizer::kAdam;
    cfg.lr = 0.01;
    cfg.max_iters = 5000;
    cfg.loss_threshold = 1e-18;
    cfg.seed = seed;
    const ReconResult rec = reconstruct(spec, p, t, cfg);
    worst = std::max(worst, mse(rec.x_rec(), closed));
  }
  return {worst < 1e-6, "max MSE vs analytic weight/bias-gradient solution " + num(worst) +
                            " over 10 single-layer instances"};
}

Verdict undefended() {
  const ExperimentConfig e = preset("alg1");
  const auto trials = run_leakage(e);
  std::size_t good = 0;
  for (const auto& t : trials) good += t.mse < 0.05;
  const double med = median(trial_mses(trials));

  Rng rng(7);
  std::size_t labels = 0;
  const std::size_t instances = 1000;
  for (std::size_t i = 0; i < instances; ++i) {
    ModelSpec spec({8, 8}, {{16, Activation::kSigmoid}}, 10);
    ParamVector p = init_params(spec, rng, 1.0 + static_cast<double>(i % 4));
    const Example ex = testing::random_batch(spec, 1, rng).front();
    TargetGradient t{AttackSurface::kClientSgd,
                     loss_and_param_grad(spec, p, std::span<const Example>(&ex, 1)).grad, 0, 0};
    labels += infer_label(t, spec) == ex.label;
  }
  return {good >= 9 && trials.size() == 10 && labels == instances,
          std::to_string(good) + "/" + std::to_string(trials.size()) +
              " reconstructions below MSE 0.05 (median " + num(med) + "), labels " +
              std::to_string(labels) + "/" + std::to_string(instances)};
}

double iterations_to_success(const LeakTrial& t) {
  if (!t.result.converged_at || !(t.mse < 1e-3)) return kInf;
  return static_cast<double>(*t.result.converged_at);
}

Verdict init_ordering() {
  std::vector<double> med(2);
  const std::vector<std::string> inits = {"random", "patterned4"};
  std::size_t targets = 0;
  for (std::size_t k = 0; k < inits.size(); ++k) {
    const auto trials = run_leakage(preset("fig3", {"attack.init=" + inits[k]}));
    targets = trials.size();
    std::vector<double> its;
    std::size_t ok = 0;
    for (const auto& t : trials) {
      its.push_back(iterations_to_success(t));
      ok += std::isfinite(its.back());
    }
    med[k] = median(its);
    info(inits[k] + ": median iterations-to-success " + num(med[k]) + ", successes " +
         std::to_string(ok) + "/" + std::to_string(trials.size()));
  }
  return {targets >= 20 && med[1] <= med[0],
          "median iterations 1/4-pattern " + num(med[1]) + " vs random " + num(med[0]) + " over " +
              std::to_string(targets) + " targets"};
}

Verdict timing() {
  const std::vector<std::size_t> iters = {1, 3, 5, 9};
  std::vector<double> meds;
  std::size_t seeds = 0;
  for (std::size_t L : iters) {
    const auto trials = run_leakage(preset("fig5", {"attack.local_iters=" + std::to_string(L)}));
    seeds = trials.size();
    meds.push_back(median(trial_mses(trials)));
  }
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < meds.size(); ++i) inversions += meds[i] < meds[i - 1];
  std::string detail = "median MSE";
  for (std::size_t i = 0; i < iters.size(); ++i) {
    detail += " L=" + std::to_string(iters[i]) + ":" + num(meds[i]);
  }
  return {seeds >= 10 && inversions <= 1,
          detail + ", inversions " + std::to_string(inversions) + ", " + std::to_string(seeds) +
              " seeds per point"};
}

struct AttackStats {
  double median_mse = 0.0;
  double min_mse = 0.0;
};

AttackStats attack_stats(const std::string& name, const std::string& key, const std::string& value) {
  const auto mses = trial_mses(run_leakage(preset(name, {key + "=" + value})));
  return {median(mses), *std::min_element(mses.begin(), mses.end())};
}

double final_accuracy(const ExperimentConfig& e) {
  const Workbench wb = prepare_data(e);
  return final_eval(run_training(e, wb).log).accuracy;
}

Verdict defense_thresholds() {
  const AttackStats c01 = attack_stats("fig6", "privacy.compression_ratio", "0.1");
  const AttackStats c09 = attack_stats("fig6", "privacy.compression_ratio", "0.9");
  const AttackStats g001 = attack_stats("fig6_gaussian", "privacy.gaussian_variance", "0.001");
  const AttackStats g01 = attack_stats("fig6_gaussian", "privacy.gaussian_variance", "0.01");
  info("attack median MSE: compression 0.1 " + num(c01.median_mse) + ", compression 0.9 " +
       num(c09.median_mse) + " (min " + num(c09.min_mse) + "), gaussian 0.001 " +
       num(g001.median_mse) + " (min " + num(g001.min_mse) + "), gaussian 0.01 " +
       num(g01.median_mse) + " (min " + num(g01.min_mse) + ")");

  const double acc_c01 = final_accuracy(preset("fig6_train", {"privacy.compression_ratio=0.1"}));
  const double acc_c09 = final_accuracy(preset("fig6_train", {"privacy.compression_ratio=0.9"}));
  const double acc_g001 = final_accuracy(
      preset("fig6_train", {"privacy.kind=gaussian", "privacy.gaussian_variance=0.001"}));
  const double acc_g01 = final_accuracy(
      preset("fig6_train", {"privacy.kind=gaussian", "privacy.gaussian_variance=0.01"}));
  info("final accuracy: compression 0.1 " + num(acc_c01) + " vs 0.9 " + num(acc_c09) +
       ", gaussian 0.001 " + num(acc_g001) + " vs 0.01 " + num(acc_g01));

  const bool attack_side = c09.median_mse > 0.4 && g001.median_mse > 0.4 &&
                           g01.median_mse > 0.4 && c01.median_mse < 0.4;
  const bool cost_side = acc_c09 < acc_c01 && acc_g01 < acc_g001;
  return {attack_side && cost_side,
          std::string("attack ") + (attack_side ? "ok" : "violated") + ", accuracy cost " +
              (cost_side ? "ok" : "violated")};
}

Verdict dynamic_dp() {
  const auto trials = run_leakage(preset("table1_leak"));
  std::size_t failed_attacks = 0, noisy_enough = 0, diverged = 0;
  double min_mse = kInf, min_zeta = kInf;
  for (const auto& t : trials) {
    failed_attacks += t.mse > 0.4;
    diverged += !std::isfinite(t.mse);
    const double zeta0 = t.sensitivity * t.sigma;
    noisy_enough += zeta0 >= 5.0;
    min_mse = std::min(min_mse, t.mse);
    min_zeta = std::min(min_zeta, zeta0);
  }
  info("leak trials: min MSE " + num(min_mse) + ", non-finite " + std::to_string(diverged) +
       ", min S*sigma0 " + num(min_zeta));

  const double dyn = final_accuracy(preset("table1"));
  const double fixed = final_accuracy(preset("table1", {"privacy.kind=fixed_dp"}));
  const bool leak_ok = failed_attacks == trials.size() && noisy_enough == trials.size();
  return {leak_ok && dyn >= fixed,
          std::to_string(failed_attacks) + "/" + std::to_string(trials.size()) +
              " attacks above MSE 0.4; final accuracy dynamic " + num(dyn) + " vs fixed " +
              num(fixed)};
}

struct ScheduleRun {
  RunLog log;
  double clip = 0.0;
};

ScheduleRun schedule_run() {
  const ExperimentConfig e = preset("fig7", {"privacy.decay=exponential"});
  const Workbench wb = prepare_data(e);
  return {run_training(e, wb).log, e.privacy.clip};
}

Verdict sensitivity_schedule(const ScheduleRun& run) {
  Rng rng(31);
  bool s_ok = true;
  for (int i = 0; i < 500; ++i) {
    ModelSpec spec = testing::random_spec(rng);
    ParamVector p = init_params(spec, rng, 3.0);
    const double c = std::uniform_real_distribution<double>(0.01, 2.0)(rng);
    auto per = per_example_grads(spec, p, testing::random_batch(spec, 4, rng));
    for (auto& g : per) g = clip(g, c);
    s_ok = s_ok && l2max_sensitivity(per, c).value <= c;
  }
  for (const RoundLog& rl : run.log.rounds) s_ok = s_ok && rl.sensitivity <= run.clip;

  NoisePolicy p;
  p.kind = NoiseKind::kDynamicDp;
  p.sigma0 = 10;
  p.sigma_final = 3;
  bool bounds = true;
  for (DecayKind d : {DecayKind::kLinear, DecayKind::kStaircase, DecayKind::kExponential,
                      DecayKind::kCyclic}) {
    p.decay = d;
    bounds = bounds && noise_scale_at(p, 0, 100) == 10.0;
    if (d == DecayKind::kLinear || d == DecayKind::kExponential) {
      bounds = bounds && std::abs(noise_scale_at(p, 100, 100) - 3.0) <= 1e-12;
    }
  }
  p.decay = DecayKind::kExponential;
  const double mid_err = std::abs(noise_scale_at(p, 50, 100) - std::sqrt(30.0));

  const auto& rounds = run.log.rounds;
  const std::size_t q = rounds.size() / 4;
  std::vector<double> first, last;
  for (std::size_t i = 0; i < q; ++i) {
    first.push_back(rounds[i].zeta);
    last.push_back(rounds[rounds.size() - q + i].zeta);
  }
  const double zf = mean(first), zl = mean(last);
  return {s_ok && bounds && mid_err <= 1e-12 && q > 0 && zl < zf,
          std::string("S<=C ") + (s_ok ? "holds" : "violated") + ", boundaries " +
              (bounds ? "exact" : "wrong") + ", midpoint error " + num(mid_err) +
              ", zeta first quartile " + num(zf) + " last quartile " + num(zl)};
}

Verdict accountant(const ScheduleRun& run) {
  const double single = PrivacyLedger::step_divergence(8, 6);
  const bool single_ok = std::abs(single - 8.0 / 72.0) <= 1e-15;

  PrivacyLedger one, many;
  one.step(6);
  for (int i = 0; i < 100; ++i) many.step(6);
  double additive_err = 0.0;
  for (std::size_t i = 0; i < one.orders().size(); ++i) {
    additive_err = std::max(additive_err, std::abs(many.accumulated()[i] - 100 * one.accumulated()[i]) /
                                              many.accumulated()[i]);
  }
  // Independent grid minimization over the same orders, recomputed from the
  // recorded sigma history of the run.
  PrivacyLedger replay;
  double grid_err = 0.0;
  std::vector<double> acc(PrivacyLedger::default_orders().size(), 0.0);
  for (const RoundLog& rl : run.log.rounds) {
    if (!(rl.sigma > 0.0)) continue;
    replay.step(rl.sigma);
    const auto orders = PrivacyLedger::default_orders();
    double best = kInf;
    for (std::size_t i = 0; i < orders.size(); ++i) {
      acc[i] += orders[i] / (2.0 * rl.sigma * rl.sigma);
      best = std::min(best, acc[i] + std::log(1e5) / (orders[i] - 1.0));
    }
    grid_err = std::max(grid_err, std::abs(best - rl.epsilon));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < run.log.rounds.size(); ++i) {
    monotone = monotone && run.log.rounds[i].epsilon >= run.log.rounds[i - 1].epsilon;
  }
  const double eps100 = many.epsilon();
  info("sigma = 6 for 100 rounds: epsilon " + num(eps100) + " (order-8 bound 12.756)");
  return {single_ok && additive_err <= 1e-12 && grid_err <= 1e-9 && monotone,
          "single step " + num(single) + ", composition rel error " + num(additive_err) +
              ", brute-force grid error " + num(grid_err) + ", epsilon " +
              (monotone ? "non-decreasing" : "decreasing somewhere") + " over " +
              std::to_string(run.log.rounds.size()) + " rounds (final " +
              num(run.log.rounds.empty() ? 0.0 : run.log.rounds.back().epsilon) + ")"};
}

struct PoisonRuns {
  std::vector<RunLog> benign, late, early;
};

PoisonRuns poison_runs() {
  PoisonRuns r;
  for (int seed = 1; seed <= 5; ++seed) {
    const std::string s = "seed=" + std::to_string(seed);
    for (auto [variant, out] : {std::pair{"none", &r.benign}, std::pair{"late", &r.late},
                                std::pair{"early", &r.early}}) {
      std::vector<std::string> o = {s, "poison.availability=0.9"};
      if (std::string(variant) == "none") {
        o.push_back("poison.kind=none");
      } else {
        o.push_back(std::string("poison.window=") + variant);
      }
      const ExperimentConfig e = preset("fig9", o);
      const Workbench wb = prepare_data(e);
      out->push_back(run_training(e, wb).log);
    }
  }
  return r;
}

Verdict poisoning_effect(const PoisonRuns& r) {
  std::vector<double> bv, br, lv, lr, ev;
  std::size_t recovered = 0;
  for (std::size_t i = 0; i < r.benign.size(); ++i) {
    bv.push_back(final_eval(r.benign[i]).victim_f1);
    br.push_back(final_eval(r.benign[i]).rest_f1);
    lv.push_back(final_eval(r.late[i]).victim_f1);
    lr.push_back(final_eval(r.late[i]).rest_f1);
    ev.push_back(final_eval(r.early[i]).victim_f1);
    double in_window_min = kInf;
    for (const RoundLog& rl : r.early[i].rounds) {
      if (rl.attack_window && rl.eval) in_window_min = std::min(in_window_min, rl.eval->victim_f1);
    }
    recovered += ev.back() > in_window_min;
  }
  const double victim_drop = median(bv) - median(lv);
  const double rest_drop = median(br) - median(lr);
  info("median final victim F1: benign " + num(median(bv)) + ", late " + num(median(lv)) +
       ", early " + num(median(ev)) + "; rest F1 benign " + num(median(br)) + ", late " +
       num(median(lr)));
  const bool ok = victim_drop >= 0.20 && rest_drop <= 0.05 && median(lv) <= median(ev) &&
                  recovered == r.early.size();
  return {ok, "victim F1 drop " + num(victim_drop) + ", rest F1 drop " + num(rest_drop) +
                  ", late <= early " + (median(lv) <= median(ev) ? "yes" : "no") +
                  ", early runs recovered " + std::to_string(recovered) + "/" +
                  std::to_string(r.early.size())};
}

Verdict norm_separation(const PoisonRuns& r) {
  if (r.late.empty()) return {false, "poisoning runs unavailable"};
  std::size_t rounds = 0, above = 0, within_rounds = 0, within_above = 0;
  for (std::size_t i = 0; i < r.late.size(); ++i) {
    for (std::size_t t = 0; t < r.late[i].rounds.size(); ++t) {
      const RoundLog& rl = r.late[i].rounds[t];
      if (!rl.attack_window || std::isnan(rl.mean_poisoned_norm)) continue;
      ++rounds;
      above += rl.mean_poisoned_norm > r.benign[i].rounds[t].mean_update_norm;
      if (!std::isnan(rl.mean_benign_norm)) {
        ++within_rounds;
        within_above += rl.mean_poisoned_norm > rl.mean_benign_norm;
      }
    }
  }
  const double frac = rounds == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(rounds);
  info("within the poisoned runs, poisoned > benign participants in " +
       std::to_string(within_above) + "/" + std::to_string(within_rounds) + " attack rounds");
  return {frac >= 0.8, "poisoned-update norm above the benign run's norm in " +
                           std::to_string(above) + "/" + std::to_string(rounds) +
                           " attack rounds over 5 seeds (" + num(frac) + ")"};
}

Verdict planted_soundness_detail(std::string& detail) {
  std::size_t perfect = 0;
  const std::size_t instances = 50;
  for (std::uint64_t seed = 0; seed < instances; ++seed) {
    Rng rng(seed);
    const std::size_t dim = 8;
    const double sd = 0.1;
    // ||mu_p - mu_b|| = 10 * sd = 10 * sqrt(spectral radius).
    const double offset = 10.0 * sd / std::sqrt(static_cast<double>(dim));
    std::normal_distribution<double> n(0.0, sd);
    GradientTrace trace;
    std::vector<int> bad;
    for (std::size_t round = 0; round < 6; ++round) {
      for (int k = 0; k < 40; ++k) {
        TraceRecord rec;
        rec.round = round;
        rec.client_id = k;
        rec.malicious = k >= 36;
        rec.norm = 1.0;
        for (std::size_t j = 0; j < dim; ++j) rec.slice.push_back(n(rng) + (rec.malicious ? offset : 0.0));
        trace.records.push_back(std::move(rec));
      }
    }
    for (int k = 36; k < 40; ++k) bad.push_back(k);
    DetectionOptions o;
    o.seed = seed;
    const DetectionReport rep = detect(trace, o);
    const DetectionSummary s = score_detection(trace, rep.flagged, bad);
    perfect += s.recall == 1.0 && s.false_positives == 0;
  }
  detail = std::to_string(perfect) + "/" + std::to_string(instances) + " planted instances exact";
  return {perfect == instances, detail};
}

Verdict forensics(const PoisonRuns& r) {
  if (r.benign.empty()) return {false, "benign reference run unavailable"};
  const ExperimentConfig e = preset("table3");
  const Workbench wb = prepare_data(e);
  const TrainOutcome out = run_training(e, wb);
  if (!out.trace || !out.plan) return {false, "removal run produced no trace"};
  const DetectionReport rep = detect(*out.trace, e.forensics);
  const DetectionSummary s = score_detection(*out.trace, rep.flagged, out.plan->malicious);

  std::size_t removed = 0, removed_benign = 0;
  for (const RoundLog& rl : out.log.rounds) {
    for (int id : rl.flagged) {
      ++removed;
      removed_benign += !out.plan->is_malicious(id);
    }
  }
  const double benign_victim = final_eval(r.benign.front()).victim_f1;
  const double defended_victim = final_eval(out.log).victim_f1;
  const double gap = benign_victim - defended_victim;
  info("removal run dropped " + std::to_string(removed) + " updates, " +
       std::to_string(removed_benign) + " of them from benign clients");

  const ExperimentConfig u = preset("fig10");
  const TrainOutcome undefended = run_training(u, prepare_data(u));
  if (undefended.trace && undefended.plan) {
    const DetectionReport urep = detect(*undefended.trace, u.forensics);
    const DetectionSummary us = score_detection(*undefended.trace, urep.flagged, undefended.plan->malicious);
    info("offline detection on the undefended trace: recall " + num(us.recall) + ", FPR " +
         num(us.false_positive_rate) + ", final victim F1 " + num(final_eval(undefended.log).victim_f1));
  }

  std::string planted;
  const bool sound = planted_soundness_detail(planted).pass;
  const bool ok = s.recall >= 0.9 && s.false_positive_rate <= 0.1 && gap <= 0.05 && sound;
  return {ok, "recall " + num(s.recall) + ", FPR " + num(s.false_positive_rate) + " (" +
                  std::to_string(rep.flagged.size()) + " flagged), victim F1 with removal " +
                  num(defended_victim) + " vs benign " + num(benign_victim) + ", " + planted};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    files[entry.path().filename().string()] = slurp(entry.path());
  }
  return files;
}

// Each scenario runs twice into the same directory; every emitted file must
// match byte for byte.
Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "fllab_acceptance";
  fs::remove_all(root);
  std::ostringstream sink;
  bool identical = true;
  std::size_t files = 0;
  for (const auto& [command, name, extra] :
       {std::tuple{"poison", "fig9", "train.rounds=12"}, std::tuple{"leak", "alg1", "attack.targets=3"},
        std::tuple{"train", "fig8", "train.rounds=5"}}) {
    Config c = Config::load(kPresets / (std::string(name) + ".cfg"));
    c.apply_override(extra);
    c.set("output.dir", (root / name).string());
    run_command(command, c, sink);
    const auto first = snapshot(root / name);
    run_command(command, c, sink);
    files += first.size();
    identical = identical && first == snapshot(root / name);
  }

  // IDX stores unsigned bytes: load then write must reproduce the file.
  BlobOptions o;
  o.per_class = 30;
  write_idx(synth_blobs(o), root / "x.idx", root / "y.idx");
  const Dataset loaded = load_idx(root / "x.idx", root / "y.idx");
  write_idx(loaded, root / "x2.idx", root / "y2.idx");
  const Dataset reloaded = load_idx(root / "x2.idx", root / "y2.idx");
  const bool idx_ok = slurp(root / "x.idx") == slurp(root / "x2.idx") &&
                      slurp(root / "y.idx") == slurp(root / "y2.idx") &&
                      reloaded.images == loaded.images && reloaded.labels == loaded.labels;

  const std::string csv = slurp(root / "fig9" / "results.csv");
  const auto rows = parse_results(csv);
  const bool csv_ok = !rows.empty() && results_csv(rows) == csv;
  fs::remove_all(root);
  return {identical && files > 0 && idx_ok && csv_ok,
          std::to_string(files) + " output files " + (identical ? "byte-identical" : "differ") +
              " across repeated runs, IDX round trip " + (idx_ok ? "exact" : "differs") +
              ", CSV parse-back " + (csv_ok ? "exact" : "differs")};
}

}  // namespace

int main() {
  std::cout << "fllab acceptance suite\n";
  criterion(1, "autodiff exactness", autodiff);
  criterion(2, "closed-form leakage oracle", closed_form);
  criterion(3, "undefended attack success", undefended);
  criterion(4, "init-strategy ordering", init_ordering);
  criterion(5, "attack-timing difficulty", timing);
  criterion(6, "defense thresholds", defense_thresholds);
  criterion(7, "dynamic DP leakage resilience", dynamic_dp);

  ScheduleRun schedule;
  criterion(8, "sensitivity and schedule properties", [&] {
    schedule = schedule_run();
    return sensitivity_schedule(schedule);
  });
  criterion(9, "accountant correctness", [&] { return accountant(schedule); });

  PoisonRuns runs;
  criterion(10, "poisoning effect", [&] {
    runs = poison_runs();
    return poisoning_effect(runs);
  });
  criterion(11, "norm separation", [&] { return norm_separation(runs); });
  criterion(12, "forensics efficacy", [&] { return forensics(runs); });
  criterion(13, "determinism and formats", determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
