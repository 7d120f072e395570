#include "fllab/experiments.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "fllab/errors.h"
#include "fllab/metrics.h"

namespace fllab {
namespace {

constexpr std::uint64_t kPoisonPlanStream = 77;
constexpr std::uint64_t kVictimStream = 1;

Activation parse_activation(const std::string& s) {
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

AggregationRule parse_rule(const std::string& s) {
  if (s == "fedsgd") return AggregationRule::kFedSgd;
  if (s == "fedavg") return AggregationRule::kFedAvg;
  if (s == "delta") return AggregationRule::kDelta;
  throw ConfigError("unknown aggregation rule '" + s + "'");
}

NoiseKind parse_noise(const std::string& s) {
  for (NoiseKind k : {NoiseKind::kNone, NoiseKind::kCompression, NoiseKind::kGaussian,
                      NoiseKind::kFixedDp, NoiseKind::kDynamicDp}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown privacy kind '" + s + "'");
}

DecayKind parse_decay(const std::string& s) {
  for (DecayKind k : {DecayKind::kLinear, DecayKind::kStaircase, DecayKind::kExponential,
                      DecayKind::kCyclic}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown decay '" + s + "'");
}

InjectionSite parse_site(const std::string& s) {
  if (s == "per_example") return InjectionSite::kPerExample;
  if (s == "per_client_update") return InjectionSite::kPerClientUpdate;
  throw ConfigError("unknown injection site '" + s + "'");
}

std::optional<PoisonKind> parse_poison(const std::string& s) {
  if (s == "none") return std::nullopt;
  for (PoisonKind k : {PoisonKind::kDirtyLabel, PoisonKind::kBackdoor, PoisonKind::kCleanLabel}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown poison kind '" + s + "'");
}

AttackOptimizer parse_optimizer(const std::string& s) {
  if (s == "gd") return AttackOptimizer::kGradientDescent;
  if (s == "adam") return AttackOptimizer::kAdam;
  throw ConfigError("unknown attack optimizer '" + s + "'");
}

std::pair<std::size_t, std::size_t> window_bounds(const std::string& name, std::size_t rounds,
                                                  std::size_t start, std::size_t end) {
  if (name == "early") return {0, rounds / 3};
  if (name == "middle") return {rounds / 3, 2 * rounds / 3};
  if (name == "late") return {2 * rounds / 3, rounds};
  if (name == "all") return {0, rounds};
  if (name == "custom") return {start, end};
  throw ConfigError("unknown poison window '" + name + "'");
}

bool is_dp(NoiseKind k) { return k == NoiseKind::kFixedDp || k == NoiseKind::kDynamicDp; }

}  // namespace

std::string to_string(AggregationRule rule) {
  switch (rule) {
    case AggregationRule::kFedSgd: return "fedsgd";
    case AggregationRule::kFedAvg: return "fedavg";
    case AggregationRule::kDelta: return "delta";
  }
  return "fedavg";
}

std::filesystem::path default_output_root() {
  const char* root = std::getenv("FLLAB_OUTPUT_ROOT");
  return root != nullptr && *root != '\0' ? std::filesystem::path(root)
                                          : std::filesystem::path("results");
}

ExperimentConfig make_experiment(const Config& cfg) {
  ExperimentConfig e;
  e.source = cfg;
  if (!cfg.has("seed") || cfg.raw("seed").empty()) throw ConfigError("seed is mandatory");
  e.seed = cfg.u64("seed");
  e.scenario = cfg.str("scenario");
  if (e.scenario.empty()) e.scenario = "scenario";
  e.output_dir = cfg.str("output.dir").empty() ? default_output_root() / e.scenario
                                               : std::filesystem::path(cfg.str("output.dir"));
  e.write_images = cfg.flag("output.images");

  e.data.source = cfg.str("data.source");
  if (e.data.source != "synth" && e.data.source != "idx") {
    throw ConfigError("unknown data source '" + e.data.source + "'");
  }
  e.data.images = cfg.str("data.images");
  e.data.labels = cfg.str("data.labels");
  const std::size_t side = cfg.count("data.side");
  e.data.blobs.classes = cfg.count("data.classes");
  e.data.blobs.shape = {side, side};
  e.data.blobs.per_class = cfg.count("data.per_class");
  e.data.blobs.separation = cfg.real("data.separation");
  e.data.blobs.spread = cfg.real("data.spread");
  e.data.blobs.grid = cfg.count("data.grid");
  e.data.blobs.seed = cfg.u64("data.seed");
  e.data.test_fraction = cfg.real("data.test_fraction");
  e.data.split_seed = cfg.u64("data.split_seed");
  if (side == 0 || e.data.blobs.classes < 2 || e.data.blobs.per_class == 0) {
    throw ConfigError("data.side, data.classes and data.per_class must be positive (classes >= 2)");
  }
  if (!(e.data.test_fraction >= 0.0 && e.data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must lie in [0, 1)");
  }

  e.clients = cfg.count("partition.clients");
  e.per_client = cfg.count("partition.per_client");
  e.classes_per_client = cfg.count("partition.classes_per_client");

  std::vector<LayerSpec> hidden;
  const Activation act = parse_activation(cfg.str("model.activation"));
  for (std::size_t w : cfg.count_list("model.hidden")) {
    if (w == 0) throw ConfigError("model.hidden widths must be positive");
    hidden.push_back({w, act});
  }
  e.model = ModelSpec({side, side}, hidden, e.data.blobs.classes);
  e.init_gain = cfg.real("model.init_gain");

  e.training.clients = e.clients;
  e.training.participants = cfg.count("train.participants");
  e.training.rounds = cfg.count("train.rounds");
  e.training.local_iters = cfg.count("train.local_iters");
  e.training.batch = cfg.count("train.batch");
  e.training.local_lr = cfg.real("train.local_lr");
  e.training.seed = e.seed;
  e.training.validate();
  e.rule = parse_rule(cfg.str("train.rule"));
  e.global_lr = cfg.real("train.global_lr");
  e.victim_class = cfg.count("train.victim_class");
  if (e.victim_class >= e.data.blobs.classes) throw ConfigError("train.victim_class out of range");

  e.privacy.kind = parse_noise(cfg.str("privacy.kind"));
  e.privacy.compression_ratio = cfg.real("privacy.compression_ratio");
  e.privacy.gaussian_variance = cfg.real("privacy.gaussian_variance");
  e.privacy.clip = cfg.real("privacy.clip");
  e.privacy.sigma0 = cfg.real("privacy.sigma0");
  e.privacy.sigma_final = cfg.real("privacy.sigma_final");
  e.privacy.decay = parse_decay(cfg.str("privacy.decay"));
  e.privacy.stages = cfg.count("privacy.stages");
  e.privacy.period = cfg.count("privacy.period");
  e.privacy.site = parse_site(cfg.str("privacy.site"));
  e.privacy.validate();
  const double ref = cfg.real("privacy.reference_sigma");
  if (ref < 0.0) throw ConfigError("privacy.reference_sigma must be non-negative");
  if (ref > 0.0) e.reference_sigma = ref;

  if (auto kind = parse_poison(cfg.str("poison.kind"))) {
    PoisonSpec ps;
    ps.kind = *kind;
    ps.source = cfg.count("poison.source");
    ps.target = cfg.count("poison.target");
    ps.compromised_fraction = cfg.real("poison.compromised_fraction");
    ps.availability = cfg.real("poison.availability");
    std::tie(ps.window_start, ps.window_end) =
        window_bounds(cfg.str("poison.window"), e.training.rounds, cfg.count("poison.window_start"),
                      cfg.count("poison.window_end"));
    ps.poisoned_fraction = cfg.real("poison.poisoned_fraction");
    ps.blend = cfg.real("poison.blend");
    e.trigger_size = cfg.count("poison.trigger_size");
    if (ps.kind == PoisonKind::kBackdoor) {
      if (e.trigger_size == 0 || e.trigger_size > side) {
        throw ConfigError("poison.trigger_size must lie in [1, data.side]");
      }
      ps.trigger = square_trigger(e.model.input_shape(), e.trigger_size, side - e.trigger_size,
                                  side - e.trigger_size);
    }
    ps.validate(e.training.rounds);
    e.poison = ps;
  }

  AttackConfig& a = e.attack.attack;
  a.init = parse_init_strategy(cfg.str("attack.init"));
  a.optimizer = parse_optimizer(cfg.str("attack.optimizer"));
  a.max_iters = cfg.count("attack.iters");
  a.lr = cfg.real("attack.lr");
  a.loss_threshold = cfg.real("attack.threshold");
  a.clamp = cfg.flag("attack.clamp");
  a.success_mse = cfg.real("attack.success_mse");
  e.attack.targets = cfg.count("attack.targets");
  e.attack.batch = cfg.count("attack.batch");
  e.attack.local_iters = cfg.count("attack.local_iters");
  e.attack.local_lr = cfg.real("attack.local_lr");
  a.batch = e.attack.batch;
  a.validate();
  if (e.attack.local_iters == 0) throw ConfigError("attack.local_iters must be at least 1");

  e.forensics_class = cfg.count("forensics.class");
  if (e.forensics_class >= e.data.blobs.classes) throw ConfigError("forensics.class out of range");
  e.forensics.window = cfg.count("forensics.window");
  e.forensics.threshold = cfg.real("forensics.threshold");
  e.forensics.norm_rule = cfg.flag("forensics.norm_rule");
  e.forensics.q = cfg.real("forensics.q");
  e.forensics.min_silhouette = cfg.real("forensics.min_silhouette");
  e.forensics.history = cfg.count("forensics.history");
  e.forensics.seed = e.seed;
  if (!(e.forensics.q > 0.0 && e.forensics.q < 0.5)) throw ConfigError("forensics.q must lie in (0, 0.5)");
  if (e.forensics.window == 0) throw ConfigError("forensics.window must be at least 1");
  e.removal = cfg.flag("forensics.removal");
  e.trace_path = cfg.str("forensics.trace").empty() ? e.output_dir / "trace.csv"
                                                    : std::filesystem::path(cfg.str("forensics.trace"));

  e.sweep.key = cfg.str("sweep.key");
  e.sweep.values = cfg.list("sweep.values");
  e.sweep.command = cfg.str("sweep.command");
  return e;
}

ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides) {
  Config cfg = Config::load(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  return make_experiment(cfg);
}

namespace {

Dataset load_source(const ExperimentConfig& cfg) {
  if (cfg.data.source == "idx") {
    if (cfg.data.images.empty() || cfg.data.labels.empty()) {
      throw ConfigError("data.source = idx needs data.images and data.labels");
    }
    Dataset ds = load_idx(cfg.data.images, cfg.data.labels, cfg.data.blobs.classes);
    if (!ds.empty() && ds.images.front().shape() != cfg.model.input_shape()) {
      throw ConfigError("IDX image shape does not match data.side");
    }
    return ds;
  }
  return synth_blobs(cfg.data.blobs);
}

}  // namespace

Workbench prepare_data(const ExperimentConfig& cfg) {
  Dataset all = load_source(cfg);
  Workbench wb;
  std::tie(wb.train, wb.test) = train_test_split(all, cfg.data.test_fraction, cfg.data.split_seed);
  wb.shards = partition(wb.train, PartitionPlan::uniform(cfg.clients, cfg.per_client,
                                                         cfg.classes_per_client, cfg.seed));
  return wb;
}

Scenario make_scenario(const ExperimentConfig& cfg, const Workbench& wb) {
  Scenario sc;
  sc.rule = cfg.rule;
  sc.global_lr = cfg.global_lr;
  sc.init_gain = cfg.init_gain;
  sc.test = wb.test;
  sc.victim_class = cfg.victim_class;
  if (cfg.poison) {
    Rng rng = make_rng(cfg.seed, {kPoisonPlanStream});
    sc.poison = poison_plan(*cfg.poison, cfg.clients, cfg.training.rounds, rng, &wb.train);
  }
  if (cfg.privacy.kind != NoiseKind::kNone) sc.defense = cfg.privacy;
  if (cfg.privacy.kind == NoiseKind::kDynamicDp) sc.dynamic_reference_sigma = cfg.reference_sigma;
  return sc;
}

TrainOutcome run_training(const ExperimentConfig& cfg, const Workbench& wb) {
  Scenario sc = make_scenario(cfg, wb);
  TrainOutcome out;
  out.plan = sc.poison;
  std::unique_ptr<OnlineDetector> detector;
  if (cfg.removal) {
    detector = std::make_unique<OnlineDetector>(cfg.model, cfg.forensics_class, cfg.forensics);
    sc.screen = detector->as_screen();
  } else if (sc.poison) {
    sc.record_updates = true;
    sc.record_params = payload_for(cfg.rule) == PayloadKind::kWeights;
  }
  out.log = run_federation(cfg.training, cfg.model, wb.shards, sc);
  if (detector) {
    GradientTrace trace = detector->trace();
    if (sc.poison) {
      for (TraceRecord& r : trace.records) {
        r.malicious = sc.poison->is_malicious(r.client_id) && sc.poison->in_window(r.round);
      }
    }
    out.trace = std::move(trace);
  } else if (sc.record_updates) {
    out.trace = build_trace(out.log, cfg.model, cfg.forensics_class);
    for (RoundLog& rl : out.log.rounds) {
      rl.updates.clear();
      rl.params.reset();
    }
  }
  return out;
}

ResultTable run_rows(const std::string& scenario, const RunLog& log, bool noisy) {
  ResultTable t;
  auto add_eval = [&](std::size_t round, const EvalReport& e) {
    t.add(scenario, round, "accuracy", e.accuracy);
    t.add(scenario, round, "victim_f1", e.victim_f1);
    t.add(scenario, round, "rest_f1", e.rest_f1);
  };
  add_eval(0, log.initial_eval);
  for (const RoundLog& rl : log.rounds) {
    if (rl.eval) add_eval(rl.round, *rl.eval);
    t.add(scenario, rl.round, "update_norm", rl.mean_update_norm);
    if (noisy) {
      t.add(scenario, rl.round, "sigma_t", rl.sigma);
      t.add(scenario, rl.round, "epsilon", rl.epsilon);
    }
  }
  return t;
}

std::vector<LeakTrial> run_leakage(const ExperimentConfig& cfg) {
  const Dataset ds = load_source(cfg);
  if (ds.size() < cfg.attack.batch) throw ConfigError("dataset smaller than the victim batch");
  std::vector<LeakTrial> trials;
  for (std::size_t i = 0; i < cfg.attack.targets; ++i) {
    const std::uint64_t s = cfg.seed + i;
    LeakTrial trial;
    trial.index = i;
    Rng model_rng(s);
    const ParamVector params = init_params(cfg.model, model_rng, cfg.init_gain);
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < cfg.attack.batch; ++j) idx.push_back((s * 17 + j * 7) % ds.size());
    const Dataset shard = subset(ds, idx);
    trial.victim = shard.examples();

    std::optional<PolicyDefense> defense;
    if (cfg.privacy.kind != NoiseKind::kNone) {
      NoisePolicy policy = cfg.privacy;
      double sigma = 0.0;
      if (is_dp(policy.kind)) {
        sigma = policy.sigma0;
        if (policy.kind == NoiseKind::kDynamicDp && cfg.reference_sigma) {
          std::vector<GradVector> per = per_example_grads(cfg.model, params, trial.victim);
          for (GradVector& g : per) g = clip(g, policy.clip);
          const double s1 = l2max_sensitivity(per, policy.clip).value;
          sigma = std::max(policy.sigma_final,
                           dynamic_initial_scale(policy.clip, *cfg.reference_sigma, s1));
        }
      }
      defense.emplace(policy, sigma);
      trial.sigma = sigma;
    }
    LocalTrainOptions lo{cfg.attack.local_iters, cfg.attack.batch, cfg.attack.local_lr,
                         PayloadKind::kGradient};
    LocalTrainHooks hooks;
    if (defense) hooks.defense = &*defense;
    Rng victim_rng = make_rng(s, {kVictimStream});
    const ClientUpdate u = local_train(cfg.model, params, shard, 0, lo, victim_rng, hooks);
    if (defense && defense->max_sensitivity()) trial.sensitivity = *defense->max_sensitivity();

    const bool single = cfg.attack.batch == 1 && cfg.attack.local_iters == 1;
    TargetGradient target{single ? AttackSurface::kClientSgd : AttackSurface::kServerAggregation,
                          std::get<GradientPayload>(u.payload).grad, 0, 0};
    AttackConfig ac = cfg.attack.attack;
    ac.seed = 100 + s;
    const Tensor* truth = cfg.attack.batch == 1 ? &trial.victim.front().x : nullptr;
    const Tensor* exemplar = nullptr;
    std::size_t ex_idx = 0;
    if (ac.init == InitStrategy::kExemplar) {
      // Another sample of the victim's class.
      const std::size_t y = trial.victim.front().label;
      for (std::size_t k = 1; k <= ds.size(); ++k) {
        ex_idx = (idx.front() + k) % ds.size();
        if (ds.labels[ex_idx] == y && ex_idx != idx.front()) break;
      }
      exemplar = &ds.images[ex_idx];
    }
    try {
      trial.result = reconstruct(cfg.model, params, target, ac, truth, exemplar);
    } catch (const ReconstructionAborted& e) {
      trial.result = e.partial();
    }

    std::vector<std::size_t> want, got = trial.result.labels;
    for (const Example& ex : trial.victim) want.push_back(ex.label);
    std::sort(want.begin(), want.end());
    std::sort(got.begin(), got.end());
    trial.label_correct = want == got;

    double mse_sum = 0.0, ssim_sum = 0.0;
    bool finite = !trial.result.slots.empty();
    for (const Tensor& slot : trial.result.slots) {
      for (double v : slot.values()) finite = finite && std::isfinite(v);
    }
    if (finite) {
      for (const Tensor& slot : trial.result.slots) {
        double best = std::numeric_limits<double>::infinity(), best_ssim = 0.0;
        for (const Example& ex : trial.victim) {
          const LeakageScore sc = evaluate_leakage(slot, ex.x, ac.success_mse);
          if (sc.mse < best) {
            best = sc.mse;
            best_ssim = sc.ssim;
          }
        }
        mse_sum += best;
        ssim_sum += best_ssim;
      }
      const double n = static_cast<double>(trial.result.slots.size());
      trial.mse = mse_sum / n;
      trial.ssim = ssim_sum / n;
    } else {
      trial.mse = std::numeric_limits<double>::infinity();
      trial.ssim = 0.0;
    }
    trials.push_back(std::move(trial));
  }
  return trials;
}

ResultTable leak_rows(const std::string& scenario, const std::vector<LeakTrial>& trials) {
  ResultTable t;
  for (const LeakTrial& tr : trials) {
    if (!std::isfinite(tr.mse)) continue;
    t.add(scenario, tr.index, "attack_mse", tr.mse);
    t.add(scenario, tr.index, "attack_ssim", tr.ssim);
    if (tr.sigma > 0.0) t.add(scenario, tr.index, "sigma_t", tr.sigma);
  }
  return t;
}

std::vector<Config> expand_sweep(const Config& cfg) {
  const std::string key = cfg.str("sweep.key");
  if (key.empty()) throw ConfigError("sweep needs sweep.key");
  if (!is_config_key(key) || key.rfind("sweep.", 0) == 0 || key == "scenario" ||
      key == "output.dir") {
    throw ConfigError("sweep.key '" + key + "' cannot be swept");
  }
  const auto values = cfg.list("sweep.values");
  if (values.empty()) throw ConfigError("sweep needs sweep.values");
  const std::string base = cfg.str("scenario").empty() ? "scenario" : cfg.str("scenario");
  const std::filesystem::path root = cfg.str("output.dir").empty()
                                         ? default_output_root() / base
                                         : std::filesystem::path(cfg.str("output.dir"));
  const std::string label = key.substr(key.rfind('.') + 1);
  std::vector<Config> out;
  std::set<std::string> seen;
  for (const auto& v : values) {
    if (!seen.insert(v).second) throw ConfigError("sweep value '" + v + "' repeats");
    Config c = cfg;
    c.set(key, v);
    const std::string id = base + "-" + label + v;
    c.set("scenario", id);
    c.set("output.dir", (root / id).string());
    c.set("sweep.key", "");
    c.set("sweep.values", "");
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string leak_trace_csv(const std::vector<LeakTrial>& trials) {
  std::string out = "trial,iteration,distance\n";
  for (const LeakTrial& tr : trials) {
    for (std::size_t k = 0; k < tr.result.trace.size(); ++k) {
      out += std::to_string(tr.index) + "," + std::to_string(k) + "," +
             format_value(tr.result.trace[k]) + "\n";
    }
  }
  return out;
}

// trial,slot,image,row,col,value with image = target | reconstruction.
// Leading dimensions fold into rows.
std::string pixel_csv(const std::vector<LeakTrial>& trials) {
  std::string out = "trial,slot,image,row,col,value\n";
  auto emit = [&](std::size_t trial, std::size_t slot, const char* kind, const Tensor& t) {
    const std::size_t w = t.shape().empty() ? 1 : t.shape().back();
    for (std::size_t i = 0; i < t.size(); ++i) {
      out += std::to_string(trial) + "," + std::to_string(slot) + "," + kind + "," +
             std::to_string(i / w) + "," + std::to_string(i % w) + "," + format_value(t[i]) +
             "\n";
    }
  };
  for (const LeakTrial& tr : trials) {
    for (std::size_t k = 0; k < tr.victim.size(); ++k) emit(tr.index, k, "target", tr.victim[k].x);
    for (std::size_t k = 0; k < tr.result.slots.size(); ++k) {
      emit(tr.index, k, "reconstruction", tr.result.slots[k]);
    }
  }
  return out;
}

// round,sigma_t,S,zeta,epsilon for a run under a noise policy.
std::string ledger_csv(const RunLog& log) {
  std::string out = "round,sigma_t,S,zeta,epsilon\n";
  for (const RoundLog& rl : log.rounds) {
    out += std::to_string(rl.round) + "," + format_value(rl.sigma) + "," +
           format_value(rl.sensitivity) + "," + format_value(rl.zeta) + "," +
           format_value(rl.epsilon) + "\n";
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void command_train(const ExperimentConfig& e, bool require_poison, std::ostream& out) {
  if (require_poison && !e.poison) throw ConfigError("poison needs poison.kind other than none");
  const Workbench wb = prepare_data(e);
  const TrainOutcome r = run_training(e, wb);
  const ResultTable rows = run_rows(e.scenario, r.log, e.privacy.kind != NoiseKind::kNone);
  write_results(rows.rows(), e.output_dir / "results.csv");
  write_text(e.output_dir / "config.txt", e.source.dump());
  if (r.trace) write_trace_csv(*r.trace, e.output_dir / "trace.csv");
  if (r.log.ledger) write_text(e.output_dir / "ledger.csv", ledger_csv(r.log));
  const EvalReport& last = r.log.rounds.empty() || !r.log.rounds.back().eval
                               ? r.log.initial_eval
                               : *r.log.rounds.back().eval;
  out << e.scenario << ": rounds " << r.log.rounds.size() << " accuracy "
      << format_value(last.accuracy) << " victim_f1 " << format_value(last.victim_f1)
      << " rest_f1 " << format_value(last.rest_f1);
  if (r.log.ledger) out << " epsilon " << format_value(r.log.ledger->epsilon());
  if (e.removal) {
    std::size_t removed = 0;
    for (const RoundLog& rl : r.log.rounds) removed += rl.flagged.size();
    out << " removed " << removed;
  }
  out << " -> " << e.output_dir.string() << "\n";
}

void command_leak(const ExperimentConfig& e, std::ostream& out) {
  const std::vector<LeakTrial> trials = run_leakage(e);
  write_results(leak_rows(e.scenario, trials).rows(), e.output_dir / "results.csv");
  write_text(e.output_dir / "config.txt", e.source.dump());
  write_text(e.output_dir / "leak_trace.csv", leak_trace_csv(trials));
  if (e.write_images) {
    std::vector<Tensor> targets, recs;
    for (const LeakTrial& t : trials) {
      for (const Example& ex : t.victim) targets.push_back(ex.x);
      for (const Tensor& s : t.result.slots) recs.push_back(s);
    }
    write_idx_images(targets, e.output_dir / "targets.idx");
    write_idx_images(recs, e.output_dir / "reconstructions.idx");
    write_text(e.output_dir / "reconstructions.csv", pixel_csv(trials));
  }
  std::vector<double> mses;
  std::size_t leaked = 0, labels = 0;
  for (const LeakTrial& t : trials) {
    mses.push_back(t.mse);
    leaked += t.mse < e.attack.attack.success_mse ? 1 : 0;
    labels += t.label_correct ? 1 : 0;
  }
  out << e.scenario << ": trials " << trials.size() << " median_mse " << format_value(median(mses))
      << " leaked " << leaked << " labels_correct " << labels << " -> " << e.output_dir.string()
      << "\n";
}

void command_detect(const ExperimentConfig& e, std::ostream& out) {
  GradientTrace trace = read_trace_csv(e.trace_path, e.forensics_class);
  std::error_code ec;
  std::filesystem::create_directories(e.output_dir, ec);
  if (ec) throw IoError("cannot create " + e.output_dir.string() + ": " + ec.message());
  const DetectionReport rep = detect(trace, e.forensics);
  write_detection_csv(rep, e.output_dir / "detection.csv");
  write_scatter_csv(trace, rep, e.output_dir / "scatter.csv");
  out << e.scenario << ": records " << trace.records.size() << " silhouette "
      << format_value(rep.silhouette) << " flagged " << rep.flagged.size();
  if (rep.summary) {
    out << " recall " << format_value(rep.summary->recall) << " fpr "
        << format_value(rep.summary->false_positive_rate);
  }
  out << " -> " << e.output_dir.string() << "\n";
}

}  // namespace

void run_command(const std::string& command, const Config& cfg, std::ostream& out) {
  if (command == "sweep") {
    const std::string inner = cfg.str("sweep.command");
    if (inner != "train" && inner != "leak" && inner != "poison") {
      throw ConfigError("sweep.command must be train, leak or poison");
    }
    make_experiment(cfg);
    for (const Config& c : expand_sweep(cfg)) run_command(inner, c, out);
    return;
  }
  const ExperimentConfig e = make_experiment(cfg);
  if (command == "train") return command_train(e, false, out);
  if (command == "poison") return command_train(e, true, out);
  if (command == "leak") return command_leak(e, out);
  if (command == "detect") return command_detect(e, out);
  throw ConfigError("unknown command '" + command + "'");
}

std::size_t run_report(const std::filesystem::path& dir, std::ostream& out) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no such directory " + dir.string());
  std::vector<std::filesystem::path> result_files, trace_files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "results.csv") result_files.push_back(entry.path());
    if (entry.path().filename() == "trace.csv") trace_files.push_back(entry.path());
  }
  std::sort(result_files.begin(), result_files.end());
  std::sort(trace_files.begin(), trace_files.end());

  ResultTable all;
  for (const auto& f : result_files) {
    for (const ResultRow& r : read_results(f)) all.add(r);
  }

  // scenario -> metric -> round -> value
  std::map<std::string, std::map<std::string, std::map<std::size_t, double>>> series;
  for (const ResultRow& r : all.rows()) series[r.scenario][r.metric][r.round] = r.value;

  std::string summary = "scenario,metric,count,first,last,min,max,mean\n";
  for (const auto& [scenario, metrics] : series) {
    for (const auto& [metric, points] : metrics) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
      for (const auto& [round, v] : points) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
      }
      summary += scenario + "," + metric + "," + std::to_string(points.size()) + "," +
                 format_value(points.begin()->second) + "," +
                 format_value(points.rbegin()->second) + "," + format_value(lo) + "," +
                 format_value(hi) + "," + format_value(sum / static_cast<double>(points.size())) +
                 "\n";
    }
  }
  write_text(dir / "summary.csv", summary);

  for (const std::string& metric : metric_vocabulary()) {
    std::vector<std::string> cols;
    std::set<std::size_t> rounds;
    for (const auto& [scenario, metrics] : series) {
      auto it = metrics.find(metric);
      if (it == metrics.end()) continue;
      cols.push_back(scenario);
      for (const auto& [round, v] : it->second) rounds.insert(round);
    }
    if (cols.empty()) continue;
    std::string text = "round";
    for (const auto& c : cols) text += "," + c;
    text += "\n";
    for (std::size_t round : rounds) {
      text += std::to_string(round);
      for (const auto& c : cols) {
        const auto& points = series[c][metric];
        auto it = points.find(round);
        text += ",";
        if (it != points.end()) text += format_value(it->second);
      }
      text += "\n";
    }
    write_text(dir / ("lines_" + metric + ".csv"), text);
  }

  for (const auto& f : trace_files) {
    const GradientTrace trace = read_trace_csv(f, 0);
    if (trace.records.size() < 2) continue;
    DetectionOptions opts;
    const DetectionReport rep = detect(trace, opts);
    const std::string name = f.parent_path().filename().string();
    write_scatter_csv(trace, rep, dir / ("scatter_" + name + ".csv"));
  }

  out << "report: " << result_files.size() << " result files, " << all.rows().size()
      << " rows, " << trace_files.size() << " traces -> " << dir.string() << "\n";
  return all.rows().size();
}

}  // namespace fllab
