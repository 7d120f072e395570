#include "fllab/federation.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fllab/errors.h"

namespace fllab {

namespace {

// Stream identifiers for derive_seed.
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kSamplerStream = 0x5a3b;
constexpr std::uint64_t kClientStream = 0xc11e;

}  // namespace

void TrainingConfig::validate() const {
  if (clients == 0) throw ConfigError("at least one client is required");
  if (participants == 0 || participants > clients) {
    throw ConfigError("participants per round must lie in [1, clients]");
  }
  if (local_iters == 0) throw ConfigError("local iterations must be at least 1");
  if (batch == 0) throw ConfigError("local batch size must be at least 1");
  if (!(local_lr >= 0.0)) throw ConfigError("local learning rate must be non-negative");
}

PayloadKind ClientUpdate::kind() const {
  return std::visit(
      [](const auto& p) -> PayloadKind {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GradientPayload>) return PayloadKind::kGradient;
        else if constexpr (std::is_same_v<P, WeightsPayload>) return PayloadKind::kWeights;
        else return PayloadKind::kDelta;
      },
      payload);
}

std::span<const double> ClientUpdate::values() const {
  return std::visit(
      [](const auto& p) -> std::span<const double> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GradientPayload>) return p.grad.values();
        else if constexpr (std::is_same_v<P, WeightsPayload>) return p.weights.values();
        else return p.delta.values();
      },
      payload);
}

const ParamLayout& ClientUpdate::layout() const {
  return std::visit(
      [](const auto& p) -> const ParamLayout& {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GradientPayload>) return p.grad.layout();
        else if constexpr (std::is_same_v<P, WeightsPayload>) return p.weights.layout();
        else return p.delta.layout();
      },
      payload);
}

std::vector<int> sample_clients(std::size_t clients, std::size_t participants,
                                std::span<const int> malicious, double availability,
                                bool in_window, Rng& rng) {
  if (participants > clients) throw InputError("more participants than clients");
  if (!(availability >= 0.0 && availability <= 1.0)) {
    throw InputError("availability must lie in [0,1]");
  }
  std::vector<int> chosen;
  chosen.reserve(participants);
  if (!in_window || availability == 0.0) {
    std::vector<int> ids(clients);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < participants; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, clients - 1);
      std::swap(ids[i], ids[pick(rng)]);
      chosen.push_back(ids[i]);
    }
  } else {
    if (malicious.empty()) {
      throw ConfigError("biased availability inside the attack window needs malicious clients");
    }
    std::vector<int> bad(malicious.begin(), malicious.end());
    std::sort(bad.begin(), bad.end());
    std::vector<int> good;
    for (std::size_t id = 0; id < clients; ++id) {
      if (!std::binary_search(bad.begin(), bad.end(), static_cast<int>(id))) {
        good.push_back(static_cast<int>(id));
      }
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    auto take = [&](std::vector<int>& pool) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t j = pick(rng);
      chosen.push_back(pool[j]);
      pool[j] = pool.back();
      pool.pop_back();
    };
    for (std::size_t slot = 0; slot < participants; ++slot) {
      const bool want_bad = coin(rng) < availability;
      if ((want_bad && !bad.empty()) || good.empty()) {
        take(bad);
      } else {
        take(good);
      }
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(batch);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

ClientUpdate local_train(const ModelSpec& spec, const ParamVector& global, const Dataset& shard,
                         int client_id, const LocalTrainOptions& opts, Rng& rng,
                         const LocalTrainHooks& hooks) {
  if (shard.empty()) throw DegenerateInputError("empty client shard");
  if (opts.batch == 0 || shard.size() < opts.batch) {
    throw DegenerateInputError("client shard smaller than the local batch size");
  }
  const Dataset data = hooks.poison ? hooks.poison(shard, rng) : shard;
  const std::vector<Example> examples = data.examples();

  ParamVector w = global;
  GradVector accumulated(global.layout());
  std::vector<Example> batch;
  for (std::size_t it = 0; it < opts.local_iters; ++it) {
    batch.clear();
    for (std::size_t i : sample_batch(examples.size(), opts.batch, rng)) {
      batch.push_back(examples[i]);
    }
    GradVector g;
    if (hooks.defense != nullptr && hooks.defense->site() == InjectionSite::kPerExample) {
      g = hooks.defense->sanitize_batch(per_example_grads(spec, w, batch), rng);
    } else {
      g = loss_and_param_grad(spec, w, batch).grad;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= opts.local_lr * g[i];
      accumulated[i] += g[i];
    }
  }
  if (hooks.defense != nullptr && hooks.defense->site() == InjectionSite::kPerClientUpdate) {
    accumulated = hooks.defense->sanitize_update(accumulated, rng);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = global[i] - opts.local_lr * accumulated[i];
  }

  ClientUpdate u;
  u.client_id = client_id;
  u.sample_count = shard.size();
  switch (opts.payload) {
    case PayloadKind::kGradient:
      u.payload = GradientPayload{std::move(accumulated)};
      break;
    case PayloadKind::kWeights:
      u.payload = WeightsPayload{std::move(w)};
      break;
    case PayloadKind::kDelta: {
      ParamVector d(global.layout());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = w[i] - global[i];
      u.payload = DeltaPayload{std::move(d)};
      break;
    }
  }
  return u;
}

namespace {

std::vector<const ClientUpdate*> sorted_updates(std::span<const ClientUpdate> updates,
                                                PayloadKind kind, const ParamLayout* layout) {
  if (updates.empty()) throw DegenerateInputError("no client updates to aggregate");
  std::vector<const ClientUpdate*> out;
  for (const ClientUpdate& u : updates) {
    if (u.kind() != kind) throw InputError("aggregation over mixed payload kinds");
    if (u.sample_count == 0) throw InputError("client update with zero samples");
    if (layout != nullptr && !(u.layout() == *layout)) {
      throw InputError("client update layout does not match the global state");
    }
    if (!(u.layout() == updates.front().layout())) {
      throw InputError("client updates with differing layouts");
    }
    out.push_back(&u);
  }
  std::stable_sort(out.begin(), out.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
    return a->client_id < b->client_id;
  });
  return out;
}

// Sum of (n_k / n) * payload_k, reduced in sorted client-id order.
std::vector<double> weighted_sum(const std::vector<const ClientUpdate*>& ordered) {
  double n = 0.0;
  for (const ClientUpdate* u : ordered) n += static_cast<double>(u->sample_count);
  std::vector<double> acc(ordered.front()->values().size(), 0.0);
  for (const ClientUpdate* u : ordered) {
    const double wk = static_cast<double>(u->sample_count) / n;
    auto v = u->values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wk * v[i];
  }
  return acc;
}

}  // namespace

std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates) {
  std::vector<const ClientUpdate*> ordered;
  for (const ClientUpdate& u : updates) ordered.push_back(&u);
  std::stable_sort(ordered.begin(), ordered.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
    return a->client_id < b->client_id;
  });
  double n = 0.0;
  for (const ClientUpdate* u : ordered) n += static_cast<double>(u->sample_count);
  std::vector<double> w;
  for (const ClientUpdate* u : ordered) w.push_back(static_cast<double>(u->sample_count) / n);
  return w;
}

ParamVector aggregate_fedsgd(const ParamVector& current, double global_lr,
                             std::span<const ClientUpdate> updates) {
  auto ordered = sorted_updates(updates, PayloadKind::kGradient, &current.layout());
  std::vector<double> g = weighted_sum(ordered);
  ParamVector next = current;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= global_lr * g[i];
  return next;
}

ParamVector aggregate_fedavg(std::span<const ClientUpdate> updates) {
  auto ordered = sorted_updates(updates, PayloadKind::kWeights, nullptr);
  return ParamVector(ordered.front()->layout(), weighted_sum(ordered));
}

ParamVector aggregate_delta(const ParamVector& current, std::span<const ClientUpdate> updates) {
  auto ordered = sorted_updates(updates, PayloadKind::kDelta, &current.layout());
  std::vector<double> d = weighted_sum(ordered);
  ParamVector next = current;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] += d[i];
  return next;
}

PayloadKind payload_for(AggregationRule rule) {
  switch (rule) {
    case AggregationRule::kFedSgd: return PayloadKind::kGradient;
    case AggregationRule::kFedAvg: return PayloadKind::kWeights;
    case AggregationRule::kDelta: return PayloadKind::kDelta;
  }
  return PayloadKind::kGradient;
}

ParamVector aggregate(AggregationRule rule, const GlobalState& state,
                      std::span<const ClientUpdate> updates) {
  switch (rule) {
    case AggregationRule::kFedSgd: return aggregate_fedsgd(state.params, state.lr, updates);
    case AggregationRule::kFedAvg: {
      ParamVector next = aggregate_fedavg(updates);
      if (!(next.layout() == state.params.layout())) {
        throw InputError("client update layout does not match the global state");
      }
      return next;
    }
    case AggregationRule::kDelta: return aggregate_delta(state.params, updates);
  }
  return state.params;
}

ParamVector aggregate_excluding(AggregationRule rule, const GlobalState& state,
                                std::span<const ClientUpdate> updates,
                                std::span<const int> excluded) {
  std::vector<ClientUpdate> kept;
  for (const ClientUpdate& u : updates) {
    if (std::find(excluded.begin(), excluded.end(), u.client_id) == excluded.end()) {
      kept.push_back(u);
    }
  }
  if (kept.empty()) return state.params;
  return aggregate(rule, state, kept);
}

namespace {

double mean_or_nan(double sum, std::size_t n) {
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

bool is_dp(const std::optional<NoisePolicy>& p) {
  return p && (p->kind == NoiseKind::kFixedDp || p->kind == NoiseKind::kDynamicDp);
}

// Largest clipped per-example norm over the listed clients' shards.
double first_round_sensitivity(const ModelSpec& spec, const ParamVector& params,
                               std::span<const Dataset> shards, std::span<const int> ids,
                               double bound) {
  double s = 0.0;
  for (int id : ids) {
    const std::vector<Example> ex = shards[static_cast<std::size_t>(id)].examples();
    for (const GradVector& g : per_example_grads(spec, params, ex)) {
      s = std::max(s, std::min(l2_norm(g.values()), bound));
    }
  }
  return s;
}

}  // namespace

RunLog run_federation(const TrainingConfig& config, const ModelSpec& spec,
                      std::span<const Dataset> shards, const Scenario& scenario) {
  config.validate();
  if (shards.size() != config.clients) {
    throw ConfigError("expected " + std::to_string(config.clients) + " shards, got " +
                      std::to_string(shards.size()));
  }
  std::optional<NoisePolicy> policy = scenario.defense;
  if (policy) policy->validate();

  RunLog log;
  if (scenario.initial) {
    log.initial = *scenario.initial;
  } else {
    Rng init_rng = make_rng(config.seed, {kInitStream});
    log.initial = init_params(spec, init_rng, scenario.init_gain);
  }
  const bool evaluate = !scenario.test.empty();
  if (evaluate) log.initial_eval = eval_model(spec, log.initial, scenario.test, scenario.victim_class);
  if (is_dp(policy)) log.ledger.emplace();

  GlobalState state{0, log.initial, scenario.global_lr};
  const std::vector<int> no_malicious;
  const std::vector<int>& malicious = scenario.poison ? scenario.poison->malicious : no_malicious;
  const double availability = scenario.poison ? scenario.poison->spec.availability : 0.0;
  const LocalTrainOptions opts{config.local_iters, config.batch, config.local_lr,
                               payload_for(scenario.rule)};

  for (std::size_t t = 0; t < config.rounds; ++t) {
    const bool window = scenario.poison && scenario.poison->in_window(t);
    Rng sampler = make_rng(config.seed, {kSamplerStream, t});
    RoundLog rl;
    rl.round = t + 1;
    rl.attack_window = window;
    rl.participants =
        sample_clients(config.clients, config.participants, malicious, availability, window, sampler);

    if (t == 0 && policy && policy->kind == NoiseKind::kDynamicDp &&
        scenario.dynamic_reference_sigma) {
      const double s1 = first_round_sensitivity(spec, state.params, shards, rl.participants,
                                                policy->clip);
      policy->sigma0 = std::max(policy->sigma_final,
                                dynamic_initial_scale(policy->clip, *scenario.dynamic_reference_sigma, s1));
      log.dynamic_sigma0 = policy->sigma0;
    }
    const double sigma = policy ? noise_scale_at(*policy, t, config.rounds) : 0.0;
    rl.sigma = sigma;

    std::vector<ClientUpdate> updates;
    double norm_sum = 0, benign_sum = 0, poisoned_sum = 0, s_sum = 0;
    std::size_t benign_n = 0, poisoned_n = 0, s_n = 0;
    for (int id : rl.participants) {
      Rng rng = make_rng(config.seed, {kClientStream, static_cast<std::uint64_t>(id), t});
      const bool poisoned = window && scenario.poison->is_malicious(id);
      if (scenario.poison && scenario.poison->is_malicious(id)) ++rl.malicious_participants;
      LocalTrainHooks hooks;
      if (poisoned) {
        const PoisonSpec& ps = scenario.poison->spec;
        hooks.poison = [&ps](const Dataset& d, Rng& r) { return poison_shard(ps, d, r); };
      }
      std::optional<PolicyDefense> defense;
      if (policy && policy->kind != NoiseKind::kNone) {
        defense.emplace(*policy, sigma);
        hooks.defense = &*defense;
      }
      ClientUpdate u = local_train(spec, state.params, shards[static_cast<std::size_t>(id)], id,
                                   opts, rng, hooks);
      double norm;
      if (u.kind() == PayloadKind::kWeights) {
        auto v = u.values();
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) acc += (v[i] - state.params[i]) * (v[i] - state.params[i]);
        norm = std::sqrt(acc);
      } else {
        norm = l2_norm(u.values());
      }
      norm_sum += norm;
      if (poisoned) {
        poisoned_sum += norm;
        ++poisoned_n;
      } else {
        benign_sum += norm;
        ++benign_n;
      }
      if (defense && defense->max_sensitivity()) {
        s_sum += *defense->max_sensitivity();
        ++s_n;
      }
      rl.poisoned.push_back(poisoned);
      updates.push_back(std::move(u));
    }
    rl.mean_update_norm = norm_sum / static_cast<double>(updates.size());
    if (!std::isfinite(rl.mean_update_norm)) throw NumericError("client updates became non-finite");
    rl.mean_benign_norm = mean_or_nan(benign_sum, benign_n);
    rl.mean_poisoned_norm = mean_or_nan(poisoned_sum, poisoned_n);
    rl.sensitivity = s_n == 0 ? 0.0 : s_sum / static_cast<double>(s_n);
    rl.zeta = rl.sensitivity * sigma;

    if (scenario.screen) rl.flagged = scenario.screen(t, state.params, updates);
    state.params = aggregate_excluding(scenario.rule, state, updates, rl.flagged);
    state.round = t + 1;
    for (double v : state.params.values()) {
      if (!std::isfinite(v)) throw NumericError("global parameters became non-finite");
    }

    if (log.ledger && sigma > 0.0) log.ledger->step(sigma);
    rl.epsilon = log.ledger && !log.ledger->sigma_history().empty()
                     ? log.ledger->epsilon()
                     : 0.0;
    if (evaluate && (scenario.evaluate_every_round || t + 1 == config.rounds)) {
      rl.eval = eval_model(spec, state.params, scenario.test, scenario.victim_class);
    }
    if (scenario.record_params) rl.params = state.params;
    if (scenario.record_updates) {
      rl.updates = std::move(updates);
    } else {
      rl.poisoned.clear();
    }
    log.rounds.push_back(std::move(rl));
  }
  log.final_params = state.params;
  return log;
}

}  // namespace fllab
