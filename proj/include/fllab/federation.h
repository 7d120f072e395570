#pragma once

// The federated round loop: availability-biased client sampling, local SGD
// with poison/defense hooks, and the three server aggregation rules.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fllab/data.h"
#include "fllab/metrics.h"
#include "fllab/model.h"
#include "fllab/poisoning.h"
#include "fllab/privacy.h"
#include "fllab/rng.h"

namespace fllab {

struct GlobalState {
  std::size_t round = 0;
  ParamVector params;
  double lr = 1.0;  // global learning rate
};

struct TrainingConfig {
  std::size_t clients = 1;       // N
  std::size_t participants = 1;  // K_t
  std::size_t rounds = 1;        // T
  std::size_t local_iters = 1;   // L
  std::size_t batch = 1;         // B
  double local_lr = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class PayloadKind { kGradient, kWeights, kDelta };

struct GradientPayload {
  GradVector grad;
};
struct WeightsPayload {
  ParamVector weights;
};
struct DeltaPayload {
  ParamVector delta;
};
using Payload = std::variant<GradientPayload, WeightsPayload, DeltaPayload>;

struct ClientUpdate {
  int client_id = 0;
  std::size_t sample_count = 0;  // n_k
  Payload payload;

  PayloadKind kind() const;
  std::span<const double> values() const;
  const ParamLayout& layout() const;
};

// Without the window: uniform sampling without replacement. Inside it, each
// slot is malicious with probability `availability` (uniform over the
// remaining malicious ids), otherwise honest; a pool that runs dry hands the
// slot to the other pool.
std::vector<int> sample_clients(std::size_t clients, std::size_t participants,
                                std::span<const int> malicious, double availability,
                                bool in_window, Rng& rng);

struct LocalTrainOptions {
  std::size_t local_iters = 1;
  std::size_t batch = 1;
  double local_lr = 0.1;
  PayloadKind payload = PayloadKind::kGradient;
};

struct LocalTrainHooks {
  // Applied to the shard before training.
  std::function<Dataset(const Dataset&, Rng&)> poison;
  GradientDefense* defense = nullptr;
};

// L seeded SGD iterations on batches of B. The gradient payload is the sum of
// the applied step gradients, i.e. (w(t) - w_k(t+1)) / lr.
ClientUpdate local_train(const ModelSpec& spec, const ParamVector& global, const Dataset& shard,
                         int client_id, const LocalTrainOptions& opts, Rng& rng,
                         const LocalTrainHooks& hooks = {});

ParamVector aggregate_fedsgd(const ParamVector& current, double global_lr,
                             std::span<const ClientUpdate> updates);
ParamVector aggregate_fedavg(std::span<const ClientUpdate> updates);
ParamVector aggregate_delta(const ParamVector& current, std::span<const ClientUpdate> updates);

enum class AggregationRule { kFedSgd, kFedAvg, kDelta };

PayloadKind payload_for(AggregationRule rule);

ParamVector aggregate(AggregationRule rule, const GlobalState& state,
                      std::span<const ClientUpdate> updates);

// Aggregates after dropping the excluded clients; weights renormalize over
// the rest. With nothing left the state's parameters are returned unchanged.
ParamVector aggregate_excluding(AggregationRule rule, const GlobalState& state,
                                std::span<const ClientUpdate> updates,
                                std::span<const int> excluded);

// n_k / n in sorted-client-id order.
std::vector<double> aggregation_weights(std::span<const ClientUpdate> updates);

// Server-side screening hook: returns the client ids to drop this round.
// `global` is the model the updates were computed from.
using UpdateScreen = std::function<std::vector<int>(
    std::size_t round, const ParamVector& global, std::span<const ClientUpdate> updates)>;

struct Scenario {
  AggregationRule rule = AggregationRule::kFedAvg;
  double global_lr = 1.0;
  std::optional<ParamVector> initial;
  double init_gain = 1.0;
  Dataset test;
  std::size_t victim_class = 0;
  std::optional<PoisonPlan> poison;
  std::optional<NoisePolicy> defense;
  // When set with a dynamic_dp policy, sigma0 is replaced by
  // ceil(C * reference_sigma / S1), S1 being the first-round l2-max.
  std::optional<double> dynamic_reference_sigma;
  UpdateScreen screen;
  bool record_updates = false;
  bool record_params = false;
  bool evaluate_every_round = true;
};

struct RoundLog {
  std::size_t round = 0;  // 1-based: state after this many aggregations
  std::vector<int> participants;
  std::size_t malicious_participants = 0;
  bool attack_window = false;
  double mean_update_norm = 0.0;
  double mean_benign_norm = 0.0;    // NaN when no benign participant
  double mean_poisoned_norm = 0.0;  // NaN when no poisoned participant
  double sigma = 0.0;
  double sensitivity = 0.0;  // mean S over participants
  double zeta = 0.0;         // mean S * sigma_t
  double epsilon = 0.0;
  std::vector<int> flagged;
  std::optional<EvalReport> eval;
  std::optional<ParamVector> params;
  std::vector<ClientUpdate> updates;
  std::vector<bool> poisoned;  // parallel to updates: poisoned data was used
};

struct RunLog {
  ParamVector initial;
  EvalReport initial_eval;
  std::vector<RoundLog> rounds;
  ParamVector final_params;
  double dynamic_sigma0 = 0.0;
  std::optional<PrivacyLedger> ledger;
};

RunLog run_federation(const TrainingConfig& config, const ModelSpec& spec,
                      std::span<const Dataset> shards, const Scenario& scenario);

}  // namespace fllab
