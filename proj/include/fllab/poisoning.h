#pragma once

// Targeted data-poisoning transforms and the compromised-client schedule.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fllab/data.h"
#include "fllab/rng.h"

namespace fllab {

enum class PoisonKind { kDirtyLabel, kBackdoor, kCleanLabel };

struct Trigger {
  Tensor patch;  // added to the image, then clamped to [0,1]
  std::size_t row = 0;
  std::size_t col = 0;
};

struct PoisonSpec {
  PoisonKind kind = PoisonKind::kDirtyLabel;
  std::size_t source = 1;
  std::size_t target = 9;
  std::optional<Trigger> trigger;    // backdoor
  double blend = 0.3;                // clean-label beta
  std::optional<Tensor> exemplar;    // clean-label x*, fixed at plan time
  double compromised_fraction = 0.1;  // lambda
  double availability = 0.9;          // alpha
  std::size_t window_start = 0;       // first poisoned round (inclusive)
  std::size_t window_end = 0;         // last poisoned round (exclusive)
  double poisoned_fraction = 0.5;     // share of a shard touched by backdoor / clean-label

  // Throws ConfigError on inconsistent values. `rounds` bounds the window.
  void validate(std::size_t rounds) const;
  bool in_window(std::size_t round) const { return round >= window_start && round < window_end; }
};

Dataset flip_labels(const Dataset& shard, std::size_t source, std::size_t target);

// Adds the trigger patch to the listed samples (all when `which` is empty)
// and relabels them `target`.
Dataset apply_backdoor(const Dataset& shard, const Trigger& trigger, std::size_t target,
                       const std::vector<std::size_t>& which = {});

// x' = clamp(x + beta * x*) on the listed samples (all when empty); labels kept.
Dataset blend_clean_label(const Dataset& shard, const Tensor& exemplar, double beta,
                          const std::vector<std::size_t>& which = {});

// Square trigger of `size` x `size` ones at (row, col) for images of `shape`.
Trigger square_trigger(const Shape& shape, std::size_t size, std::size_t row, std::size_t col,
                       double intensity = 1.0);

struct PoisonPlan {
  PoisonSpec spec;
  std::vector<int> malicious;  // sorted client ids

  bool is_malicious(int client) const;
  bool in_window(std::size_t round) const { return spec.in_window(round); }
};

// Marks floor(lambda N) clients malicious. For clean-label attacks without an
// exemplar, one target-class sample of `pool` becomes x*.
PoisonPlan poison_plan(PoisonSpec spec, std::size_t clients, std::size_t rounds, Rng& rng,
                       const Dataset* pool = nullptr);

// The transform a malicious client applies to its shard before training.
Dataset poison_shard(const PoisonSpec& spec, const Dataset& shard, Rng& rng);

std::string to_string(PoisonKind kind);

}  // namespace fllab
