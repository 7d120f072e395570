#include "fllab/poisoning.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fllab/errors.h"

namespace fllab {

void PoisonSpec::validate(std::size_t rounds) const {
  if (source == target) throw ConfigError("poisoning source and target classes must differ");
  if (kind == PoisonKind::kCleanLabel && !(blend >= 0.0 && blend <= 0.5)) {
    throw ConfigError("clean-label blend must lie in [0, 0.5]");
  }
  if (kind == PoisonKind::kBackdoor && !trigger) throw ConfigError("backdoor needs a trigger");
  if (!(compromised_fraction > 0.0 && compromised_fraction < 1.0)) {
    throw ConfigError("compromised fraction must lie in (0,1)");
  }
  if (!(availability >= 0.0 && availability <= 1.0)) {
    throw ConfigError("availability must lie in [0,1]");
  }
  if (window_start > window_end || window_end > rounds) {
    throw ConfigError("attack window must lie within [0, T]");
  }
  if (!(poisoned_fraction >= 0.0 && poisoned_fraction <= 1.0)) {
    throw ConfigError("poisoned fraction must lie in [0,1]");
  }
}

Dataset flip_labels(const Dataset& shard, std::size_t source, std::size_t target) {
  if (target >= shard.classes) throw InputError("target class out of range");
  Dataset out = shard;
  for (std::size_t& y : out.labels) {
    if (y == source) y = target;
  }
  return out;
}

namespace {

std::vector<std::size_t> all_or(const std::vector<std::size_t>& which, std::size_t n) {
  if (!which.empty()) return which;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

}  // namespace

Dataset apply_backdoor(const Dataset& shard, const Trigger& trigger, std::size_t target,
                       const std::vector<std::size_t>& which) {
  if (target >= shard.classes) throw InputError("target class out of range");
  Dataset out = shard;
  const Shape& ps = trigger.patch.shape();
  if (ps.size() != 2) throw InputError("trigger patch must be two-dimensional");
  for (std::size_t i : all_or(which, shard.size())) {
    Tensor& img = out.images.at(i);
    const Shape& s = img.shape();
    if (s.size() != 2 || trigger.row + ps[0] > s[0] || trigger.col + ps[1] > s[1]) {
      throw InputError("trigger patch exceeds image bounds");
    }
    for (std::size_t r = 0; r < ps[0]; ++r) {
      for (std::size_t c = 0; c < ps[1]; ++c) {
        double& px = img[(trigger.row + r) * s[1] + trigger.col + c];
        px = std::clamp(px + trigger.patch[r * ps[1] + c], 0.0, 1.0);
      }
    }
    out.labels[i] = target;
  }
  return out;
}

Dataset blend_clean_label(const Dataset& shard, const Tensor& exemplar, double beta,
                          const std::vector<std::size_t>& which) {
  Dataset out = shard;
  for (std::size_t i : all_or(which, shard.size())) {
    Tensor& img = out.images.at(i);
    if (img.shape() != exemplar.shape()) throw InputError("exemplar shape does not match image");
    for (std::size_t p = 0; p < img.size(); ++p) {
      img[p] = std::clamp(img[p] + beta * exemplar[p], 0.0, 1.0);
    }
  }
  return out;
}

Trigger square_trigger(const Shape& shape, std::size_t size, std::size_t row, std::size_t col,
                       double intensity) {
  if (shape.size() != 2 || row + size > shape[0] || col + size > shape[1]) {
    throw InputError("trigger patch exceeds image bounds");
  }
  return Trigger{Tensor({size, size}, intensity), row, col};
}

bool PoisonPlan::is_malicious(int client) const {
  return std::binary_search(malicious.begin(), malicious.end(), client);
}

PoisonPlan poison_plan(PoisonSpec spec, std::size_t clients, std::size_t rounds, Rng& rng,
                       const Dataset* pool) {
  spec.validate(rounds);
  const auto count = static_cast<std::size_t>(
      std::floor(spec.compromised_fraction * static_cast<double>(clients)));
  if (count == 0) throw ConfigError("compromised fraction selects no client");
  std::vector<int> ids(clients);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());

  if (spec.kind == PoisonKind::kCleanLabel && !spec.exemplar) {
    if (pool == nullptr) throw ConfigError("clean-label plan needs an exemplar or a data pool");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pool->size(); ++i) {
      if (pool->labels[i] == spec.target) candidates.push_back(i);
    }
    if (candidates.empty()) throw ConfigError("no target-class sample to use as exemplar");
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    spec.exemplar = pool->images[candidates[pick(rng)]];
  }
  return PoisonPlan{std::move(spec), std::move(ids)};
}

Dataset poison_shard(const PoisonSpec& spec, const Dataset& shard, Rng& rng) {
  if (spec.kind == PoisonKind::kDirtyLabel) return flip_labels(shard, spec.source, spec.target);
  const auto n = static_cast<std::size_t>(
      std::floor(spec.poisoned_fraction * static_cast<double>(shard.size())));
  if (n == 0) return shard;
  std::vector<std::size_t> idx(shard.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  if (spec.kind == PoisonKind::kBackdoor) return apply_backdoor(shard, *spec.trigger, spec.target, idx);
  if (!spec.exemplar) throw ConfigError("clean-label poisoning without an exemplar");
  return blend_clean_label(shard, *spec.exemplar, spec.blend, idx);
}

std::string to_string(PoisonKind kind) {
  switch (kind) {
    case PoisonKind::kDirtyLabel: return "dirty_label";
    case PoisonKind::kBackdoor: return "backdoor";
    case PoisonKind::kCleanLabel: return "clean_label";
  }
  return "dirty_label";
}

}  // namespace fllab
