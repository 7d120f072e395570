#include "fllab/privacy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fllab/errors.h"

namespace fllab {

void NoisePolicy::validate() const {
  if (!(compression_ratio >= 0.0 && compression_ratio <= 1.0)) {
    throw ConfigError("compression ratio must lie in [0,1]");
  }
  if (!(gaussian_variance >= 0.0)) throw ConfigError("gaussian variance must be non-negative");
  if (kind == NoiseKind::kFixedDp || kind == NoiseKind::kDynamicDp) {
    if (!(clip > 0.0)) throw ConfigError("clipping bound must be positive");
    if (!(sigma0 >= 0.0)) throw ConfigError("noise scale must be non-negative");
  }
  if (kind == NoiseKind::kDynamicDp) {
    if (!(sigma_final > 0.0 && sigma0 >= sigma_final)) {
      throw ConfigError("decaying schedule needs sigma0 >= sigma_final > 0");
    }
    if (decay == DecayKind::kStaircase && stages == 0) {
      throw ConfigError("staircase decay needs at least one stage");
    }
  }
}

GradVector compress(const GradVector& g, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("compression ratio must lie in [0,1]");
  const std::size_t dim = g.size();
  const auto drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(dim)));
  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(g[a]) < std::abs(g[b]);
  });
  GradVector out = g;
  for (std::size_t i = 0; i < drop; ++i) out[order[i]] = 0.0;
  return out;
}

GradVector add_gaussian(const GradVector& g, double variance, Rng& rng) {
  if (!(variance >= 0.0)) throw InputError("variance must be non-negative");
  GradVector out = g;
  if (variance == 0.0) return out;
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  for (double& v : out.values()) v += n(rng);
  return out;
}

GradVector clip(const GradVector& g, double bound) {
  if (!(bound > 0.0)) throw InputError("clipping bound must be positive");
  const double norm = l2_norm(g.values());
  GradVector out = g;
  if (norm > bound) {
    const double s = bound / norm;
    for (double& v : out.values()) v *= s;
  }
  return out;
}

SensitivityRecord l2max_sensitivity(std::span<const GradVector> per_example, double bound) {
  if (per_example.empty()) throw DegenerateInputError("l2-max sensitivity of an empty batch");
  if (!(bound > 0.0)) throw InputError("clipping bound must be positive");
  double m = 0.0;
  for (const GradVector& g : per_example) m = std::max(m, l2_norm(g.values()));
  return {std::min(m, bound), SensitivitySource::kL2Max};
}

double noise_scale_at(const NoisePolicy& policy, std::size_t t, std::size_t total_rounds) {
  if (t > total_rounds) throw InputError("round index beyond the schedule");
  const double s0 = policy.sigma0;
  if (policy.kind != NoiseKind::kDynamicDp || total_rounds == 0) return s0;
  const double sT = policy.sigma_final;
  const double T = static_cast<double>(total_rounds);
  auto expo = [&](double tt) { return s0 * std::pow(sT / s0, tt / T); };
  switch (policy.decay) {
    case DecayKind::kLinear:
      return s0 - (s0 - sT) * static_cast<double>(t) / T;
    case DecayKind::kExponential:
      return expo(static_cast<double>(t));
    case DecayKind::kStaircase: {
      const std::size_t k = policy.stages;
      const std::size_t stage = std::min(k - 1, t * k / total_rounds);
      return expo(static_cast<double>(stage) * T / static_cast<double>(k));
    }
    case DecayKind::kCyclic: {
      const std::size_t period =
          policy.period > 0 ? policy.period : std::max<std::size_t>(1, total_rounds / 5);
      const std::size_t start = (t / period) * period;
      const double envelope = expo(static_cast<double>(start));
      const double phase = static_cast<double>(t - start) / static_cast<double>(period);
      return envelope - (envelope - sT) * phase;
    }
  }
  return s0;
}

double dynamic_initial_scale(double clip_bound, double fixed_sigma, double first_sensitivity) {
  if (!(first_sensitivity > 0.0)) throw InputError("first-round sensitivity must be positive");
  return std::ceil(clip_bound * fixed_sigma / first_sensitivity);
}

namespace {

void add_noise(GradVector& g, double stddev, Rng& rng) {
  if (stddev <= 0.0) return;
  std::normal_distribution<double> n(0.0, stddev);
  for (double& v : g.values()) v += n(rng);
}

bool is_dp(NoiseKind k) { return k == NoiseKind::kFixedDp || k == NoiseKind::kDynamicDp; }

void require_dp(const NoisePolicy& policy) {
  if (!is_dp(policy.kind)) throw ConfigError("dp_perturb needs a fixed_dp or dynamic_dp policy");
  if (!(policy.clip > 0.0)) throw ConfigError("clipping bound must be positive");
}

}  // namespace

Perturbed dp_perturb(std::span<const GradVector> per_example, const NoisePolicy& policy,
                     double sigma_t, Rng& rng) {
  require_dp(policy);
  if (per_example.empty()) throw DegenerateInputError("dp_perturb of an empty batch");
  std::vector<GradVector> clipped;
  clipped.reserve(per_example.size());
  for (const GradVector& g : per_example) clipped.push_back(clip(g, policy.clip));
  SensitivityRecord s = policy.kind == NoiseKind::kDynamicDp
                            ? l2max_sensitivity(clipped, policy.clip)
                            : SensitivityRecord{policy.clip, SensitivitySource::kFixedClip};
  GradVector mean(per_example.front().layout());
  const double inv = 1.0 / static_cast<double>(clipped.size());
  for (GradVector& g : clipped) {
    add_noise(g, sigma_t * s.value, rng);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g[i] * inv;
  }
  return {std::move(mean), s};
}

Perturbed dp_perturb(const GradVector& update, const NoisePolicy& policy, double sigma_t,
                     Rng& rng) {
  require_dp(policy);
  GradVector g = clip(update, policy.clip);
  SensitivityRecord s =
      policy.kind == NoiseKind::kDynamicDp
          ? SensitivityRecord{std::min(l2_norm(g.values()), policy.clip), SensitivitySource::kL2Max}
          : SensitivityRecord{policy.clip, SensitivitySource::kFixedClip};
  add_noise(g, sigma_t * s.value, rng);
  return {std::move(g), s};
}

PolicyDefense::PolicyDefense(NoisePolicy policy, double sigma_t)
    : policy_(std::move(policy)), sigma_t_(sigma_t) {
  policy_.validate();
}

void PolicyDefense::note(double s) { max_s_ = max_s_ ? std::max(*max_s_, s) : s; }

GradVector PolicyDefense::sanitize_one(const GradVector& g, Rng& rng) const {
  switch (policy_.kind) {
    case NoiseKind::kCompression:
      return compress(g, policy_.compression_ratio);
    case NoiseKind::kGaussian:
      return add_gaussian(g, policy_.gaussian_variance, rng);
    default:
      return g;
  }
}

GradVector PolicyDefense::sanitize_batch(std::span<const GradVector> per_example, Rng& rng) {
  if (per_example.empty()) throw DegenerateInputError("sanitize_batch of an empty batch");
  if (is_dp(policy_.kind)) {
    Perturbed p = dp_perturb(per_example, policy_, sigma_t_, rng);
    note(p.sensitivity.value);
    return std::move(p.grad);
  }
  GradVector mean(per_example.front().layout());
  const double inv = 1.0 / static_cast<double>(per_example.size());
  for (const GradVector& g : per_example) {
    GradVector s = sanitize_one(g, rng);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i] * inv;
  }
  return mean;
}

GradVector PolicyDefense::sanitize_update(const GradVector& update, Rng& rng) {
  if (is_dp(policy_.kind)) {
    Perturbed p = dp_perturb(update, policy_, sigma_t_, rng);
    note(p.sensitivity.value);
    return std::move(p.grad);
  }
  return sanitize_one(update, rng);
}

PrivacyLedger::PrivacyLedger(double delta, std::vector<double> orders)
    : delta_(delta), orders_(std::move(orders)), accumulated_(orders_.size(), 0.0) {
  if (!(delta_ > 0.0 && delta_ < 1.0)) throw ConfigError("delta must lie in (0,1)");
  if (orders_.empty()) throw ConfigError("empty Renyi order grid");
  for (double a : orders_) {
    if (!(a > 1.0)) throw ConfigError("Renyi orders must exceed 1");
  }
}

std::vector<double> PrivacyLedger::default_orders() {
  std::vector<double> o{1.5};
  for (int a = 2; a <= 64; ++a) o.push_back(a);
  return o;
}

double PrivacyLedger::step_divergence(double order, double sigma) {
  return order / (2.0 * sigma * sigma);
}

void PrivacyLedger::step(double sigma) {
  if (!(sigma > 0.0)) throw InputError("ledger step needs a positive noise scale");
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    accumulated_[i] += step_divergence(orders_[i], sigma);
  }
  sigmas_.push_back(sigma);
}

double PrivacyLedger::epsilon() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < orders_.size(); ++i) {
    best = std::min(best, accumulated_[i] + std::log(1.0 / delta_) / (orders_[i] - 1.0));
  }
  return best;
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kCompression: return "compression";
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kFixedDp: return "fixed_dp";
    case NoiseKind::kDynamicDp: return "dynamic_dp";
  }
  return "none";
}

std::string to_string(DecayKind kind) {
  switch (kind) {
    case DecayKind::kLinear: return "linear";
    case DecayKind::kStaircase: return "staircase";
    case DecayKind::kExponential: return "exponential";
    case DecayKind::kCyclic: return "cyclic";
  }
  return "exponential";
}

std::string to_string(InjectionSite site) {
  return site == InjectionSite::kPerExample ? "per_example" : "per_client_update";
}

}  // namespace fllab
