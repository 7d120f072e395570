#pragma once

// Gradient sanitization: compression, Gaussian noise, fixed and dynamic
// differentially private perturbation, and Renyi-DP accounting.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fllab/model.h"
#include "fllab/rng.h"

namespace fllab {

enum class NoiseKind { kNone, kCompression, kGaussian, kFixedDp, kDynamicDp };
enum class DecayKind { kLinear, kStaircase, kExponential, kCyclic };
enum class InjectionSite { kPerExample, kPerClientUpdate };

struct NoisePolicy {
  NoiseKind kind = NoiseKind::kNone;
  double compression_ratio = 0.0;
  double gaussian_variance = 0.0;
  double clip = 4.0;      // C
  double sigma0 = 6.0;    // fixed_dp uses this as its constant scale
  double sigma_final = 3.0;
  DecayKind decay = DecayKind::kExponential;
  std::size_t stages = 4;
  std::size_t period = 0;  // 0 means max(1, T/5)
  InjectionSite site = InjectionSite::kPerExample;

  // Throws ConfigError on inconsistent values.
  void validate() const;
};

enum class SensitivitySource { kFixedClip, kL2Max };

struct SensitivityRecord {
  double value = 0.0;  // S
  SensitivitySource source = SensitivitySource::kFixedClip;
  int round = -1;
  int client = -1;
};

// Zeroes the floor(ratio * dim) smallest-magnitude coordinates; ties go to
// the lower index first.
GradVector compress(const GradVector& g, double ratio);

GradVector add_gaussian(const GradVector& g, double variance, Rng& rng);

// Rescales to l2 norm C when the norm exceeds C.
GradVector clip(const GradVector& g, double bound);

// S = min(max_i ||g_i||, C) over already-clipped per-example gradients.
SensitivityRecord l2max_sensitivity(std::span<const GradVector> per_example, double bound);

// Noise scale at round t of T under the policy's decay. fixed_dp returns
// sigma0 for every t.
double noise_scale_at(const NoisePolicy& policy, std::size_t t, std::size_t total_rounds);

// Initial dynamic scale mirroring the fixed setting: ceil(C * sigma / S1).
double dynamic_initial_scale(double clip_bound, double fixed_sigma, double first_sensitivity);

struct Perturbed {
  GradVector grad;
  SensitivityRecord sensitivity;
};

// Per-example site: clip each gradient to C, pick S (C for fixed_dp, l2-max
// for dynamic_dp), add N(0, (sigma_t S)^2) to each, then average.
Perturbed dp_perturb(std::span<const GradVector> per_example, const NoisePolicy& policy,
                     double sigma_t, Rng& rng);

// Per-update site: clip the update to C and add N(0, (sigma_t S)^2) once.
Perturbed dp_perturb(const GradVector& update, const NoisePolicy& policy, double sigma_t,
                     Rng& rng);

// Hook applied by local training. The per-example entry point turns one
// batch of per-example gradients into the gradient used for the SGD step; the
// update entry point sanitizes the accumulated payload.
class GradientDefense {
 public:
  virtual ~GradientDefense() = default;
  virtual InjectionSite site() const = 0;
  virtual GradVector sanitize_batch(std::span<const GradVector> per_example, Rng& rng) = 0;
  virtual GradVector sanitize_update(const GradVector& update, Rng& rng) = 0;
};

// GradientDefense driven by a NoisePolicy at a fixed round noise scale.
// Remembers the largest sensitivity it used.
class PolicyDefense : public GradientDefense {
 public:
  PolicyDefense(NoisePolicy policy, double sigma_t);

  InjectionSite site() const override { return policy_.site; }
  GradVector sanitize_batch(std::span<const GradVector> per_example, Rng& rng) override;
  GradVector sanitize_update(const GradVector& update, Rng& rng) override;

  double sigma() const { return sigma_t_; }
  std::optional<double> max_sensitivity() const { return max_s_; }

 private:
  GradVector sanitize_one(const GradVector& g, Rng& rng) const;
  void note(double s);

  NoisePolicy policy_;
  double sigma_t_;
  std::optional<double> max_s_;
};

// Plain Gaussian-mechanism Renyi accountant over a fixed order grid.
class PrivacyLedger {
 public:
  explicit PrivacyLedger(double delta = 1e-5, std::vector<double> orders = default_orders());

  static std::vector<double> default_orders();  // {1.5, 2, 3, ..., 64}

  void step(double sigma);
  double epsilon() const;
  // Renyi divergence of a single Gaussian step at `order`: order / (2 sigma^2).
  static double step_divergence(double order, double sigma);

  double delta() const { return delta_; }
  const std::vector<double>& orders() const { return orders_; }
  const std::vector<double>& accumulated() const { return accumulated_; }
  const std::vector<double>& sigma_history() const { return sigmas_; }

 private:
  double delta_;
  std::vector<double> orders_;
  std::vector<double> accumulated_;
  std::vector<double> sigmas_;
};

inline void ledger_step(PrivacyLedger& ledger, double sigma) { ledger.step(sigma); }
inline double ledger_epsilon(const PrivacyLedger& ledger) { return ledger.epsilon(); }

std::string to_string(NoiseKind kind);
std::string to_string(DecayKind kind);
std::string to_string(InjectionSite site);

}  // namespace fllab
