#pragma once

// Gradient-matching reconstruction of private training inputs from a stolen
// gradient, at the client-SGD and server-aggregation attack surfaces.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fllab/errors.h"
#include "fllab/model.h"
#include "fllab/rng.h"

namespace fllab {

enum class AttackSurface { kClientSgd, kServerAggregation };

struct TargetGradient {
  AttackSurface surface = AttackSurface::kClientSgd;
  GradVector grad;
  int client_id = -1;
  int round = -1;
};

enum class InitStrategy { kRandom, kPatterned4, kPatterned16, kBinary, kColor, kExemplar };
enum class AttackOptimizer { kGradientDescent, kAdam };

struct AttackConfig {
  InitStrategy init = InitStrategy::kRandom;
  std::size_t max_iters = 1000;
  double loss_threshold = 0.0;
  double lr = 0.1;
  AttackOptimizer optimizer = AttackOptimizer::kGradientDescent;
  std::uint64_t seed = 0;
  bool clamp = true;           // project x_rec onto [0,1] after every step
  double success_mse = 0.4;    // reconstruction counts as leaked below this MSE
  std::size_t batch = 1;       // dummy slots, at most 4

  void validate() const;
};

struct ReconResult {
  std::vector<Tensor> slots;  // reconstructed inputs, one per dummy slot
  std::vector<std::size_t> labels;
  std::size_t iterations = 0;  // optimizer steps taken
  double final_distance = 0.0;
  std::vector<double> trace;  // D before every step, plus the final value
  std::optional<double> mse;
  std::optional<double> ssim;
  bool success = false;
  // First iteration whose D fell below the loss threshold.
  std::optional<std::size_t> converged_at;

  const Tensor& x_rec() const { return slots.front(); }
  std::size_t y_rec() const { return labels.front(); }
};

// Raised when D or its derivative turns non-finite; carries the partial run.
class ReconstructionAborted : public NumericError {
 public:
  ReconstructionAborted(const std::string& what, ReconResult partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const ReconResult& partial() const { return partial_; }

 private:
  ReconResult partial_;
};

// The class whose head-bias gradient entry is the unique negative one;
// otherwise the entry of largest magnitude (lowest index on ties).
std::size_t infer_label(const TargetGradient& target, const ModelSpec& spec);

// For batch attacks: the `count` most negative head-bias entries, topped up by
// magnitude when fewer are negative.
std::vector<std::size_t> infer_labels(const TargetGradient& target, const ModelSpec& spec,
                                      std::size_t count);

Tensor init_seed(InitStrategy strategy, const Shape& shape, const Tensor* exemplar, Rng& rng);

ReconResult reconstruct(const ModelSpec& spec, const ParamVector& params,
                        const TargetGradient& target, const AttackConfig& cfg,
                        const Tensor* ground_truth = nullptr, const Tensor* exemplar = nullptr);

struct LeakageScore {
  double mse = 0.0;
  double ssim = 0.0;
  bool success = false;
};

LeakageScore evaluate_leakage(const Tensor& x_rec, const Tensor& x, double success_mse = 0.4);

std::string to_string(InitStrategy s);
InitStrategy parse_init_strategy(const std::string& s);

}  // namespace fllab
