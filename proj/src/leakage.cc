#include "fllab/leakage.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fllab/metrics.h"

namespace fllab {

void AttackConfig::validate() const {
  if (max_iters == 0) throw ConfigError("attack needs at least one iteration");
  if (!(lr > 0.0)) throw ConfigError("attack learning rate must be positive");
  if (!(loss_threshold >= 0.0)) throw ConfigError("loss threshold must be non-negative");
  if (batch == 0 || batch > 4) throw ConfigError("batch reconstruction supports 1 to 4 slots");
}

namespace {

std::span<const double> head_bias(const TargetGradient& target, const ModelSpec& spec) {
  if (!(target.grad.layout() == ParamLayout(spec))) {
    throw InputError("target gradient layout does not match the model");
  }
  return target.grad.bias(spec.depth() - 1);
}

}  // namespace

std::size_t infer_label(const TargetGradient& target, const ModelSpec& spec) {
  std::span<const double> b = head_bias(target, spec);
  std::size_t negatives = 0, neg_at = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] < 0.0) {
      ++negatives;
      neg_at = i;
    }
  }
  if (negatives == 1) return neg_at;
  std::size_t best = 0;
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (std::abs(b[i]) > std::abs(b[best])) best = i;
  }
  return best;
}

std::vector<std::size_t> infer_labels(const TargetGradient& target, const ModelSpec& spec,
                                      std::size_t count) {
  if (count == 1) return {infer_label(target, spec)};
  std::span<const double> b = head_bias(target, spec);
  if (count > b.size()) throw InputError("more dummy slots than classes");
  std::vector<std::size_t> idx(b.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) { return b[a] < b[c]; });
  std::vector<std::size_t> out;
  for (std::size_t i : idx) {
    if (out.size() == count || b[i] >= 0.0) break;
    out.push_back(i);
  }
  if (out.size() < count) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (std::find(out.begin(), out.end(), i) == out.end()) rest.push_back(i);
    }
    std::stable_sort(rest.begin(), rest.end(),
                     [&](std::size_t a, std::size_t c) { return std::abs(b[a]) > std::abs(b[c]); });
    for (std::size_t i : rest) {
      if (out.size() == count) break;
      out.push_back(i);
    }
  }
  return out;
}

Tensor init_seed(InitStrategy strategy, const Shape& shape, const Tensor* exemplar, Rng& rng) {
  if (strategy == InitStrategy::kExemplar) {
    if (exemplar == nullptr) throw ConfigError("exemplar initialization needs an exemplar image");
    if (exemplar->shape() != shape) throw InputError("exemplar shape does not match the input");
    return *exemplar;
  }
  Tensor t(shape);
  const std::size_t n = t.size();
  const std::size_t h = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
  const std::size_t w = shape.empty() ? 1 : shape.back();
  const std::size_t planes = n / (h * w);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  switch (strategy) {
    case InitStrategy::kRandom:
      for (double& v : t.values()) v = u(rng);
      break;
    case InitStrategy::kPatterned4:
    case InitStrategy::kPatterned16: {
      const std::size_t k = strategy == InitStrategy::kPatterned4 ? 2 : 4;
      std::vector<double> block(planes * k * k);
      for (double& v : block) v = u(rng);
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            const std::size_t br = std::min(k - 1, r * k / h);
            const std::size_t bc = std::min(k - 1, c * k / w);
            t[(p * h + r) * w + c] = block[(p * k + br) * k + bc];
          }
        }
      }
      break;
    }
    case InitStrategy::kBinary: {
      std::uniform_int_distribution<int> coin(0, 1);
      const std::size_t phase = static_cast<std::size_t>(coin(rng));
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            t[(p * h + r) * w + c] = static_cast<double>((r + c + phase) % 2);
          }
        }
      }
      break;
    }
    case InitStrategy::kColor: {
      for (std::size_t p = 0; p < planes; ++p) {
        const double v = u(rng);
        for (std::size_t i = 0; i < h * w; ++i) t[p * h * w + i] = v;
      }
      break;
    }
    case InitStrategy::kExemplar:
      break;
  }
  return t;
}

namespace {

class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}
  void step(std::span<double> x, std::span<const double> g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1 - kBeta2) * g[i] * g[i];
      x[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + 1e-8);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

void finish(ReconResult& r, const Tensor* ground_truth, double success_mse) {
  if (ground_truth != nullptr) {
    LeakageScore s = evaluate_leakage(r.x_rec(), *ground_truth, success_mse);
    r.mse = s.mse;
    r.ssim = s.ssim;
    r.success = s.success;
  } else {
    r.success = r.converged_at.has_value();
  }
}

}  // namespace

ReconResult reconstruct(const ModelSpec& spec, const ParamVector& params,
                        const TargetGradient& target, const AttackConfig& cfg,
                        const Tensor* ground_truth, const Tensor* exemplar) {
  cfg.validate();
  if (!(target.grad.layout() == params.layout())) {
    throw InputError("target gradient layout does not match the model");
  }
  ReconResult r;
  r.labels = infer_labels(target, spec, cfg.batch);

  std::vector<Example> dummies;
  std::vector<Adam> adam;
  for (std::size_t s = 0; s < cfg.batch; ++s) {
    Rng rng = make_rng(cfg.seed, {s});
    dummies.push_back({init_seed(cfg.init, spec.input_shape(), exemplar, rng), r.labels[s]});
    adam.emplace_back(spec.input_dim());
  }
  auto snapshot = [&] {
    r.slots.clear();
    for (const Example& d : dummies) r.slots.push_back(d.x);
  };

  for (std::size_t it = 0;; ++it) {
    GradMatch gm;
    try {
      gm = grad_match_input_grad(spec, params, dummies, target.grad);
    } catch (const NumericError& e) {
      snapshot();
      r.iterations = it;
      throw ReconstructionAborted(std::string("reconstruction aborted: ") + e.what(), r);
    }
    r.trace.push_back(gm.distance);
    r.final_distance = gm.distance;
    if (gm.distance < cfg.loss_threshold) {
      r.converged_at = it;
      r.iterations = it;
      break;
    }
    if (it == cfg.max_iters) {
      r.iterations = it;
      break;
    }
    for (std::size_t s = 0; s < dummies.size(); ++s) {
      std::span<double> x = dummies[s].x.values();
      std::span<const double> g = gm.dx[s].values();
      if (cfg.optimizer == AttackOptimizer::kAdam) {
        adam[s].step(x, g, cfg.lr);
      } else {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg.lr * g[i];
      }
      if (cfg.clamp) {
        for (double& v : x) v = std::clamp(v, 0.0, 1.0);
      }
      for (double v : x) {
        if (!std::isfinite(v)) {
          snapshot();
          r.iterations = it + 1;
          throw ReconstructionAborted("reconstruction aborted: non-finite dummy input", r);
        }
      }
    }
  }
  snapshot();
  finish(r, ground_truth, cfg.success_mse);
  return r;
}

LeakageScore evaluate_leakage(const Tensor& x_rec, const Tensor& x, double success_mse) {
  LeakageScore s;
  s.mse = mse(x_rec, x);
  const Shape& shape = x.shape();
  if (shape.size() >= 2) {
    const std::size_t win = std::min({std::size_t{8}, shape[shape.size() - 2], shape.back()});
    s.ssim = ssim(x_rec, x, win, 1.0);
  } else {
    s.ssim = ssim(Tensor({1, x_rec.size()}, std::vector<double>(x_rec.values().begin(), x_rec.values().end())),
                  Tensor({1, x.size()}, std::vector<double>(x.values().begin(), x.values().end())),
                  1, 1.0);
  }
  s.success = s.mse < success_mse;
  return s;
}

std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::kRandom: return "random";
    case InitStrategy::kPatterned4: return "patterned4";
    case InitStrategy::kPatterned16: return "patterned16";
    case InitStrategy::kBinary: return "binary";
    case InitStrategy::kColor: return "color";
    case InitStrategy::kExemplar: return "exemplar";
  }
  return "random";
}

InitStrategy parse_init_strategy(const std::string& s) {
  for (InitStrategy k : {InitStrategy::kRandom, InitStrategy::kPatterned4, InitStrategy::kPatterned16,
                         InitStrategy::kBinary, InitStrategy::kColor, InitStrategy::kExemplar}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown init strategy '" + s + "'");
}

}  // namespace fllab
