#pragma once

#include <cstddef>
#include <vector>

#include "fllab/data.h"
#include "fllab/model.h"

namespace fllab {

double mse(const Tensor& a, const Tensor& b);

// Mean SSIM over all stride-1 uniform windows of size `window` x `window`
// on the last two dimensions. `dynamic_range` is 1.0 for [0,1] images.
double ssim(const Tensor& a, const Tensor& b, std::size_t window = 8,
            double dynamic_range = 1.0);

// confusion[true][predicted]
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

// One-vs-rest F1 for class c. A class with no true and no predicted samples
// scores 1 (nothing to get wrong).
double micro_f1(const ConfusionMatrix& confusion, std::size_t c);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> f1;
  double victim_f1 = 0.0;
  double rest_f1 = 0.0;
  ConfusionMatrix confusion;
};

EvalReport report_from_confusion(ConfusionMatrix confusion, std::size_t victim_class);

std::size_t predict(const ModelSpec& spec, const ParamVector& params, const Tensor& x);

EvalReport eval_model(const ModelSpec& spec, const ParamVector& params, const Dataset& test,
                      std::size_t victim_class);

}  // namespace fllab
