#include "fllab/metrics.h"

#include <algorithm>

#include "fllab/errors.h"

namespace fllab {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InputError("mse: shape mismatch");
  if (a.size() == 0) throw DegenerateInputError("mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double ssim(const Tensor& a, const Tensor& b, std::size_t window, double dynamic_range) {
  if (a.shape() != b.shape()) throw InputError("ssim: shape mismatch");
  const Shape& s = a.shape();
  if (s.size() < 2) throw InputError("ssim needs an image with two spatial dimensions");
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t planes = a.size() / (h * w);
  if (window == 0 || window > h || window > w) {
    throw InputError("ssim window larger than the image");
  }
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const double n = static_cast<double>(window * window);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t r0 = 0; r0 + window <= h; ++r0) {
      for (std::size_t c0 = 0; c0 + window <= w; ++c0) {
        double sa = 0, sb = 0;
        for (std::size_t r = r0; r < r0 + window; ++r) {
          for (std::size_t c = c0; c < c0 + window; ++c) {
            sa += a[base + r * w + c];
            sb += b[base + r * w + c];
          }
        }
        const double ma = sa / n, mb = sb / n;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t r = r0; r < r0 + window; ++r) {
          for (std::size_t c = c0; c < c0 + window; ++c) {
            const double da = a[base + r * w + c] - ma;
            const double db = b[base + r * w + c] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        }
        va /= n;
        vb /= n;
        cov /= n;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double micro_f1(const ConfusionMatrix& confusion, std::size_t c) {
  const std::size_t k = confusion.size();
  if (c >= k) throw InputError("micro_f1: class out of range");
  std::size_t tp = confusion[c][c], fn = 0, fp = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (j == c) continue;
    fn += confusion[c][j];
    fp += confusion[j][c];
  }
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

EvalReport report_from_confusion(ConfusionMatrix confusion, std::size_t victim_class) {
  const std::size_t k = confusion.size();
  if (victim_class >= k) throw InputError("victim class out of range");
  EvalReport r;
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      total += confusion[i][j];
      if (i == j) correct += confusion[i][j];
    }
  }
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  double rest = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    r.f1.push_back(micro_f1(confusion, c));
    if (c != victim_class) rest += r.f1.back();
  }
  r.victim_f1 = r.f1[victim_class];
  r.rest_f1 = k > 1 ? rest / static_cast<double>(k - 1) : 0.0;
  r.confusion = std::move(confusion);
  return r;
}

std::size_t predict(const ModelSpec& spec, const ParamVector& params, const Tensor& x) {
  Tensor p = forward(spec, params, x);
  auto v = p.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

EvalReport eval_model(const ModelSpec& spec, const ParamVector& params, const Dataset& test,
                      std::size_t victim_class) {
  ConfusionMatrix cm(spec.classes(), std::vector<std::size_t>(spec.classes(), 0));
  for (std::size_t i = 0; i < test.size(); ++i) {
    cm.at(test.labels[i])[predict(spec, params, test.images[i])] += 1;
  }
  return report_from_confusion(std::move(cm), victim_class);
}

}  // namespace fllab
