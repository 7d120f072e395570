#pragma once

// Dense tensors, the affine/smooth-activation model family, reverse-mode
// parameter gradients and the second-order gradient-matching derivative used
// by the reconstruction attack.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fllab/rng.h"

namespace fllab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

// Row-major float64 tensor. Every public operation leaves values finite.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

enum class Activation { kSigmoid, kTanh };

struct LayerSpec {
  std::size_t units = 0;
  Activation activation = Activation::kSigmoid;
};

// Hidden affine layers with a smooth activation followed by an affine
// softmax-cross-entropy head.
class ModelSpec {
 public:
  ModelSpec(Shape input_shape, std::vector<LayerSpec> hidden, std::size_t classes);

  const Shape& input_shape() const { return input_shape_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t classes() const { return classes_; }
  const std::vector<LayerSpec>& hidden() const { return hidden_; }
  // Number of affine layers, including the head.
  std::size_t depth() const { return hidden_.size() + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;

 private:
  Shape input_shape_;
  std::size_t input_dim_ = 0;
  std::vector<LayerSpec> hidden_;
  std::size_t classes_ = 0;
};

// Where one affine layer lives inside a flat parameter vector. The weight
// block is rows x cols row-major, immediately followed by the bias.
struct LayerSegment {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t weight_offset() const { return offset; }
  std::size_t bias_offset() const { return offset + rows * cols; }
  std::size_t extent() const { return rows * cols + rows; }
  bool operator==(const LayerSegment&) const = default;
};

class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const ModelSpec& spec);

  const std::vector<LayerSegment>& segments() const { return segments_; }
  const LayerSegment& segment(std::size_t layer) const { return segments_.at(layer); }
  const LayerSegment& head() const { return segments_.back(); }
  std::size_t total() const { return total_; }
  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<LayerSegment> segments_;
  std::size_t total_ = 0;
};

// Flat vector tied to a parameter layout. ParamVector and GradVector share
// the representation but are distinct types.
template <typename Tag>
class FlatVector {
 public:
  FlatVector() = default;
  explicit FlatVector(ParamLayout layout)
      : layout_(std::move(layout)), values_(layout_.total(), 0.0) {}
  FlatVector(ParamLayout layout, std::vector<double> values);

  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> weights(std::size_t layer) const;
  std::span<const double> bias(std::size_t layer) const;
  std::span<const double> weight_row(std::size_t layer, std::size_t row) const;

  template <typename OtherTag>
  FlatVector<OtherTag> retag() const {
    return FlatVector<OtherTag>(layout_, values_);
  }

  bool operator==(const FlatVector&) const = default;

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

struct ParamTag;
struct GradTag;
using ParamVector = FlatVector<ParamTag>;
using GradVector = FlatVector<GradTag>;

extern template class FlatVector<ParamTag>;
extern template class FlatVector<GradTag>;

double l2_norm(std::span<const double> v);

struct Example {
  Tensor x;
  std::size_t label = 0;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights scaled by `gain`, zero
// biases.
ParamVector init_params(const ModelSpec& spec, Rng& rng, double gain = 1.0);

// Class probabilities for one input.
Tensor forward(const ModelSpec& spec, const ParamVector& params, const Tensor& x);

struct LossAndGrad {
  double loss = 0.0;
  GradVector grad;
};

// Mean cross-entropy over the batch and its gradient w.r.t. the parameters.
LossAndGrad loss_and_param_grad(const ModelSpec& spec, const ParamVector& params,
                                std::span<const Example> batch);

std::vector<GradVector> per_example_grads(const ModelSpec& spec,
                                          const ParamVector& params,
                                          std::span<const Example> batch);

// Gradient of the cross-entropy w.r.t. the input, for a single example.
Tensor input_grad(const ModelSpec& spec, const ParamVector& params, const Example& ex);

struct GradMatch {
  double distance = 0.0;  // ||grad_params(x_rec, y_rec) - target||^2
  std::vector<Tensor> dx;  // d distance / d x_rec, one per slot
};

// Distance between the parameter gradient of the dummy batch and `target`,
// together with its derivative w.r.t. every dummy input (double
// backpropagation). The batch gradient is the mean over slots.
GradMatch grad_match_input_grad(const ModelSpec& spec, const ParamVector& params,
                                std::span<const Example> dummies,
                                const GradVector& target);

inline GradMatch grad_match_input_grad(const ModelSpec& spec, const ParamVector& params,
                                       const Tensor& x_rec, std::size_t y_rec,
                                       const GradVector& target) {
  Example ex{x_rec, y_rec};
  return grad_match_input_grad(spec, params, std::span<const Example>(&ex, 1), target);
}

}  // namespace fllab
