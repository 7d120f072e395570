#include "fllab/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fllab/errors.h"

namespace fllab {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (std::size_t e : shape_) {
    if (e == 0) throw InputError("tensor extents must be positive");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw InputError("tensor extents must be positive");
  }
  if (shape_size(shape_) != values_.size()) {
    throw InputError("tensor value count does not match its shape");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw NumericError("tensor holds a non-finite value");
  }
}

ModelSpec::ModelSpec(Shape input_shape, std::vector<LayerSpec> hidden, std::size_t classes)
    : input_shape_(std::move(input_shape)),
      input_dim_(shape_size(input_shape_)),
      hidden_(std::move(hidden)),
      classes_(classes) {
  if (input_dim_ == 0) throw InputError("model input shape is empty");
  if (classes_ < 2) throw InputError("a model needs at least two classes");
  for (const LayerSpec& l : hidden_) {
    if (l.units == 0) throw InputError("hidden layer with zero units");
  }
}

std::size_t ModelSpec::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim_ : hidden_.at(layer - 1).units;
}

std::size_t ModelSpec::fan_out(std::size_t layer) const {
  return layer < hidden_.size() ? hidden_[layer].units : classes_;
}

ParamLayout::ParamLayout(const ModelSpec& spec) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    LayerSegment seg{offset, spec.fan_out(l), spec.fan_in(l)};
    segments_.push_back(seg);
    offset += seg.extent();
  }
  total_ = offset;
}

template <typename Tag>
FlatVector<Tag>::FlatVector(ParamLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total()) {
    throw InputError("flat vector length " + std::to_string(values_.size()) +
                     " does not match layout total " + std::to_string(layout_.total()));
  }
}

template <typename Tag>
std::span<const double> FlatVector<Tag>::weights(std::size_t layer) const {
  const LayerSegment& s = layout_.segment(layer);
  return std::span<const double>(values_).subspan(s.weight_offset(), s.rows * s.cols);
}

template <typename Tag>
std::span<const double> FlatVector<Tag>::bias(std::size_t layer) const {
  const LayerSegment& s = layout_.segment(layer);
  return std::span<const double>(values_).subspan(s.bias_offset(), s.rows);
}

template <typename Tag>
std::span<const double> FlatVector<Tag>::weight_row(std::size_t layer, std::size_t row) const {
  const LayerSegment& s = layout_.segment(layer);
  if (row >= s.rows) throw InputError("weight row out of range");
  return std::span<const double>(values_).subspan(s.weight_offset() + row * s.cols, s.cols);
}

template class FlatVector<ParamTag>;
template class FlatVector<GradTag>;

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

ParamVector init_params(const ModelSpec& spec, Rng& rng, double gain) {
  ParamLayout layout(spec);
  ParamVector p(layout);
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const LayerSegment& s = layout.segment(l);
    double bound = gain / std::sqrt(static_cast<double>(s.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) p[s.weight_offset() + i] = u(rng);
  }
  return p;
}

namespace {

// Forward-mode number: value plus one directional derivative. Running the
// backward pass on these with a parameter tangent yields second-order
// quantities without a tape.
struct Dual {
  double v = 0.0;
  double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }

inline double value(double x) { return x; }
inline double value(Dual x) { return x.v; }

inline double exp_of(double x) { return std::exp(x); }
inline Dual exp_of(Dual x) {
  double e = std::exp(x.v);
  return {e, e * x.d};
}
inline double log_of(double x) { return std::log(x); }
inline Dual log_of(Dual x) { return {std::log(x.v), x.d / x.v}; }

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline Dual sigmoid(Dual x) {
  double s = sigmoid(x.v);
  return {s, s * (1.0 - s) * x.d};
}
inline double tanh_of(double x) { return std::tanh(x); }
inline Dual tanh_of(Dual x) {
  double t = std::tanh(x.v);
  return {t, (1.0 - t * t) * x.d};
}

template <typename S>
S activate(Activation a, S z) {
  return a == Activation::kSigmoid ? sigmoid(z) : tanh_of(z);
}

// Derivative of the activation expressed through its output.
template <typename S>
S activation_slope(Activation a, S out) {
  S one{1.0};
  return a == Activation::kSigmoid ? out * (one - out) : one - out * out;
}

template <typename S>
struct Pass {
  std::vector<std::vector<S>> acts;  // acts[0] = input, acts[l] = output of hidden layer l-1
  std::vector<S> probs;
  S loss{};
};

template <typename S>
void run_forward(const ModelSpec& spec, const ParamLayout& layout, std::span<const S> params,
                 std::span<const S> x, std::size_t label, Pass<S>& pass) {
  pass.acts.resize(spec.depth());
  pass.acts[0].assign(x.begin(), x.end());
  std::vector<S> logits;
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const LayerSegment& seg = layout.segment(l);
    const std::vector<S>& in = pass.acts[l];
    std::vector<S> z(seg.rows);
    for (std::size_t r = 0; r < seg.rows; ++r) {
      S acc = params[seg.bias_offset() + r];
      const std::size_t row = seg.weight_offset() + r * seg.cols;
      for (std::size_t c = 0; c < seg.cols; ++c) acc += params[row + c] * in[c];
      z[r] = acc;
    }
    if (l + 1 < spec.depth()) {
      Activation a = spec.hidden()[l].activation;
      for (S& v : z) v = activate(a, v);
      pass.acts[l + 1] = std::move(z);
    } else {
      logits = std::move(z);
    }
  }
  double m = value(logits[0]);
  for (const S& v : logits) m = std::max(m, value(v));
  S shift{m};
  std::vector<S> e(logits.size());
  S sum{0.0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = exp_of(logits[i] - shift);
    sum += e[i];
  }
  pass.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) pass.probs[i] = e[i] / sum;
  pass.loss = log_of(sum) + shift - logits[label];
}

// Backward pass for one example. Adds `scale` * dloss/dparams into
// `param_grad` when non-empty and writes dloss/dx into `input_grad` when
// non-null.
template <typename S>
void run_backward(const ModelSpec& spec, const ParamLayout& layout, std::span<const S> params,
                  const Pass<S>& pass, std::size_t label, double scale,
                  std::span<S> param_grad, std::vector<S>* input_grad) {
  std::vector<S> delta = pass.probs;
  delta[label] = delta[label] - S{1.0};
  S sc{scale};
  for (std::size_t l = spec.depth(); l-- > 0;) {
    const LayerSegment& seg = layout.segment(l);
    const std::vector<S>& in = pass.acts[l];
    if (!param_grad.empty()) {
      for (std::size_t r = 0; r < seg.rows; ++r) {
        S dr = delta[r] * sc;
        const std::size_t row = seg.weight_offset() + r * seg.cols;
        for (std::size_t c = 0; c < seg.cols; ++c) param_grad[row + c] += dr * in[c];
        param_grad[seg.bias_offset() + r] += dr;
      }
    }
    if (l == 0 && input_grad == nullptr) break;
    std::vector<S> down(seg.cols, S{0.0});
    for (std::size_t r = 0; r < seg.rows; ++r) {
      const std::size_t row = seg.weight_offset() + r * seg.cols;
      for (std::size_t c = 0; c < seg.cols; ++c) down[c] += params[row + c] * delta[r];
    }
    if (l == 0) {
      *input_grad = std::move(down);
      break;
    }
    Activation a = spec.hidden()[l - 1].activation;
    for (std::size_t c = 0; c < seg.cols; ++c) down[c] = down[c] * activation_slope(a, in[c]);
    delta = std::move(down);
  }
}

void check_input(const ModelSpec& spec, const Tensor& x) {
  if (x.size() != spec.input_dim() || x.shape() != spec.input_shape()) {
    throw InputError("input shape does not match the model input shape");
  }
}

void check_params(const ModelSpec& spec, const ParamVector& params) {
  if (!(params.layout() == ParamLayout(spec))) {
    throw InputError("parameter layout does not match the model");
  }
}

void check_batch(const ModelSpec& spec, std::span<const Example> batch) {
  if (batch.empty()) throw DegenerateInputError("empty batch");
  for (const Example& ex : batch) {
    check_input(spec, ex.x);
    if (ex.label >= spec.classes()) throw InputError("label out of range");
  }
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

}  // namespace

Tensor forward(const ModelSpec& spec, const ParamVector& params, const Tensor& x) {
  check_params(spec, params);
  check_input(spec, x);
  Pass<double> pass;
  run_forward<double>(spec, params.layout(), params.values(), x.values(), 0, pass);
  check_finite(pass.probs, "class probabilities");
  return Tensor({spec.classes()}, pass.probs);
}

LossAndGrad loss_and_param_grad(const ModelSpec& spec, const ParamVector& params,
                                std::span<const Example> batch) {
  check_params(spec, params);
  check_batch(spec, batch);
  LossAndGrad out{0.0, GradVector(params.layout())};
  const double scale = 1.0 / static_cast<double>(batch.size());
  Pass<double> pass;
  for (const Example& ex : batch) {
    run_forward<double>(spec, params.layout(), params.values(), ex.x.values(), ex.label, pass);
    out.loss += pass.loss * scale;
    run_backward<double>(spec, params.layout(), params.values(), pass, ex.label, scale,
                         out.grad.values(), nullptr);
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  check_finite(out.grad.values(), "parameter gradient");
  return out;
}

std::vector<GradVector> per_example_grads(const ModelSpec& spec, const ParamVector& params,
                                          std::span<const Example> batch) {
  check_params(spec, params);
  check_batch(spec, batch);
  std::vector<GradVector> out;
  out.reserve(batch.size());
  Pass<double> pass;
  for (const Example& ex : batch) {
    GradVector g(params.layout());
    run_forward<double>(spec, params.layout(), params.values(), ex.x.values(), ex.label, pass);
    run_backward<double>(spec, params.layout(), params.values(), pass, ex.label, 1.0,
                         g.values(), nullptr);
    check_finite(g.values(), "per-example gradient");
    out.push_back(std::move(g));
  }
  return out;
}

Tensor input_grad(const ModelSpec& spec, const ParamVector& params, const Example& ex) {
  check_params(spec, params);
  check_batch(spec, std::span<const Example>(&ex, 1));
  Pass<double> pass;
  run_forward<double>(spec, params.layout(), params.values(), ex.x.values(), ex.label, pass);
  std::vector<double> dx;
  run_backward<double>(spec, params.layout(), params.values(), pass, ex.label, 1.0, {}, &dx);
  check_finite(dx, "input gradient");
  return Tensor(ex.x.shape(), std::move(dx));
}

GradMatch grad_match_input_grad(const ModelSpec& spec, const ParamVector& params,
                                std::span<const Example> dummies, const GradVector& target) {
  check_params(spec, params);
  check_batch(spec, dummies);
  if (!(target.layout() == params.layout())) {
    throw InputError("target gradient layout does not match the model");
  }
  LossAndGrad lg = loss_and_param_grad(spec, params, dummies);

  GradMatch out;
  std::vector<double> residual(params.size());
  for (std::size_t i = 0; i < residual.size(); ++i) {
    residual[i] = lg.grad[i] - target[i];
    out.distance += residual[i] * residual[i];
  }
  if (!std::isfinite(out.distance)) throw NumericError("non-finite gradient distance");

  // dD/dx = J^T (2 r) where J = d(grad_params)/dx. By symmetry of mixed
  // partials this is the directional derivative of grad_x(loss) when the
  // parameters move along 2 r, which one dual-number pass computes.
  const double scale = 1.0 / static_cast<double>(dummies.size());
  std::vector<Dual> dparams(params.size());
  for (std::size_t i = 0; i < dparams.size(); ++i) dparams[i] = {params[i], 2.0 * residual[i]};
  Pass<Dual> pass;
  for (const Example& ex : dummies) {
    std::vector<Dual> dx_in(ex.x.size());
    for (std::size_t i = 0; i < dx_in.size(); ++i) dx_in[i] = {ex.x[i], 0.0};
    run_forward<Dual>(spec, params.layout(), dparams, dx_in, ex.label, pass);
    std::vector<Dual> gx;
    run_backward<Dual>(spec, params.layout(), dparams, pass, ex.label, 1.0, {}, &gx);
    std::vector<double> dx(gx.size());
    for (std::size_t i = 0; i < gx.size(); ++i) dx[i] = gx[i].d * scale;
    check_finite(dx, "gradient-matching input derivative");
    out.dx.emplace_back(ex.x.shape(), std::move(dx));
  }
  return out;
}

}  // namespace fllab
