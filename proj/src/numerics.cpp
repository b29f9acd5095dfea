#include "mrefine/numerics.hpp"

#include <cmath>
#include <sstream>

#include "mrefine/errors.hpp"

namespace mrefine {

std::size_t element_count(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

namespace {

const std::vector<std::size_t>& checked_dims(const std::vector<std::size_t>& dims) {
  for (std::size_t d : dims)
    if (d == 0) throw InvalidArgument("tensor extents must be positive, got " + shape_string(dims));
  return dims;
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? ", " : "") << dims[i];
  os << ']';
  return os.str();
}

DenseTensor::DenseTensor(std::vector<std::size_t> dims, float fill)
    : dims_(std::move(dims)), data_(element_count(checked_dims(dims_)), fill) {}

DenseTensor::DenseTensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (data_.size() != element_count(checked_dims(dims_))) {
    throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(dims_));
  }
}

bool DenseTensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

DenseTensor conv1x1_forward(const DenseTensor& input, const DenseTensor& weights,
                            const DenseTensor& bias, Activation activation) {
  if (input.rank() < 1 || weights.rank() != 2 || bias.rank() != 1)
    throw InvalidArgument("conv1x1_forward: expected channels-last input, Cin x Cout weights, Cout bias");
  const std::size_t cin = input.dims().back();
  const std::size_t cout = weights.dim(1);
  if (weights.dim(0) != cin || bias.dim(0) != cout) {
    throw InvalidArgument("conv1x1_forward: input " + shape_string(input.dims()) + ", weights " +
                          shape_string(weights.dims()) + ", bias " + shape_string(bias.dims()) +
                          " do not conform");
  }
  auto out_dims = input.dims();
  out_dims.back() = cout;
  DenseTensor out(out_dims);
  kernels::conv1x1_forward(input.values(), input.size() / cin, cin, weights.values(),
                           bias.values(), cout, activation, out.values());
  return out;
}

Conv1x1Grads conv1x1_backward(const DenseTensor& input, const DenseTensor& weights,
                              const DenseTensor& grad_pre) {
  if (input.rank() < 1 || weights.rank() != 2 || grad_pre.rank() != input.rank())
    throw InvalidArgument("conv1x1_backward: rank mismatch");
  const std::size_t cin = input.dims().back();
  const std::size_t cout = weights.dim(1);
  auto expect = input.dims();
  expect.back() = cout;
  if (weights.dim(0) != cin || grad_pre.dims() != expect)
    throw InvalidArgument("conv1x1_backward: upstream gradient " + shape_string(grad_pre.dims()) +
                          " does not match forward output " + shape_string(expect));
  Conv1x1Grads g{DenseTensor(input.dims()), DenseTensor({cin, cout}), DenseTensor({cout})};
  kernels::conv1x1_backward(input.values(), input.size() / cin, cin, weights.values(), cout,
                            grad_pre.values(), g.input.values(), g.weights.values(),
                            g.bias.values());
  return g;
}

double squared_distance(std::span<const float> f, std::span<const float> g) {
  if (f.size() != g.size()) throw InvalidArgument("squared_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double d = static_cast<double>(f[i]) - g[i];
    acc += d * d;
  }
  return acc;
}

double similarity(std::span<const float> f, std::span<const float> g, double kappa) {
  if (!(kappa > 0.0)) throw InvalidArgument("similarity: kappa must be positive");
  return std::exp(-squared_distance(f, g) / kappa);
}

AdamWState AdamWState::for_shape(const std::vector<std::size_t>& dims, const AdamWConfig& config) {
  AdamWState s;
  s.first_moment = DenseTensor(dims);
  s.second_moment = DenseTensor(dims);
  s.beta1 = config.beta1;
  s.beta2 = config.beta2;
  s.epsilon = config.epsilon;
  s.weight_decay = config.weight_decay;
  return s;
}

void adamw_step(std::span<float> params, std::span<const float> grads, AdamWState& state,
                double lr) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw InvalidArgument("adamw_step: parameter, gradient and moment sizes differ");
  if (!(lr > 0.0)) throw InvalidArgument("adamw_step: learning rate must be positive");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i]))
      throw NumericError("adamw_step: non-finite gradient at index " + std::to_string(i));
  }

  const std::uint64_t t = state.step_count + 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  auto m = state.first_moment.values();
  auto v = state.second_moment.values();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
    const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double m_hat = mi / bc1;
    const double v_hat = vi / bc2;
    const double p = params[i];
    params[i] = static_cast<float>(p - lr * (m_hat / (std::sqrt(v_hat) + state.epsilon) +
                                             state.weight_decay * p));
  }
  state.step_count = t;
}

void adamw_step(DenseTensor& params, const DenseTensor& grads, AdamWState& state, double lr) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment))
    throw InvalidArgument("adamw_step: shape mismatch between parameters " +
                          shape_string(params.dims()) + " and gradients " +
                          shape_string(grads.dims()));
  adamw_step(params.values(), grads.values(), state, lr);
}

}  // namespace mrefine
