#include "evplan/optim.hpp"

#include <cmath>
#include <string>

#include "evplan/error.hpp"

namespace evplan {

AdamWState::AdamWState(const AdamWConfig& cfg, std::span<const Tensor> params) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(p.size(), 0.0);
    second_moment.emplace_back(p.size(), 0.0);
  }
}

namespace {
void update(std::span<Tensor> params, AdamWState& state, const GradientMap* grads) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw StateCorruptionError("adamw: state tracks " + std::to_string(state.first_moment.size()) +
                               " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].size() || state.second_moment[i].size() != params[i].size()) {
      throw StateCorruptionError("adamw: moment size for parameter " + std::to_string(i) + " is " +
                                 std::to_string(state.first_moment[i].size()) + ", parameter has " +
                                 std::to_string(params[i].size()));
    }
    const bool present = grads != nullptr ? grads->contains(params[i]) : params[i].has_grad();
    if (!present) throw UsageError("adamw: parameter " + std::to_string(i) + " has no gradient");
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads != nullptr ? grads->at(params[i]) : std::span<const double>(params[i].grad());
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.learning_rate * (mhat / (std::sqrt(vhat) + c.epsilon) + c.weight_decay * p[j]);
    }
  }
}
}  // namespace

void adamw_step(std::span<Tensor> params, const GradientMap& grads, AdamWState& state) {
  update(params, state, &grads);
}

void adamw_step(std::span<Tensor> params, AdamWState& state) { update(params, state, nullptr); }

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.grad()) g *= f;
    }
  }
  return norm;
}

}  // namespace evplan
