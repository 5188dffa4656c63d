#include "mvcl/optim.hpp"

#include <cmath>

#include "mvcl/errors.hpp"

namespace mvcl {

Real lr_at(const OptimizerConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) {
    fail(ErrorCode::kRange, "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  }
  int decays = 0;
  for (int e : config.decay_epochs) decays += epoch >= e ? 1 : 0;
  // Dividing by the integer power of 1/decay_factor keeps 0.1 * 0.1^k exact
  // in binary floating point (0.01, 0.001, 1e-4 rather than 0.010000000000000002).
  const Real inverse = 1.0 / config.decay_factor;
  if (inverse == std::round(inverse)) return config.base_lr / std::pow(inverse, decays);
  return config.base_lr * std::pow(config.decay_factor, decays);
}

void sgd_step(const std::vector<Parameter*>& params, const OptimizerConfig& config, Real lr) {
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape()) fail(ErrorCode::kShape, "gradient shape mismatch for " + p->name);
    if (!p->grad.all_finite()) fail(ErrorCode::kNumeric, "non-finite gradient in " + p->name);
  }
  for (auto* p : params) {
    if (p->velocity.shape() != p->value.shape()) p->velocity = Tensor(p->value.shape());
    auto value = p->value.values();
    auto grad = p->grad.values();
    auto vel = p->velocity.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      vel[i] = config.momentum * vel[i] + grad[i] + config.weight_decay * value[i];
      value[i] -= lr * vel[i];
    }
  }
}

void sgd_step(ModelState& state, Real lr) { sgd_step(state.parameters(), state.config().optimizer, lr); }

}  // namespace mvcl
