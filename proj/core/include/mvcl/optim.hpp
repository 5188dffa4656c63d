#pragma once

#include <vector>

#include "mvcl/layers.hpp"
#include "mvcl/model.hpp"

namespace mvcl {

/// Step schedule: base_lr * decay_factor^(number of decay epochs <= epoch).
Real lr_at(const OptimizerConfig& config, int epoch);

/// Momentum SGD with coupled weight decay:
///   velocity <- momentum * velocity + grad + weight_decay * param
///   param    <- param - lr * velocity
/// Nothing is modified if any gradient is non-finite (kNumeric).
void sgd_step(const std::vector<Parameter*>& params, const OptimizerConfig& config, Real lr);
void sgd_step(ModelState& state, Real lr);

}  // namespace mvcl
