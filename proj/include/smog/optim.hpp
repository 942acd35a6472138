#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smog/autodiff.hpp"

namespace smog {

enum class OptimizerKind { sgd, lars };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    // Learning rate per 256 samples; the base rate scales linearly with batch.
    double lr_per_256 = 0.3;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double lars_eta = 0.001;
    double lars_eps = 0.0;

    void validate() const;
};

double base_lr_for_batch(std::size_t batch, double lr_per_256 = 0.3);

// Linear warmup from 0, then half-cosine to 0 at total_steps.
double lr_schedule(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double base_lr);

// One velocity per parameter, in parameter order.
struct OptimState {
    OptimConfig config;
    std::vector<Tensor> velocity;
    std::uint64_t steps = 0;
};

OptimState make_optim_state(const OptimConfig& config, std::span<ad::Parameter* const> params);

// g' = g + wd*w (decayed parameters only); v = m*v + g'; w -= lr*v.
// A parameter with no gradient buffer has zero gradient.
void sgd_momentum_step(std::span<ad::Parameter* const> params, OptimState& state, double lr);

// As SGD, with lr scaled per tensor by eta*||w|| / (||g'|| + eps). The
// scale is 1 when either norm is zero and for parameters excluded from
// decay (batch-norm affine terms and biases).
void lars_step(std::span<ad::Parameter* const> params, OptimState& state, double lr);

// The trust ratio lars_step applies to one tensor.
double lars_trust_ratio(const ad::Parameter& param, const OptimConfig& config);

// Dispatches on state.config.kind.
void optimizer_step(std::span<ad::Parameter* const> params, OptimState& state, double lr);

}  // namespace smog
