#include "smog/optim.hpp"

#include <cmath>
#include <numbers>

#include "smog/errors.hpp"

namespace smog {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "lars"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "lars") return OptimizerKind::lars;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or lars)");
}

void OptimConfig::validate() const {
    if (!(lr_per_256 > 0.0)) throw ConfigError("optim: lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optim: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("optim: weight_decay must be non-negative");
    if (!(lars_eta > 0.0)) throw ConfigError("optim: lars_eta must be positive");
    if (!(lars_eps >= 0.0)) throw ConfigError("optim: lars_eps must be non-negative");
}

double base_lr_for_batch(std::size_t batch, double lr_per_256) {
    return lr_per_256 * static_cast<double>(batch) / 256.0;
}

double lr_schedule(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps, double base_lr) {
    if (warmup_steps >= total_steps) {
        throw ConfigError("warmup steps (" + std::to_string(warmup_steps) + ") must be fewer than total steps (" +
                          std::to_string(total_steps) + ")");
    }
    if (step > total_steps) throw ConfigError("lr_schedule: step beyond the schedule");
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState make_optim_state(const OptimConfig& config, std::span<ad::Parameter* const> params) {
    config.validate();
    OptimState s;
    s.config = config;
    for (const auto* p : params) s.velocity.emplace_back(p->value.shape(), 0.0);
    return s;
}

namespace {

void check_state(std::span<ad::Parameter* const> params, const OptimState& state) {
    if (params.size() != state.velocity.size()) throw Error("optimizer: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto* p = params[i];
        if (!p->value.same_shape(state.velocity[i]) || (p->has_grad() && !p->grad.same_shape(p->value))) {
            throw Error("optimizer: shape mismatch for " + p->name);
        }
    }
}

double effective_grad(const ad::Parameter& p, const OptimConfig& c, std::size_t i) {
    const double g = p.has_grad() ? p.grad[i] : 0.0;
    return p.decay ? g + c.weight_decay * p.value[i] : g;
}

void momentum_update(ad::Parameter& p, Tensor& v, const OptimConfig& c, double lr) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
        v[i] = c.momentum * v[i] + effective_grad(p, c, i);
        p.value[i] -= lr * v[i];
    }
}

}  // namespace

double lars_trust_ratio(const ad::Parameter& p, const OptimConfig& c) {
    if (!p.decay) return 1.0;
    double ww = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = effective_grad(p, c, i);
        ww += p.value[i] * p.value[i];
        gg += g * g;
    }
    if (ww == 0.0 || gg == 0.0) return 1.0;
    return c.lars_eta * std::sqrt(ww) / (std::sqrt(gg) + c.lars_eps);
}

void sgd_momentum_step(std::span<ad::Parameter* const> params, OptimState& state, double lr) {
    check_state(params, state);
    for (std::size_t k = 0; k < params.size(); ++k) momentum_update(*params[k], state.velocity[k], state.config, lr);
    ++state.steps;
}

void lars_step(std::span<ad::Parameter* const> params, OptimState& state, double lr) {
    check_state(params, state);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double local_lr = lr * lars_trust_ratio(*params[k], state.config);
        momentum_update(*params[k], state.velocity[k], state.config, local_lr);
    }
    ++state.steps;
}

void optimizer_step(std::span<ad::Parameter* const> params, OptimState& state, double lr) {
    if (state.config.kind == OptimizerKind::lars) {
        lars_step(params, state, lr);
    } else {
        sgd_momentum_step(params, state, lr);
    }
}

}  // namespace smog
