#pragma once

// Full online encoder + in-graph group update + group contrastive loss, with
// a finite-difference check over every online parameter element.

#include <random>

#include "oracles.hpp"
#include "smog/encoder.hpp"
#include "smog/grouping.hpp"
#include "smog/loss.hpp"

namespace oracle {

struct CompositeCase {
    smog::EncoderPair pair;
    smog::Tensor view_a;
    smog::Tensor view_b;
    smog::GroupBank bank;
    smog::Assignment target;  // from the momentum branch on view_a
    double tau = 0.1;
};

inline smog::NetworkSpec tiny_composite_spec() {
    smog::NetworkSpec spec;
    spec.widths = {4, 6};
    spec.input_size = 8;
    spec.proj_hidden = 16;
    spec.proj_dim = 4;
    spec.pred_hidden = 16;
    return spec;
}

inline CompositeCase make_composite_case(std::uint64_t seed, std::size_t batch = 6, std::size_t groups = 5) {
    std::mt19937_64 rng(seed);
    const auto spec = tiny_composite_spec();
    CompositeCase c{smog::EncoderPair::build(spec, seed),
                    random_tensor({batch, 3, 8, 8}, rng, 0.0, 1.0),
                    random_tensor({batch, 3, 8, 8}, rng, 0.0, 1.0),
                    {},
                    {},
                    0.1};
    c.bank.groups = random_unit_rows(groups, spec.proj_dim, rng);
    c.bank.beta = 0.7;
    c.bank.counts.assign(groups, 0);
    c.target = smog::assign(c.pair.forward_momentum(c.view_a), c.bank.groups);
    return c;
}

// Normalized prediction output of the online network; `tape` may be null.
inline smog::ad::Var online_anchor(smog::Network& net, smog::ad::Tape* tape, const smog::Tensor& images) {
    using smog::ad::BnMode;
    auto repr = net.backbone(tape, smog::ad::constant(images), BnMode::train);
    auto proj = net.project(tape, repr, BnMode::train);
    return smog::ad::l2_normalize(net.predict(tape, proj, BnMode::train));
}

// View b anchors against the bank after the in-graph update with view a
// features. `block_anchor` cuts the direct anchor path, leaving only the
// route through the updated groups.
inline smog::ad::Var composite_loss(CompositeCase& c, smog::ad::Tape* tape, bool block_anchor = false) {
    auto& net = c.pair.online();
    auto features_a = online_anchor(net, tape, c.view_a);
    auto anchors_b = online_anchor(net, tape, c.view_b);
    if (block_anchor) anchors_b = smog::ad::constant(anchors_b.value());
    auto update = smog::momentum_update(c.bank, features_a, c.target);
    return smog::smog_loss(anchors_b, c.target, update.groups, c.tau);
}

// The default step is smaller than the elementwise checks use: with over a thousand ReLU
// inputs per evaluation, a 1e-5 stencil straddles a kink on some seeds.
inline GradCheck composite_gradcheck(CompositeCase& c, double h = 1e-6) {
    auto params = c.pair.online().parameters();
    for (auto* p : params) p->zero_grad();
    {
        smog::ad::Tape tape;
        tape.backward(composite_loss(c, &tape));
    }
    GradCheck result;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = composite_loss(c, nullptr).value()[0];
            p->value[i] = saved - h;
            const double down = composite_loss(c, nullptr).value()[0];
            p->value[i] = saved;
            const double analytic = p->has_grad() ? p->grad[i] : 0.0;
            result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, (up - down) / (2.0 * h)));
            ++result.checked;
        }
    }
    return result;
}

}  // namespace oracle
