#pragma once

// Contrastive objectives over L2-normalized features. sim(u, v) is the inner
// product of unit vectors; every loss is a batch-mean softmax cross-entropy
// of similarity logits scaled by 1/tau.

#include <span>
#include <string>

#include "smog/autodiff.hpp"
#include "smog/grouping.hpp"

namespace smog {

enum class Objective {
    instance,  // instance InfoNCE against the momentum branch (config "eq1")
    group,     // pure group contrast, group vs group (config "eq2")
    smog,      // instance feature vs group features (config "eq3")
};

std::string to_string(Objective o);
Objective parse_objective(const std::string& name);

struct LossConfig {
    double tau = 0.1;
    Objective objective = Objective::smog;
    // Average both large-view directions each step instead of one.
    bool symmetric = true;

    void validate() const;
};

// mean_i [ logsumexp(logits_i) - logits_i[label_i] ]
ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> labels);

// -log softmax over groups of sim(anchor_i, g_j)/tau at j = target_i.
// `bank` is the in-graph, already-updated group tensor.
ad::Var smog_loss(const ad::Var& anchor, const Assignment& target, const ad::Var& bank, double tau);

// Same softmax, but the anchor is the anchor view's own group feature.
ad::Var pure_group_loss(const Assignment& anchor_groups, const Assignment& target_groups, const ad::Var& bank,
                        double tau);

// Positives on the diagonal of the anchor x target similarity matrix; the
// other targets in the batch are the negatives. `target` is a stop-gradient
// tensor (momentum branch).
ad::Var instance_infonce(const ad::Var& anchor, const Tensor& target, double tau);

}  // namespace smog
