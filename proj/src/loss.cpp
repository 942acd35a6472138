#include "smog/loss.hpp"

#include <numeric>

#include "smog/errors.hpp"

namespace smog {

std::string to_string(Objective o) {
    switch (o) {
        case Objective::instance: return "eq1";
        case Objective::group: return "eq2";
        case Objective::smog: return "eq3";
    }
    return "?";
}

Objective parse_objective(const std::string& name) {
    if (name == "eq1") return Objective::instance;
    if (name == "eq2") return Objective::group;
    if (name == "eq3") return Objective::smog;
    throw ConfigError("unknown loss objective '" + name + "' (expected eq1, eq2 or eq3)");
}

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss temperature tau must be positive");
}

namespace {

void check_tau(double tau) {
    if (!(tau > 0.0)) throw ConfigError("loss temperature tau must be positive, got " + std::to_string(tau));
}

ad::Var similarity_logits(const ad::Var& rows, const ad::Var& columns, double tau) {
    return ad::scale(ad::matmul(rows, ad::transpose(columns)), 1.0 / tau);
}

}  // namespace

ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> labels) {
    return ad::mean(ad::softmax_xent_rows(logits, labels));
}

ad::Var smog_loss(const ad::Var& anchor, const Assignment& target, const ad::Var& bank, double tau) {
    check_tau(tau);
    if (anchor.shape().at(0) != target.index.size()) {
        throw DimensionError("smog_loss: " + std::to_string(target.index.size()) + " targets for anchors " +
                             shape_str(anchor.shape()));
    }
    return cross_entropy(similarity_logits(anchor, bank, tau), target.index);
}

ad::Var pure_group_loss(const Assignment& anchor_groups, const Assignment& target_groups, const ad::Var& bank,
                        double tau) {
    check_tau(tau);
    if (anchor_groups.index.size() != target_groups.index.size()) {
        throw DimensionError("pure_group_loss: assignment sizes differ");
    }
    auto anchors = ad::gather_rows(bank, anchor_groups.index);
    return cross_entropy(similarity_logits(anchors, bank, tau), target_groups.index);
}

ad::Var instance_infonce(const ad::Var& anchor, const Tensor& target, double tau) {
    check_tau(tau);
    const std::size_t n = anchor.shape().at(0);
    if (n < 2) throw InsufficientDataError("instance_infonce needs at least 2 instances for negatives");
    if (target.shape() != anchor.shape()) {
        throw DimensionError("instance_infonce: anchor " + shape_str(anchor.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    std::vector<std::size_t> diagonal(n);
    std::iota(diagonal.begin(), diagonal.end(), std::size_t{0});
    return cross_entropy(similarity_logits(anchor, ad::constant(target), tau), diagonal);
}

}  // namespace smog
