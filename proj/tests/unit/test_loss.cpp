#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "composite.hpp"
#include "oracles.hpp"
#include "smog/errors.hpp"
#include "smog/loss.hpp"

using namespace smog;

namespace {

using oracle::constant_rows;
using oracle::random_assignment;
using oracle::sim_logits;

double value(const ad::Var& v) { return v.value()[0]; }

}  // namespace

TEST_CASE("objective names round-trip") {
    for (auto o : {Objective::instance, Objective::group, Objective::smog}) CHECK(parse_objective(to_string(o)) == o);
    CHECK_THROWS_AS(parse_objective("eq4"), ConfigError);
    LossConfig cfg;
    CHECK(cfg.tau == 0.1);
    cfg.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("smog_loss examples") {
    SUBCASE("uniform over 32 groups") {
        const auto loss = smog_loss(ad::constant(constant_rows(4, 3)), Assignment{{0, 5, 17, 31}},
                                    ad::constant(constant_rows(32, 3)), 0.1);
        CHECK(std::abs(value(loss) - std::log(32.0)) < 1e-12);
        CHECK(std::abs(value(loss) - 3.4657) < 1e-4);
    }
    SUBCASE("two equal groups at tau 1") {
        const auto bank = Tensor::matrix({{0.0, 1.0}, {0.0, -1.0}});
        const auto loss = smog_loss(ad::constant(Tensor::matrix({{1.0, 0.0}})), Assignment{{1}}, ad::constant(bank), 1.0);
        CHECK(std::abs(value(loss) - std::numbers::ln2) < 1e-12);
    }
    SUBCASE("unit margin at tau 0.1") {
        const auto bank = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
        const auto loss = smog_loss(ad::constant(Tensor::matrix({{1.0, 0.0}})), Assignment{{0}}, ad::constant(bank), 0.1);
        CHECK(std::abs(value(loss) - std::log1p(std::exp(-10.0))) < 1e-15);
        CHECK(std::abs(value(loss) - 4.5399e-5) < 1e-8);
    }
}

TEST_CASE("smog_loss rejects bad input") {
    const auto anchor = ad::constant(constant_rows(2, 3));
    const auto bank = ad::constant(constant_rows(4, 3));
    CHECK_THROWS_AS(smog_loss(anchor, Assignment{{0, 4}}, bank, 0.1), Error);
    CHECK_THROWS_AS(smog_loss(anchor, Assignment{{0}}, bank, 0.1), DimensionError);
    CHECK_THROWS_AS(smog_loss(anchor, Assignment{{0, 1}}, bank, -1.0), ConfigError);
}

TEST_CASE("smog_loss matches the unstabilized oracle") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t n = 1 + seed % 8, l = 2 + seed % 7, d = 1 + seed % 4;
        const auto anchor = oracle::random_unit_rows(n, d, rng);
        const auto bank = oracle::random_unit_rows(l, d, rng);
        const auto target = random_assignment(n, l, rng);
        const double tau = 0.05 + 0.05 * static_cast<double>(seed % 5);  // |sim/tau| <= 20
        const double got = value(smog_loss(ad::constant(anchor), target, ad::constant(bank), tau));
        const double want = oracle::naive_cross_entropy(sim_logits(anchor, bank, tau), target.index);
        CHECK(std::abs(got - want) < 1e-10);
        CHECK(got > 0.0);
    }
}

TEST_CASE("cross_entropy is shift invariant") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto logits = oracle::random_tensor({5, 7}, rng, -30.0, 30.0);
        const auto labels = random_assignment(5, 7, rng).index;
        Tensor shifted = logits;
        for (double& v : shifted.values()) v += 123.25;
        const double a = value(cross_entropy(ad::constant(logits), labels));
        const double b = value(cross_entropy(ad::constant(shifted), labels));
        CHECK(std::abs(a - b) < 1e-12);
    }
}

TEST_CASE("smog_loss is positive even at a large margin") {
    const auto bank = Tensor::matrix({{1.0, 0.0}, {-1.0, 0.0}});
    const auto loss = smog_loss(ad::constant(Tensor::matrix({{1.0, 0.0}})), Assignment{{0}}, ad::constant(bank), 0.05);
    CHECK(value(loss) > 0.0);
}

TEST_CASE("smog_loss gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed + 100);
        const std::size_t n = 2 + seed % 6, l = 2 + seed % 6, d = 2 + seed % 3;
        const auto target = random_assignment(n, l, rng);
        // Raw rows are normalized in-graph so the check covers the composition.
        const auto result = oracle::gradcheck(
            [&](const std::vector<ad::Var>& in) {
                return smog_loss(ad::l2_normalize(in[0]), target, ad::l2_normalize(in[1]), 0.1);
            },
            {oracle::random_tensor({n, d}, rng), oracle::random_tensor({l, d}, rng)});
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("gradient reaches every group in the denominator") {
    std::mt19937_64 rng(7);
    ad::Tape tape;
    auto anchor = tape.input(oracle::random_unit_rows(3, 4, rng));
    auto bank = tape.input(oracle::random_unit_rows(6, 4, rng));
    tape.backward(smog_loss(anchor, Assignment{{0, 0, 1}}, bank, 0.1));
    for (std::size_t k = 0; k < 6; ++k) CHECK(l2_norm(bank.grad().row(k)) > 0.0);
}

TEST_CASE("pure_group_loss examples and oracle") {
    SUBCASE("same group on both views") {
        std::mt19937_64 rng(3);
        const auto bank = oracle::random_unit_rows(5, 3, rng);
        const double got = value(pure_group_loss(Assignment{{2}}, Assignment{{2}}, ad::constant(bank), 0.1));
        const auto row = sim_logits(Tensor::matrix({{bank.at(2, 0), bank.at(2, 1), bank.at(2, 2)}}), bank, 0.1);
        double denom = 0.0;
        for (double z : row[0]) denom += std::exp(z);
        CHECK(std::abs(row[0][2] - 10.0) < 1e-12);
        CHECK(std::abs(got - -std::log(std::exp(10.0) / denom)) < 1e-10);
    }
    SUBCASE("uniform bank") {
        const double got = value(pure_group_loss(Assignment{{0, 3}}, Assignment{{1, 2}}, ad::constant(constant_rows(8, 2)), 0.1));
        CHECK(std::abs(got - std::log(8.0)) < 1e-12);
    }
    SUBCASE("random instances") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            std::mt19937_64 rng(seed + 200);
            const std::size_t n = 1 + seed % 8, l = 2 + seed % 7, d = 1 + seed % 4;
            const auto bank = oracle::random_unit_rows(l, d, rng);
            const auto a = random_assignment(n, l, rng), b = random_assignment(n, l, rng);
            Tensor anchors({n, d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) anchors.at(i, j) = bank.at(a.index[i], j);
            const double want = oracle::naive_cross_entropy(sim_logits(anchors, bank, 0.1), b.index);
            CHECK(std::abs(value(pure_group_loss(a, b, ad::constant(bank), 0.1)) - want) < 1e-10);
        }
    }
    CHECK_THROWS_AS(pure_group_loss(Assignment{{0}}, Assignment{{0, 1}}, ad::constant(constant_rows(2, 2)), 0.1),
                    DimensionError);
}

TEST_CASE("instance_infonce examples and oracle") {
    SUBCASE("two orthogonal pairs at tau 1") {
        const auto x = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
        const double got = value(instance_infonce(ad::constant(x), x, 1.0));
        CHECK(std::abs(got - -std::log(std::numbers::e / (std::numbers::e + 1.0))) < 1e-12);
        CHECK(std::abs(got - 0.3133) < 1e-4);
    }
    SUBCASE("uniform similarities") {
        const double got = value(instance_infonce(ad::constant(constant_rows(6, 3)), constant_rows(6, 3), 0.1));
        CHECK(std::abs(got - std::log(6.0)) < 1e-12);
    }
    SUBCASE("random instances") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            std::mt19937_64 rng(seed + 300);
            const std::size_t n = 2 + seed % 7, d = 1 + seed % 4;
            const auto a = oracle::random_unit_rows(n, d, rng), b = oracle::random_unit_rows(n, d, rng);
            std::vector<std::size_t> diag;
            for (std::size_t i = 0; i < n; ++i) diag.push_back(i);
            const double want = oracle::naive_cross_entropy(sim_logits(a, b, 0.1), diag);
            CHECK(std::abs(value(instance_infonce(ad::constant(a), b, 0.1)) - want) < 1e-10);
        }
    }
    SUBCASE("needs negatives") {
        CHECK_THROWS_AS(instance_infonce(ad::constant(constant_rows(1, 2)), constant_rows(1, 2), 0.1),
                        InsufficientDataError);
    }
    SUBCASE("target is stop-gradient") {
        std::mt19937_64 rng(5);
        ad::Tape tape;
        auto a = tape.input(oracle::random_unit_rows(4, 3, rng));
        tape.backward(instance_infonce(a, oracle::random_unit_rows(4, 3, rng), 0.1));
        CHECK(l2_norm(a.grad().values()) > 0.0);
    }
}

TEST_CASE("encoder composite gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto c = oracle::make_composite_case(seed);
        const auto result = oracle::composite_gradcheck(c);
        CHECK(result.checked > 500);
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("gradient flows through the updated groups alone") {
    auto c = oracle::make_composite_case(11);
    for (auto* p : c.pair.online().parameters()) p->zero_grad();
    ad::Tape tape;
    tape.backward(oracle::composite_loss(c, &tape, /*block_anchor=*/true));
    double total = 0.0;
    for (auto* p : c.pair.online().parameters())
        if (p->has_grad()) total += l2_norm(p->grad.values());
    CHECK(total > 1e-8);
    for (auto* p : c.pair.momentum().parameters()) CHECK_FALSE(p->has_grad());
}
