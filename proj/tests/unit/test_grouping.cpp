#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "oracles.hpp"
#include "smog/encoder.hpp"
#include "smog/errors.hpp"
#include "smog/grouping.hpp"

using namespace smog;

namespace {

double max_norm_error(const Tensor& t) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.dim(0); ++i) worst = std::max(worst, std::abs(l2_norm(t.row(i)) - 1.0));
    return worst;
}

std::set<std::vector<double>> row_set(const Tensor& t, double quantum = 1e-12) {
    std::set<std::vector<double>> out;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        std::vector<double> r;
        for (double v : t.row(i)) r.push_back(std::round(v / quantum) * quantum);
        out.insert(r);
    }
    return out;
}

GroupBank bank_from(Tensor groups, double beta, UpdateVariant variant = UpdateVariant::MU) {
    GroupBank b;
    b.groups = std::move(groups);
    b.beta = beta;
    b.variant = variant;
    b.counts.assign(b.groups.dim(0), 0);
    return b;
}

// Sum of squared distances to cluster means for a labeling.
double partition_inertia(const Tensor& pts, const std::vector<std::size_t>& labels, std::size_t k) {
    const std::size_t d = pts.dim(1);
    std::vector<std::vector<double>> mean(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> size(k, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++size[labels[i]];
        for (std::size_t j = 0; j < d; ++j) mean[labels[i]][j] += pts.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c)
        for (double& v : mean[c]) v /= static_cast<double>(std::max<std::size_t>(size[c], 1));
    double s = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) s += std::pow(pts.at(i, j) - mean[labels[i]][j], 2);
    return s;
}

}  // namespace

TEST_CASE("random init is reproducible and unit-norm") {
    auto a = random_groups(12, 5, 77), b = random_groups(12, 5, 77);
    CHECK(a.groups.storage() == b.groups.storage());
    CHECK(max_norm_error(a.groups) < 1e-6);
    CHECK_THROWS_AS(random_groups(1, 5, 1), ConfigError);
}

TEST_CASE("k-means init on exactly l distinct points returns those points") {
    std::mt19937_64 rng(2);
    Tensor pts = oracle::random_unit_rows(6, 4, rng);
    auto r = init_groups(GroupInit::kmeans, pts, 6, 4, 9);
    CHECK(r.warnings.empty());
    CHECK(row_set(r.bank.groups, 1e-9) == row_set(pts, 1e-9));
    CHECK(max_norm_error(r.bank.groups) < 1e-6);
}

TEST_CASE("k-means init with too few distinct points falls back to random") {
    Tensor pts({8, 3}, 0.0);
    for (std::size_t i = 0; i < 8; ++i) pts.at(i, i % 2) = 1.0;  // only 2 distinct rows
    auto r = init_groups(GroupInit::kmeans, pts, 4, 3, 5);
    CHECK(r.warnings.size() == 1);
    CHECK(r.bank.groups.storage() == random_groups(4, 3, 5).groups.storage());
}

TEST_CASE("assign examples") {
    std::mt19937_64 rng(3);
    Tensor groups = oracle::random_unit_rows(5, 4, rng);
    Tensor f = take_rows(groups, std::vector<std::size_t>{3});
    CHECK(assign(f, groups).index[0] == 3);

    Tensor two = Tensor::matrix({{1, 0}, {0, 1}});
    const double s = std::sqrt(0.5);
    CHECK(assign(Tensor::matrix({{s, s}}), two).index[0] == 0);

    Tensor feats = oracle::random_unit_rows(16, 4, rng);
    auto a = assign(feats, groups);
    for (std::size_t i = 0; i < 16; ++i) {
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t k = 0; k < 5; ++k) {
            const double c = oracle::cosine(feats.row(i), groups.row(k));
            if (c > best_sim) {
                best_sim = c;
                best = k;
            }
        }
        CHECK(a.index[i] == best);
    }
}

TEST_CASE("assign is invariant to positive rescaling of a feature") {
    std::mt19937_64 rng(4);
    Tensor groups = oracle::random_unit_rows(7, 3, rng);
    Tensor feats = oracle::random_unit_rows(20, 3, rng);
    Tensor scaled = feats;
    std::uniform_real_distribution<double> sc(0.1, 10.0);
    for (std::size_t i = 0; i < 20; ++i) {
        const double f = sc(rng);
        for (double& v : scaled.row(i)) v *= f;
    }
    CHECK(assign(feats, groups).index == assign(scaled, groups).index);
}

TEST_CASE("momentum update examples") {
    auto bank = bank_from(Tensor::matrix({{1, 0}}), 0.5);
    Assignment a{{0}};
    auto up = momentum_update(bank, ad::constant(Tensor::matrix({{0, 1}})), a);
    CHECK(up.groups.value()[0] == doctest::Approx(0.70711).epsilon(1e-5));
    CHECK(up.groups.value()[1] == doctest::Approx(0.70711).epsilon(1e-5));

    bank.beta = 1.5;
    CHECK_THROWS_AS(momentum_update(bank, ad::constant(Tensor::matrix({{0, 1}})), a), ConfigError);
}

TEST_CASE("update identities: beta=1 fixed point, beta=0 member mean, AU(n=1) equals AL") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor groups = oracle::random_unit_rows(6, 4, rng);
        Tensor feats = oracle::random_unit_rows(12, 4, rng);
        Assignment a = assign(feats, groups);
        std::vector<std::size_t> count(6, 0);
        for (auto k : a.index) ++count[k];

        auto fixed = momentum_update(bank_from(groups, 1.0), ad::constant(feats), a).groups.value();
        for (std::size_t i = 0; i < groups.numel(); ++i) CHECK(std::abs(fixed[i] - groups[i]) < 1e-12);

        auto latest = momentum_update(bank_from(groups, 0.0), ad::constant(feats), a).groups.value();
        for (std::size_t k = 0; k < 6; ++k) {
            std::vector<double> m(4, 0.0);
            for (std::size_t i = 0; i < 12; ++i)
                if (a.index[i] == k)
                    for (std::size_t j = 0; j < 4; ++j) m[j] += feats.at(i, j) / count[k];
            const double n = count[k] ? l2_norm(m) : 1.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double expect = count[k] ? m[j] / n : groups.at(k, j);
                CHECK(std::abs(latest.at(k, j) - expect) < 1e-12);
            }
        }

        // AU with lifetime count 1 (first member ever) equals AL.
        Tensor one_each = take_rows(feats, std::vector<std::size_t>{0});
        Assignment single = assign(one_each, groups);
        auto au = momentum_update(bank_from(groups, 0.9, UpdateVariant::AU), ad::constant(one_each), single);
        auto al = momentum_update(bank_from(groups, 0.9, UpdateVariant::AL), ad::constant(one_each), single);
        for (std::size_t i = 0; i < groups.numel(); ++i)
            CHECK(std::abs(au.groups.value()[i] - al.groups.value()[i]) < 1e-12);
    }
}

TEST_CASE("AU weights by lifetime count") {
    auto bank = bank_from(Tensor::matrix({{1, 0}}), 0.9, UpdateVariant::AU);
    bank.counts = {3};
    auto up = momentum_update(bank, ad::constant(Tensor::matrix({{0, 1}})), Assignment{{0}});
    // g + (1/4)(f - g) = (0.75, 0.25), normalized
    const double n = std::sqrt(0.75 * 0.75 + 0.25 * 0.25);
    CHECK(up.groups.value()[0] == doctest::Approx(0.75 / n).epsilon(1e-14));
    CHECK(up.groups.value()[1] == doctest::Approx(0.25 / n).epsilon(1e-14));
    commit_update(bank, up);
    CHECK(bank.counts[0] == 4);
}

TEST_CASE("RS adopts one of the group's members") {
    std::mt19937_64 rng(6);
    Tensor groups = oracle::random_unit_rows(3, 4, rng);
    Tensor feats = oracle::random_unit_rows(15, 4, rng);
    Assignment a = assign(feats, groups);
    auto bank = bank_from(groups, 0.99, UpdateVariant::RS);
    auto up = momentum_update(bank, ad::constant(feats), a, 123);
    auto again = momentum_update(bank, ad::constant(feats), a, 123);
    CHECK(up.groups.value().storage() == again.groups.value().storage());
    for (std::size_t k = 0; k < 3; ++k) {
        bool found = up.members[k] == 0;
        for (std::size_t i = 0; i < 15 && !found; ++i) {
            if (a.index[i] != k) continue;
            found = std::abs(dot(up.groups.value().row(k), feats.row(i)) - 1.0) < 1e-12;
        }
        CHECK(found);
    }
}

TEST_CASE("groups without members are unchanged") {
    Tensor groups = Tensor::matrix({{1, 0}, {0, 1}});
    auto up = momentum_update(bank_from(groups, 0.5), ad::constant(Tensor::matrix({{0.8, 0.6}})), Assignment{{0}});
    CHECK(up.members == std::vector<std::size_t>{1, 0});
    CHECK(std::abs(up.groups.value().at(1, 1) - 1.0) < 1e-15);
    CHECK(up.groups.value().at(1, 0) == 0.0);
}

TEST_CASE("the in-graph update carries gradients into member features") {
    ad::Tape tape;
    std::mt19937_64 rng(7);
    Tensor groups = oracle::random_unit_rows(4, 3, rng);
    auto feats = tape.input(oracle::random_unit_rows(6, 3, rng));
    auto a = assign(feats.value(), groups);
    auto up = momentum_update(bank_from(groups, 0.7), feats, a);
    CHECK(up.groups.requires_grad());
    tape.backward(ad::sum(ad::mul(up.groups, ad::constant(oracle::random_tensor({4, 3}, rng)))));
    double total = 0.0;
    for (double g : feats.grad().values()) total += std::abs(g);
    CHECK(total > 0.0);
}

TEST_CASE("bank rows stay unit-norm over many updates and resets") {
    std::mt19937_64 rng(8);
    auto bank = random_groups(8, 5, 1);
    bank.beta = 0.9;
    FeatureCache cache(200, 5);
    auto pair = EncoderPair::build(NetworkSpec{BackboneKind::tiny_cnn, {4}, 3, 32, 8, 5, 0, 0.1}, 1);
    for (int it = 1; it <= 60; ++it) {
        Tensor feats = oracle::random_unit_rows(16, 5, rng);
        auto a = assign(feats, bank.groups);
        commit_update(bank, momentum_update(bank, ad::constant(feats), a));
        cache.push(feats);
        if (it % 20 == 0) periodic_reset(bank, cache, pair, {true, false}, it);
        CHECK(max_norm_error(bank.groups) < 1e-6);
    }
    CHECK(bank.iteration == 60);
}

TEST_CASE("beta schedule") {
    CHECK(beta_schedule(0, 1000) == 1.0);
    CHECK(beta_schedule(1000, 1000) == 0.99);
    CHECK(beta_schedule(500, 1000) == doctest::Approx(0.995).epsilon(1e-15));
    CHECK_THROWS_AS(beta_schedule(0, 0), ConfigError);
}

TEST_CASE("feature cache ring semantics") {
    FeatureCache cache(5, 2);
    Tensor a = Tensor::matrix({{1, 0}, {0, 1}, {0.6, 0.8}});
    cache.push(a);
    CHECK(cache.size() == 3);
    CHECK(cache.rows().storage() == a.storage());

    Tensor b = Tensor::matrix({{0.8, 0.6}, {-1, 0}, {0, -1}, {0.28, 0.96}});
    cache.push(b);
    CHECK(cache.size() == 5);
    Tensor expect = Tensor::matrix({{0.6, 0.8}, {0.8, 0.6}, {-1, 0}, {0, -1}, {0.28, 0.96}});
    CHECK(cache.rows().storage() == expect.storage());
}

TEST_CASE("k-means examples") {
    Tensor same({5, 3}, 0.0);
    for (std::size_t i = 0; i < 5; ++i) same.at(i, 1) = 1.0;
    auto one = kmeans(same, 1, 25, 1);
    CHECK(one.centers.storage() == std::vector<double>{0, 1, 0});

    std::mt19937_64 rng(9);
    Tensor pts = oracle::random_unit_rows(7, 3, rng);
    auto all = kmeans(pts, 7, 25, 2);
    CHECK(all.inertia == 0.0);
    CHECK(row_set(all.centers, 1e-9) == row_set(pts, 1e-9));

    CHECK_THROWS_AS(kmeans(pts, 8, 25, 1), InsufficientDataError);
    auto det = kmeans(pts, 3, 25, 5);
    CHECK(det.centers.storage() == kmeans(pts, 3, 25, 5).centers.storage());
}

TEST_CASE("k-means matches the exhaustive partition optimum on 8 points") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        std::mt19937_64 rng(100 + seed);
        Tensor pts = oracle::random_tensor({8, 2}, rng);
        double best = std::numeric_limits<double>::infinity();
        for (unsigned mask = 1; mask < (1u << 8) - 1; ++mask) {
            std::vector<std::size_t> labels(8);
            for (std::size_t i = 0; i < 8; ++i) labels[i] = (mask >> i) & 1u;
            best = std::min(best, partition_inertia(pts, labels, 2));
        }
        double best_random = std::numeric_limits<double>::infinity();
        std::uniform_int_distribution<std::size_t> coin(0, 1);
        for (int r = 0; r < 1000; ++r) {
            std::vector<std::size_t> labels(8);
            for (auto& l : labels) l = coin(rng);
            if (std::count(labels.begin(), labels.end(), 0u) % 8 == 0) continue;
            best_random = std::min(best_random, partition_inertia(pts, labels, 2));
        }
        auto km = kmeans(pts, 2, 25, seed);
        CHECK(km.inertia <= best_random + 1e-12);
        CHECK(km.inertia == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("k-means inertia never increases across Lloyd passes") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor pts = oracle::random_unit_rows(120, 6, rng);
        auto km = kmeans(pts, 9, 50, trial);
        for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
            CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-12);
        CHECK(max_norm_error(km.centers) < 1e-12);
    }
}

TEST_CASE("periodic reset respects its flags") {
    std::mt19937_64 rng(11);
    NetworkSpec spec{BackboneKind::tiny_cnn, {4}, 3, 32, 8, 4, 0, 0.1};
    auto pair = EncoderPair::build(spec, 3);
    for (auto* p : pair.online().parameters())
        for (double& v : p->value.values()) v += 0.1;
    auto bank = random_groups(4, 4, 2);
    FeatureCache cache(4, 4);
    Tensor pts = oracle::random_unit_rows(4, 4, rng);
    cache.push(pts);

    const Tensor before = bank.groups;
    auto none = periodic_reset(bank, cache, pair, {false, false}, 1);
    CHECK_FALSE(none.clustered);
    CHECK_FALSE(none.momentum_reset);
    CHECK(bank.groups.storage() == before.storage());
    CHECK(pair.drift() > 0.0);

    bank.counts = {5, 5, 5, 5};
    auto pd = periodic_reset(bank, cache, pair, {true, false}, 1);
    CHECK(pd.clustered);
    CHECK(row_set(bank.groups, 1e-9) == row_set(pts, 1e-9));
    CHECK(bank.counts == std::vector<std::uint64_t>{0, 0, 0, 0});
    CHECK(pair.drift() > 0.0);

    auto rf = periodic_reset(bank, cache, pair, {false, true}, 1);
    CHECK(rf.momentum_reset);
    CHECK(pair.drift() == 0.0);

    FeatureCache small(3, 4);
    small.push(take_rows(pts, std::vector<std::size_t>{0, 1}));
    auto skipped = periodic_reset(bank, small, pair, {true, false}, 1);
    CHECK_FALSE(skipped.clustered);
    CHECK(skipped.warnings.size() == 1);
}

TEST_CASE("occupancy statistics") {
    std::vector<std::size_t> uniform;
    for (std::size_t i = 0; i < 40; ++i) uniform.push_back(i % 8);
    auto u = occupancy_stats(uniform, 8);
    CHECK(u.max_share == doctest::Approx(1.0 / 8));
    CHECK(u.empty == 0);

    std::vector<std::size_t> same(30, 2);
    auto s = occupancy_stats(same, 8);
    CHECK(s.max_share == 1.0);
    CHECK(s.empty == 7);
}
