#include "smog/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "smog/encoder.hpp"
#include "smog/errors.hpp"
#include "smog/rng.hpp"

namespace smog {

std::string to_string(UpdateVariant v) {
    switch (v) {
        case UpdateVariant::MU: return "MU";
        case UpdateVariant::AU: return "AU";
        case UpdateVariant::AL: return "AL";
        case UpdateVariant::RS: return "RS";
    }
    return "?";
}

UpdateVariant parse_update_variant(const std::string& name) {
    if (name == "MU") return UpdateVariant::MU;
    if (name == "AU") return UpdateVariant::AU;
    if (name == "AL") return UpdateVariant::AL;
    if (name == "RS") return UpdateVariant::RS;
    throw ConfigError("unknown update variant '" + name + "' (expected MU, AU, AL or RS)");
}

std::string to_string(GroupInit g) { return g == GroupInit::kmeans ? "kmeans" : "random"; }

GroupInit parse_group_init(const std::string& name) {
    if (name == "kmeans") return GroupInit::kmeans;
    if (name == "random") return GroupInit::random;
    throw ConfigError("unknown group init '" + name + "' (expected kmeans or random)");
}

namespace {

void normalize_rows(Tensor& t) {
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        auto r = t.row(i);
        const double n = l2_norm(r);
        if (!(n >= ad::kNormEps)) throw ZeroVectorError("group row " + std::to_string(i) + " has zero norm");
        for (double& v : r) v /= n;
    }
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::size_t distinct_rows(const Tensor& t) {
    std::set<std::vector<double>> seen;
    for (std::size_t i = 0; i < t.dim(0); ++i) seen.emplace(t.row(i).begin(), t.row(i).end());
    return seen.size();
}

}  // namespace

GroupBank random_groups(std::size_t count, std::size_t dim, std::uint64_t seed) {
    if (count < 2) throw ConfigError("group bank needs at least 2 groups");
    if (dim == 0) throw ConfigError("group dimension must be positive");
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    GroupBank bank;
    bank.groups = Tensor({count, dim});
    for (double& v : bank.groups.values()) v = dist(rng);
    normalize_rows(bank.groups);
    bank.counts.assign(count, 0);
    return bank;
}

InitResult init_groups(GroupInit method, const Tensor& features, std::size_t count, std::size_t dim,
                       std::uint64_t seed, std::size_t kmeans_iters, std::size_t kmeans_restarts) {
    InitResult result;
    if (method == GroupInit::kmeans) {
        const std::size_t rows = features.empty() ? 0 : features.dim(0);
        if (rows >= count && distinct_rows(features) >= count) {
            if (features.dim(1) != dim) {
                throw DimensionError("init_groups: features " + shape_str(features.shape()) + " vs dim " +
                                     std::to_string(dim));
            }
            result.bank = random_groups(count, dim, seed);
            result.bank.groups = kmeans(features, count, kmeans_iters, seed, kmeans_restarts).centers;
            return result;
        }
        result.warnings.push_back("k-means group init needs " + std::to_string(count) + " distinct features, have " +
                                  std::to_string(rows ? distinct_rows(features) : 0) + "; using random init");
    }
    result.bank = random_groups(count, dim, seed);
    return result;
}

Assignment assign(const Tensor& features, const Tensor& groups) {
    const std::size_t n = features.dim(0), l = groups.dim(0);
    if (features.dim(1) != groups.dim(1)) {
        throw DimensionError("assign: features " + shape_str(features.shape()) + " vs groups " +
                             shape_str(groups.shape()));
    }
    Assignment a;
    a.index.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < l; ++k) {
            const double s = dot(features.row(i), groups.row(k));
            if (s > best_sim) {
                best_sim = s;
                best = k;
            }
        }
        a.index[i] = best;
    }
    return a;
}

// All four variants are written as g_k' = a_k * g_k + sum_i W[k,i] f_i with
// constant coefficients, followed by row normalization; only the coefficient
// recipe differs.
GroupUpdate momentum_update(const GroupBank& bank, const ad::Var& features, const Assignment& assignment,
                            std::uint64_t select_seed) {
    if (!(bank.beta >= 0.0 && bank.beta <= 1.0)) {
        throw ConfigError("group momentum beta must lie in [0,1], got " + std::to_string(bank.beta));
    }
    const std::size_t l = bank.size(), d = bank.dim(), n = features.shape().at(0);
    if (features.shape().at(1) != d || assignment.index.size() != n) {
        throw DimensionError("momentum_update: features " + shape_str(features.shape()) + ", " +
                             std::to_string(assignment.index.size()) + " assignments, bank " +
                             shape_str(bank.groups.shape()));
    }
    GroupUpdate update;
    update.members.assign(l, 0);
    std::vector<std::vector<std::size_t>> members(l);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = assignment.index[i];
        if (k >= l) throw Error("assignment index " + std::to_string(k) + " out of range");
        members[k].push_back(i);
        ++update.members[k];
    }

    Tensor keep({l, d});
    Tensor weights({l, n});
    Rng rng(select_seed);
    for (std::size_t k = 0; k < l; ++k) {
        const std::size_t m = members[k].size();
        double keep_coef = 1.0, mean_coef = 0.0;
        if (m > 0) {
            switch (bank.variant) {
                case UpdateVariant::MU:
                    keep_coef = bank.beta;
                    mean_coef = 1.0 - bank.beta;
                    break;
                case UpdateVariant::AU: {
                    const double total = static_cast<double>(bank.counts.at(k) + m);
                    keep_coef = 1.0 - 1.0 / total;
                    mean_coef = 1.0 / total;
                    break;
                }
                case UpdateVariant::AL:
                    keep_coef = 0.0;
                    mean_coef = 1.0;
                    break;
                case UpdateVariant::RS:
                    keep_coef = 0.0;
                    break;
            }
        }
        for (std::size_t j = 0; j < d; ++j) keep.at(k, j) = keep_coef * bank.groups.at(k, j);
        if (m == 0) continue;
        if (bank.variant == UpdateVariant::RS) {
            const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
            weights.at(k, members[k][pick]) = 1.0;
        } else {
            for (std::size_t i : members[k]) weights.at(k, i) = mean_coef / static_cast<double>(m);
        }
    }
    auto blended = ad::add(ad::constant(std::move(keep)), ad::matmul(ad::constant(std::move(weights)), features));
    update.groups = ad::l2_normalize(blended);
    return update;
}

void commit_update(GroupBank& bank, const GroupUpdate& update) {
    Tensor values = update.groups.value();
    normalize_rows(values);
    bank.groups = std::move(values);
    for (std::size_t k = 0; k < update.members.size(); ++k) bank.counts[k] += update.members[k];
    ++bank.iteration;
}

double beta_schedule(std::uint64_t t, std::uint64_t total, double beta_start, double beta_end) {
    if (total == 0) throw ConfigError("beta schedule needs a positive total iteration count");
    if (t > total) throw ConfigError("beta schedule: iteration " + std::to_string(t) + " beyond total " +
                                     std::to_string(total));
    const double frac = static_cast<double>(t) / static_cast<double>(total);
    return beta_start + frac * (beta_end - beta_start);
}

// ---- FeatureCache ----------------------------------------------------------

FeatureCache::FeatureCache(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), data_(capacity * dim, 0.0) {}

void FeatureCache::push(const Tensor& rows) {
    if (rows.empty() || capacity_ == 0) return;
    if (rows.dim(1) != dim_) {
        throw DimensionError("feature cache of width " + std::to_string(dim_) + " given " + shape_str(rows.shape()));
    }
    for (std::size_t i = 0; i < rows.dim(0); ++i) {
        auto r = rows.row(i);
        std::copy(r.begin(), r.end(), data_.begin() + head_ * dim_);
        head_ = (head_ + 1) % capacity_;
        size_ = std::min(size_ + 1, capacity_);
    }
}

Tensor FeatureCache::rows() const {
    Tensor out({size_, dim_});
    const std::size_t start = (head_ + capacity_ - size_) % std::max<std::size_t>(capacity_, 1);
    for (std::size_t i = 0; i < size_; ++i) {
        const std::size_t slot = (start + i) % capacity_;
        std::copy(data_.begin() + slot * dim_, data_.begin() + (slot + 1) * dim_, out.data() + i * dim_);
    }
    return out;
}

void FeatureCache::clear() {
    head_ = 0;
    size_ = 0;
}

// ---- k-means ---------------------------------------------------------------

namespace {

KMeansResult kmeans_single(const Tensor& points, std::size_t k, std::size_t max_iters, std::uint64_t seed) {
    const std::size_t m = points.dim(0), d = points.dim(1);
    Rng rng(seed);

    // k-means++ seeding
    Tensor centers({k, d});
    std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t chosen = first;
        if (c > 0) {
            double total = 0.0;
            for (double v : nearest) total += v;
            if (total > 0.0) {
                double target = std::uniform_real_distribution<double>(0.0, total)(rng);
                chosen = m - 1;
                for (std::size_t i = 0; i < m; ++i) {
                    if (nearest[i] <= 0.0) continue;
                    target -= nearest[i];
                    if (target < 0.0) {
                        chosen = i;
                        break;
                    }
                }
                while (nearest[chosen] <= 0.0 && chosen > 0) --chosen;
            } else {
                chosen = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
            }
        }
        std::copy(points.row(chosen).begin(), points.row(chosen).end(), centers.row(c).begin());
        for (std::size_t i = 0; i < m; ++i)
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(c)));
    }

    KMeansResult result;
    result.labels.assign(m, k);  // k = unassigned sentinel
    std::vector<double> dist(m);
    const std::size_t passes = std::max<std::size_t>(max_iters, 1);
    for (std::size_t iter = 0; iter < passes; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dd = squared_distance(points.row(i), centers.row(c));
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            if (result.labels[i] != best) changed = true;
            result.labels[i] = best;
            dist[i] = best_d;
            inertia += best_d;
        }
        result.inertia_history.push_back(inertia);
        result.inertia = inertia;
        result.iterations = iter + 1;
        if (!changed && iter > 0) break;

        // update step
        std::vector<std::size_t> sizes(k, 0);
        centers.fill(0.0);
        for (std::size_t i = 0; i < m; ++i) {
            ++sizes[result.labels[i]];
            auto c = centers.row(result.labels[i]);
            auto p = points.row(i);
            for (std::size_t j = 0; j < d; ++j) c[j] += p[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;
            for (double& v : centers.row(c)) v /= static_cast<double>(sizes[c]);
        }
        // Reseed empty clusters with the worst-served point.
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 1; i < m; ++i)
                if (dist[i] > dist[far]) far = i;
            std::copy(points.row(far).begin(), points.row(far).end(), centers.row(c).begin());
            --sizes[result.labels[far]];
            result.labels[far] = c;
            sizes[c] = 1;
            dist[far] = 0.0;
        }
    }

    result.centers = std::move(centers);
    return result;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, std::size_t k, std::size_t max_iters, std::uint64_t seed,
                    std::size_t restarts) {
    if (k == 0) throw ConfigError("kmeans: k must be positive");
    const std::size_t m = points.empty() ? 0 : points.dim(0);
    if (m < k) {
        throw InsufficientDataError("kmeans: " + std::to_string(m) + " points cannot form " + std::to_string(k) +
                                    " clusters");
    }
    KMeansResult best;
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        auto run = kmeans_single(points, k, max_iters, r == 0 ? seed : derive_seed(seed, {r}));
        if (r == 0 || run.inertia < best.inertia) best = std::move(run);
    }
    // Means of unit vectors can be shorter than 1; map back to the sphere.
    for (std::size_t c = 0; c < k; ++c) {
        auto row = best.centers.row(c);
        const double n = l2_norm(row);
        if (n >= ad::kNormEps)
            for (double& v : row) v /= n;
    }
    return best;
}

// ---- periodic reset --------------------------------------------------------

ResetOutcome periodic_reset(GroupBank& bank, const FeatureCache& cache, EncoderPair& pair, ResetFlags flags,
                            std::uint64_t seed, std::size_t kmeans_iters, std::size_t kmeans_restarts) {
    ResetOutcome out;
    if (flags.periodic_clustering) {
        if (cache.size() < bank.size()) {
            out.warnings.push_back("periodic clustering skipped: cache holds " + std::to_string(cache.size()) +
                                   " features for " + std::to_string(bank.size()) + " groups");
        } else {
            bank.groups = kmeans(cache.rows(), bank.size(), kmeans_iters, seed, kmeans_restarts).centers;
            std::fill(bank.counts.begin(), bank.counts.end(), 0);
            out.clustered = true;
        }
    }
    if (flags.reset_momentum) {
        pair.hard_reset_momentum();
        out.momentum_reset = true;
    }
    return out;
}

Occupancy occupancy_stats(std::span<const std::size_t> assignments, std::size_t group_count) {
    Occupancy occ;
    occ.histogram.assign(group_count, 0);
    for (std::size_t a : assignments) ++occ.histogram.at(a);
    std::size_t top = 0;
    for (std::size_t c : occ.histogram) {
        top = std::max(top, c);
        if (c == 0) ++occ.empty;
    }
    occ.max_share = assignments.empty() ? 0.0 : static_cast<double>(top) / static_cast<double>(assignments.size());
    return occ;
}

}  // namespace smog
