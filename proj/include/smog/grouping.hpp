#pragma once

// Group bank and its in-graph momentum update.
//
// Each iteration the batch features are assigned to their most similar group
// and every group with members moves toward the members' mean:
//
//   g_k <- normalize(beta * g_k + (1 - beta) * mean_{c_t = k} f_t)
//
// The update is built on the autodiff tape, so the loss computed against
// the updated groups back-propagates into the member features. After the
// optimizer step the values are detached and stored.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smog/autodiff.hpp"
#include "smog/tensor.hpp"

namespace smog {

class EncoderPair;

// MU: momentum update, AU: running average with lifetime count,
// AL: adopt the latest batch mean, RS: adopt a randomly selected member.
enum class UpdateVariant { MU, AU, AL, RS };
enum class GroupInit { random, kmeans };

std::string to_string(UpdateVariant v);
UpdateVariant parse_update_variant(const std::string& name);
std::string to_string(GroupInit g);
GroupInit parse_group_init(const std::string& name);

struct GroupBank {
    Tensor groups;  // l x d, unit rows
    double beta = 1.0;
    UpdateVariant variant = UpdateVariant::MU;
    std::vector<std::uint64_t> counts;  // lifetime members per group (AU)
    std::uint64_t iteration = 0;

    std::size_t size() const { return groups.empty() ? 0 : groups.dim(0); }
    std::size_t dim() const { return groups.empty() ? 0 : groups.dim(1); }
};

struct Assignment {
    std::vector<std::size_t> index;
};

// Groups fixed for a batch: rows drawn uniformly on the sphere.
GroupBank random_groups(std::size_t count, std::size_t dim, std::uint64_t seed);

struct InitResult {
    GroupBank bank;
    std::vector<std::string> warnings;
};

// k-means mode needs at least `count` distinct feature rows, otherwise it
// falls back to random init and reports a warning.
InitResult init_groups(GroupInit method, const Tensor& features, std::size_t count, std::size_t dim,
                       std::uint64_t seed, std::size_t kmeans_iters = 25, std::size_t kmeans_restarts = 3);

// argmax_k cos(f_i, g_k); ties go to the lowest index.
Assignment assign(const Tensor& features, const Tensor& groups);

struct GroupUpdate {
    ad::Var groups;                    // l x d, on the tape when features are
    std::vector<std::size_t> members;  // batch members per group
};

// In-graph update of every group with at least one member, per the bank's
// variant and beta. Groups without members pass through unchanged.
// `select_seed` drives the RS variant's member choice.
GroupUpdate momentum_update(const GroupBank& bank, const ad::Var& features, const Assignment& assignment,
                            std::uint64_t select_seed = 0);

// Detaches the updated values into the bank, re-normalizes the rows and
// adds this batch's members to the lifetime counts.
void commit_update(GroupBank& bank, const GroupUpdate& update);

// Linear ramp from beta_start at t = 0 to beta_end at t = total.
double beta_schedule(std::uint64_t t, std::uint64_t total, double beta_start = 1.0, double beta_end = 0.99);

// Ring buffer of detached, normalized features from recent iterations.
class FeatureCache {
public:
    FeatureCache(std::size_t capacity, std::size_t dim);

    void push(const Tensor& rows);
    // Oldest first.
    Tensor rows() const;
    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    void clear();

private:
    std::size_t capacity_;
    std::size_t dim_;
    std::size_t head_ = 0;  // next write slot
    std::size_t size_ = 0;
    std::vector<double> data_;
};

struct KMeansResult {
    Tensor centers;                      // k x d, L2-normalized
    std::vector<std::size_t> labels;     // cluster per point
    double inertia = 0.0;                // final sum of squared distances to the (unnormalized) means
    std::vector<double> inertia_history; // after each assignment pass
    std::size_t iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the assignment stops
// changing or `max_iters` passes. Empty clusters are reseeded with the point
// farthest from its current center. With restarts > 1 the lowest-inertia run
// of several independent seedings is returned.
KMeansResult kmeans(const Tensor& points, std::size_t k, std::size_t max_iters, std::uint64_t seed,
                    std::size_t restarts = 3);

struct ResetFlags {
    bool periodic_clustering = true;  // re-cluster the bank from the cache
    bool reset_momentum = true;       // copy online weights into the momentum branch
};

struct ResetOutcome {
    bool clustered = false;
    bool momentum_reset = false;
    std::vector<std::string> warnings;
};

ResetOutcome periodic_reset(GroupBank& bank, const FeatureCache& cache, EncoderPair& pair, ResetFlags flags,
                            std::uint64_t seed, std::size_t kmeans_iters = 25, std::size_t kmeans_restarts = 3);

struct Occupancy {
    std::vector<std::size_t> histogram;
    double max_share = 0.0;
    std::size_t empty = 0;
};

Occupancy occupancy_stats(std::span<const std::size_t> assignments, std::size_t group_count);

}  // namespace smog
