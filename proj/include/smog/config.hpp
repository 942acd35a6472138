#pragma once

// Run configuration. Files use a TOML subset:
//
//   # comment
//   [section]
//   key = 42 | 0.5 | true | "text" | [16, 32, 64]
//
// Every key has a default except data.path and run.out_dir. Unknown keys are
// errors. The canonical form lists every key, sorted, one per line; its
// FNV-1a hash identifies the configuration in checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smog/augment.hpp"
#include "smog/encoder.hpp"
#include "smog/eval.hpp"
#include "smog/grouping.hpp"
#include "smog/loss.hpp"
#include "smog/optim.hpp"

namespace smog {

struct GroupingConfig {
    std::size_t count = 32;
    double beta_start = 1.0;
    double beta_end = 0.99;
    UpdateVariant update = UpdateVariant::MU;
    GroupInit init = GroupInit::kmeans;
    std::size_t init_batches = 4;
    std::size_t reset_period = 300;
    bool periodic_clustering = true;
    bool reset_momentum = true;
    // Rows kept for re-clustering; 0 means reset_period * batch_size.
    std::size_t cache_capacity = 0;
    std::size_t kmeans_iters = 25;
    std::size_t kmeans_restarts = 3;
};

struct EvalConfig {
    double test_fraction = 0.2;
    std::size_t knn_k = 20;
    // kNN monitor cadence in epochs; 0 disables.
    std::size_t monitor_every = 0;
    ProbeConfig probe;
};

struct TrainConfig {
    std::string data_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    std::size_t warmup_epochs = 5;
    // 0 writes only the final checkpoint.
    std::size_t checkpoint_every = 0;
    // 0 keeps the OpenMP default; SMOG_THREADS overrides either.
    std::size_t threads = 0;

    double alpha = 0.99;
    NetworkSpec network;
    GroupingConfig grouping;
    LossConfig loss;
    bool multi_crop = true;
    AugmentConfig augment;
    OptimConfig optim;
    EvalConfig eval;

    void validate() const;
    std::size_t cache_capacity() const;
    std::size_t small_views() const { return multi_crop ? augment.small_views : 0; }
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
// "section.key=value" with the file's literal syntax.
void apply_override(TrainConfig& config, const std::string& assignment);

std::string canonical_config(const TrainConfig& config);
std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t config_hash(const TrainConfig& config);

// Every key with its default, for documentation and `pretrain --print-defaults`.
std::vector<std::string> config_keys();

}  // namespace smog
