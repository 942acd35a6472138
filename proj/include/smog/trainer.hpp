#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smog/config.hpp"
#include "smog/dataio.hpp"
#include "smog/encoder.hpp"
#include "smog/grouping.hpp"
#include "smog/optim.hpp"

namespace smog {

struct MetricsRecord {
    std::uint64_t iteration = 0;
    std::uint64_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double beta = 0.0;
    double max_share = 0.0;  // largest group's share of this batch's assignments
    std::size_t empty_groups = 0;
    double drift = 0.0;  // ||momentum - online||
    double wall_ms = 0.0;
};

// metrics.csv omits wall time so that equal runs give equal files; wall time
// goes to timing.csv.
std::string metrics_header();
std::string metrics_row(const MetricsRecord& r);

// Raised when a normalization hits a zero row. Carries the occupancy that
// preceded it.
class CollapseError : public Error {
public:
    using Error::Error;
};

// Tensors of the latest step, for replaying the group update.
struct StepTrace {
    Tensor bank_before;   // stored bank entering the step
    Tensor bank_in_loss;  // in-graph groups the loss used
    Tensor features;      // online large-view features fed to the update
    Assignment assignment;
    double beta = 0.0;
};

inline constexpr std::size_t kCollapseWindow = 50;
inline constexpr double kCollapseShare = 0.9;

// Streak of consecutive iterations whose largest group holds more than
// kCollapseShare of the assignments.
class CollapseMonitor {
public:
    // True only on the iteration the streak first reaches kCollapseWindow.
    bool observe(double max_share);
    std::uint64_t streak() const { return streak_; }
    bool triggered() const { return triggered_; }
    void restore(std::uint64_t streak, bool triggered) {
        streak_ = streak;
        triggered_ = triggered;
    }

private:
    std::uint64_t streak_ = 0;
    bool triggered_ = false;
};

class Trainer {
public:
    Trainer(TrainConfig config, UnlabeledImages data);

    // Fills the cache through the momentum branch and initializes the bank.
    // Returns warnings (random fallback).
    std::vector<std::string> warm_start();

    // Runs iteration t = iteration() + 1. Resets and collapse detection
    // append to events().
    MetricsRecord step();

    std::uint64_t iteration() const { return iteration_; }
    std::uint64_t total_iterations() const { return total_; }
    std::uint64_t iterations_per_epoch() const { return per_epoch_; }
    bool done() const { return iteration_ >= total_; }
    bool collapsed() const { return collapse_.triggered(); }

    Checkpoint checkpoint();
    // Returns warnings (config hash mismatch).
    std::vector<std::string> restore(const Checkpoint& checkpoint);

    const TrainConfig& config() const { return config_; }
    EncoderPair& encoder() { return pair_; }
    const GroupBank& bank() const { return bank_; }
    const FeatureCache& cache() const { return cache_; }
    const OptimState& optimizer() const { return opt_; }

    // Events since the last call: "<iteration> <name> <detail>".
    std::vector<std::string> take_events();

    void set_tracing(bool on) { tracing_ = on; }
    const StepTrace& trace() const { return trace_; }

    // Sample ids of batch `b` in epoch `e`.
    std::vector<std::size_t> batch_ids(std::uint64_t epoch, std::uint64_t b) const;

private:
    void round_state();
    void event(const std::string& name, const std::string& detail);

    TrainConfig config_;
    UnlabeledImages data_;
    EncoderPair pair_;
    GroupBank bank_;
    FeatureCache cache_;
    OptimState opt_;
    std::vector<ad::Parameter*> params_;
    std::uint64_t per_epoch_ = 0;
    std::uint64_t total_ = 0;
    std::uint64_t warmup_ = 0;
    double base_lr_ = 0.0;
    std::uint64_t iteration_ = 0;
    CollapseMonitor collapse_;
    Occupancy last_occupancy_;
    std::vector<std::string> events_;
    bool tracing_ = false;
    StepTrace trace_;
};

struct RunOptions {
    std::optional<std::filesystem::path> resume;
    // Stop after this iteration (checkpointing there); 0 runs to the end.
    std::uint64_t stop_after = 0;
    // Called after each epoch's last iteration.
    std::function<void(Trainer&, std::uint64_t epoch)> on_epoch_end;
    std::ostream* log = nullptr;
};

struct RunResult {
    std::vector<MetricsRecord> metrics;  // this invocation's iterations
    bool collapsed = false;
    std::filesystem::path final_checkpoint;
};

// Writes <out_dir>/{config.toml, metrics.csv, timing.csv, events.log,
// ckpt_<iter>.bin}. On resume, metrics rows after the checkpoint are
// dropped before appending.
RunResult run_pretraining(const TrainConfig& config, UnlabeledImages data, const RunOptions& options = {});

// Rebuilds the encoder and bank of a checkpoint under its stored config.
struct LoadedModel {
    TrainConfig config;
    EncoderPair pair;
    GroupBank bank;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

// SMOG_THREADS if set, else the config value (0 leaves the default).
void apply_thread_setting(std::size_t configured);

}  // namespace smog
