#pragma once

// Ablation grids: each suite varies one component of the method and reports
// linear-probe accuracy of the trained backbone.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "smog/config.hpp"
#include "smog/dataio.hpp"

namespace smog {

enum class Suite { beta, tricks, groups, update_op, objective };

std::string to_string(Suite s);
Suite parse_suite(const std::string& name);

struct AblationVariant {
    std::string name;
    std::vector<std::string> overrides;  // "section.key=value"
};

std::vector<AblationVariant> suite_variants(Suite suite);

struct RunOutcome {
    double top1 = 0.0;
    bool collapsed = false;  // sustained occupancy collapse or a zero-norm abort
    bool aborted = false;
    double final_max_share = 0.0;
    std::size_t iterations = 0;
};

struct AblationRow {
    std::string variant;
    std::vector<std::uint64_t> seeds;
    std::vector<RunOutcome> runs;

    double mean_top1() const;
    std::size_t collapsed_runs() const;
};

// Pretrains under `config` and probes the backbone on `dataset`. Collapse
// aborts are caught; the probe then runs on the weights at the abort.
RunOutcome train_and_probe(const TrainConfig& config, const Dataset& dataset, std::ostream* log = nullptr);

// Probe accuracy of the encoder as initialized for `config`.
double random_init_probe(const TrainConfig& config, const Dataset& dataset);

std::vector<AblationRow> run_suite(Suite suite, const TrainConfig& base, const Dataset& dataset,
                                   const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

// One row per variant: variant,seeds,mean_top1,top1_per_seed,collapsed_runs.
void write_suite_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace smog
