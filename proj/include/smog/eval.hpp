#pragma once

// Frozen-feature evaluation: linear probe, kNN and group purity.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "smog/encoder.hpp"
#include "smog/tensor.hpp"

namespace smog {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Per-class shuffle, then the first round(test_fraction * n_c) of each class
// go to test.
Split stratified_split(std::span<const std::uint16_t> labels, double test_fraction, std::uint64_t seed);

struct ProbeConfig {
    std::size_t epochs = 90;
    std::size_t batch = 64;
    double lr = 0.1;  // cosine-decayed to 0
    double momentum = 0.9;
    double weight_decay = 0.0;
    // Features are standardized with train-split statistics.
    bool standardize = true;
};

struct ProbeResult {
    double top1 = 0.0;
    std::vector<double> per_class;   // NaN for a class absent from the test split
    std::vector<double> loss_curve;  // mean train loss per epoch
};

// Softmax regression on frozen features.
ProbeResult linear_probe(const Tensor& features, std::span<const std::uint16_t> labels, const Split& split,
                         std::size_t class_count, std::uint64_t seed, const ProbeConfig& config = {});

// Cosine kNN: each of the k nearest train points votes exp(sim / temperature)
// for its class. Ties go to the lower class id, equal similarities to the
// lower train index.
double knn_eval(const Tensor& features, std::span<const std::uint16_t> labels, const Split& split,
                std::size_t class_count, std::size_t k = 20, double temperature = 0.07);

struct EntropyReport {
    std::vector<std::size_t> groups;  // nonempty group ids, ascending
    std::vector<std::size_t> sizes;
    std::vector<double> entropy;  // natural log
    double mean_entropy = 0.0;    // unweighted over nonempty groups
    double baseline_mean_entropy = 0.0;
    std::vector<double> histogram;  // density over [0, ln C_cls]
    std::size_t class_count = 0;
};

double entropy_of_counts(std::span<const std::size_t> counts);

// Baseline: the same instances assigned uniformly at random to l groups.
EntropyReport group_entropy(std::span<const std::size_t> assignments, std::span<const std::uint16_t> labels,
                            std::size_t group_count, std::size_t class_count, std::uint64_t seed,
                            std::size_t bins = 20);

void write_probe_csv(const ProbeResult& result, const std::filesystem::path& path);
void write_entropy_csv(const EntropyReport& report, const std::filesystem::path& path);
// (bin_lo, bin_hi, density)
void write_entropy_histogram_csv(const EntropyReport& report, const std::filesystem::path& path);

// Online backbone outputs in eval mode, computed in chunks.
Tensor extract_features(EncoderPair& pair, const Tensor& images, std::size_t chunk = 256);
// Momentum projections in eval mode, for group assignment.
Tensor extract_projections(EncoderPair& pair, const Tensor& images, std::size_t chunk = 256);

}  // namespace smog
