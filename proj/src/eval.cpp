#include "smog/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "smog/errors.hpp"
#include "smog/rng.hpp"

namespace smog {

Split stratified_split(std::span<const std::uint16_t> labels, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
    std::size_t classes = 0;
    for (auto l : labels) classes = std::max<std::size_t>(classes, l + 1);
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    Split split;
    for (std::size_t c = 0; c < classes; ++c) {
        auto& m = members[c];
        Rng rng(derive_seed(seed, {tag(Stream::probe), 0, c}));
        std::shuffle(m.begin(), m.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(m.size())));
        split.test.insert(split.test.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_test));
        split.train.insert(split.train.end(), m.begin() + static_cast<std::ptrdiff_t>(n_test), m.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

namespace {

void check_features(const Tensor& features, std::span<const std::uint16_t> labels, std::size_t class_count) {
    if (features.rank() != 2 || features.dim(0) != labels.size()) {
        throw DimensionError("features " + shape_str(features.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
    for (auto l : labels)
        if (l >= class_count) throw Error("label " + std::to_string(l) + " out of range");
}

}  // namespace

ProbeResult linear_probe(const Tensor& features, std::span<const std::uint16_t> labels, const Split& split,
                         std::size_t class_count, std::uint64_t seed, const ProbeConfig& config) {
    check_features(features, labels, class_count);
    {
        std::vector<bool> seen(class_count, false);
        std::size_t distinct = 0;
        for (auto i : split.train)
            if (!seen[labels[i]]) seen[labels[i]] = true, ++distinct;
        if (distinct < 2) throw InsufficientDataError("linear probe needs at least 2 classes in the train split");
    }
    if (split.test.empty()) throw InsufficientDataError("linear probe needs a non-empty test split");
    const std::size_t d = features.dim(1), k = class_count;

    std::vector<double> mu(d, 0.0), sd(d, 1.0);
    if (config.standardize) {
        for (auto i : split.train)
            for (std::size_t j = 0; j < d; ++j) mu[j] += features.at(i, j);
        for (double& m : mu) m /= static_cast<double>(split.train.size());
        std::vector<double> var(d, 0.0);
        for (auto i : split.train)
            for (std::size_t j = 0; j < d; ++j) var[j] += std::pow(features.at(i, j) - mu[j], 2);
        for (std::size_t j = 0; j < d; ++j) {
            const double s = std::sqrt(var[j] / static_cast<double>(split.train.size()));
            sd[j] = s > 1e-12 ? s : 1.0;
        }
    }
    auto input = [&](std::size_t i, std::size_t j) { return (features.at(i, j) - mu[j]) / sd[j]; };

    // W: d x k, b: k.
    std::vector<double> w(d * k, 0.0), b(k, 0.0), vw(d * k, 0.0), vb(k, 0.0), gw(d * k), gb(k), logits(k);
    std::vector<std::size_t> order = split.train;
    ProbeResult result;
    const std::size_t steps_per_epoch = (order.size() + config.batch - 1) / config.batch;
    const double total_steps = static_cast<double>(config.epochs * steps_per_epoch);
    std::size_t step = 0;

    auto forward = [&](std::size_t i) {
        for (std::size_t c = 0; c < k; ++c) logits[c] = b[c];
        for (std::size_t j = 0; j < d; ++j) {
            const double x = input(i, j);
            for (std::size_t c = 0; c < k; ++c) logits[c] += x * w[j * k + c];
        }
    };

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(derive_seed(seed, {tag(Stream::probe), 1, epoch}));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t end = std::min(order.size(), start + config.batch);
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::size_t s = start; s < end; ++s) {
                const std::size_t i = order[s];
                forward(i);
                const double m = *std::max_element(logits.begin(), logits.end());
                double z = 0.0;
                for (double& v : logits) z += (v = std::exp(v - m));
                epoch_loss += -std::log(logits[labels[i]] / z);
                for (std::size_t c = 0; c < k; ++c) {
                    const double g = logits[c] / z - (c == labels[i] ? 1.0 : 0.0);
                    gb[c] += g;
                    for (std::size_t j = 0; j < d; ++j) gw[j * k + c] += g * input(i, j);
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            const double lr =
                config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
            for (std::size_t q = 0; q < w.size(); ++q) {
                vw[q] = config.momentum * vw[q] + gw[q] * inv + config.weight_decay * w[q];
                w[q] -= lr * vw[q];
            }
            for (std::size_t c = 0; c < k; ++c) {
                vb[c] = config.momentum * vb[c] + gb[c] * inv;
                b[c] -= lr * vb[c];
            }
            ++step;
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    std::vector<std::size_t> hits(k, 0), totals(k, 0);
    std::size_t correct = 0;
    for (auto i : split.test) {
        forward(i);
        const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        ++totals[labels[i]];
        if (pred == labels[i]) ++hits[labels[i]], ++correct;
    }
    result.top1 = static_cast<double>(correct) / static_cast<double>(split.test.size());
    for (std::size_t c = 0; c < k; ++c) {
        result.per_class.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c])
                                             : std::numeric_limits<double>::quiet_NaN());
    }
    return result;
}

double knn_eval(const Tensor& features, std::span<const std::uint16_t> labels, const Split& split,
                std::size_t class_count, std::size_t k, double temperature) {
    check_features(features, labels, class_count);
    if (split.train.empty() || split.test.empty()) throw InsufficientDataError("kNN needs train and test points");
    if (k == 0) throw ConfigError("kNN needs k >= 1");
    const std::size_t d = features.dim(1);
    Tensor unit = features;
    for (std::size_t i = 0; i < unit.dim(0); ++i) {
        const double n = l2_norm(unit.row(i));
        if (n > 0.0)
            for (double& v : unit.row(i)) v /= n;
    }
    const std::size_t kk = std::min(k, split.train.size());
    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> sims(split.train.size());
    std::vector<double> votes(class_count);
    for (auto q : split.test) {
        for (std::size_t t = 0; t < split.train.size(); ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += unit.at(q, j) * unit.at(split.train[t], j);
            sims[t] = {s, t};
        }
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(kk), sims.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
        std::fill(votes.begin(), votes.end(), 0.0);
        for (std::size_t r = 0; r < kk; ++r)
            votes[labels[split.train[sims[r].second]]] += std::exp(sims[r].first / temperature);
        const auto pred = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        if (pred == labels[q]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.test.size());
}

double entropy_of_counts(std::span<const std::size_t> counts) {
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    if (total == 0.0) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
    }
    return std::max(h, 0.0);
}

namespace {

struct GroupEntropies {
    std::vector<std::size_t> groups, sizes;
    std::vector<double> entropy;
    double mean = 0.0;
};

GroupEntropies entropies(std::span<const std::size_t> assignments, std::span<const std::uint16_t> labels,
                         std::size_t group_count, std::size_t class_count) {
    std::vector<std::size_t> table(group_count * class_count, 0);
    for (std::size_t i = 0; i < assignments.size(); ++i) ++table[assignments[i] * class_count + labels[i]];
    GroupEntropies out;
    for (std::size_t g = 0; g < group_count; ++g) {
        std::span<const std::size_t> row(table.data() + g * class_count, class_count);
        const std::size_t size = std::accumulate(row.begin(), row.end(), std::size_t{0});
        if (size == 0) continue;
        out.groups.push_back(g);
        out.sizes.push_back(size);
        out.entropy.push_back(entropy_of_counts(row));
    }
    if (!out.entropy.empty()) {
        out.mean = std::accumulate(out.entropy.begin(), out.entropy.end(), 0.0) /
                   static_cast<double>(out.entropy.size());
    }
    return out;
}

}  // namespace

EntropyReport group_entropy(std::span<const std::size_t> assignments, std::span<const std::uint16_t> labels,
                            std::size_t group_count, std::size_t class_count, std::uint64_t seed, std::size_t bins) {
    if (assignments.size() != labels.size()) throw DimensionError("group_entropy: assignment and label counts differ");
    for (auto a : assignments)
        if (a >= group_count) throw Error("group_entropy: group " + std::to_string(a) + " out of range");
    for (auto l : labels)
        if (l >= class_count) throw Error("group_entropy: label " + std::to_string(l) + " out of range");

    auto observed = entropies(assignments, labels, group_count, class_count);
    Rng rng(derive_seed(seed, {tag(Stream::entropy_baseline)}));
    std::uniform_int_distribution<std::size_t> pick(0, group_count - 1);
    std::vector<std::size_t> random(assignments.size());
    for (auto& r : random) r = pick(rng);

    EntropyReport report;
    report.class_count = class_count;
    report.groups = std::move(observed.groups);
    report.sizes = std::move(observed.sizes);
    report.entropy = std::move(observed.entropy);
    report.mean_entropy = observed.mean;
    report.baseline_mean_entropy = entropies(random, labels, group_count, class_count).mean;

    report.histogram.assign(bins, 0.0);
    const double top = std::log(static_cast<double>(std::max<std::size_t>(class_count, 2)));
    const double width = top / static_cast<double>(bins);
    for (double h : report.entropy) {
        const auto bin = std::min(bins - 1, static_cast<std::size_t>(h / width));
        report.histogram[bin] += 1.0;
    }
    if (!report.entropy.empty())
        for (double& v : report.histogram) v /= static_cast<double>(report.entropy.size()) * width;
    return report;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(17);
    return out;
}

}  // namespace

void write_probe_csv(const ProbeResult& r, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "metric,value\ntop1," << r.top1 << '\n';
    for (std::size_t c = 0; c < r.per_class.size(); ++c) out << "class_" << c << ',' << r.per_class[c] << '\n';
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) out << "loss_epoch_" << e << ',' << r.loss_curve[e] << '\n';
}

void write_entropy_csv(const EntropyReport& r, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "group,size,entropy\n";
    for (std::size_t i = 0; i < r.groups.size(); ++i) out << r.groups[i] << ',' << r.sizes[i] << ',' << r.entropy[i] << '\n';
    out << "mean,," << r.mean_entropy << "\nbaseline_mean,," << r.baseline_mean_entropy << '\n';
}

void write_entropy_histogram_csv(const EntropyReport& r, const std::filesystem::path& path) {
    auto out = open_csv(path);
    const double top = std::log(static_cast<double>(std::max<std::size_t>(r.class_count, 2)));
    const double width = top / static_cast<double>(r.histogram.size());
    out << "bin_lo,bin_hi,density\n";
    for (std::size_t b = 0; b < r.histogram.size(); ++b)
        out << width * static_cast<double>(b) << ',' << width * static_cast<double>(b + 1) << ',' << r.histogram[b] << '\n';
}

namespace {

template <typename Fn>
Tensor chunked(const Tensor& images, std::size_t chunk, Fn&& fn) {
    const std::size_t n = images.dim(0), per = images.numel() / std::max<std::size_t>(n, 1);
    std::vector<Tensor> parts;
    for (std::size_t s = 0; s < n; s += chunk) {
        const std::size_t e = std::min(n, s + chunk);
        Shape shape = images.shape();
        shape[0] = e - s;
        Tensor part(shape);
        std::copy_n(images.data() + s * per, (e - s) * per, part.data());
        parts.push_back(fn(part));
    }
    return vstack(parts);
}

}  // namespace

Tensor extract_features(EncoderPair& pair, const Tensor& images, std::size_t chunk) {
    return chunked(images, chunk, [&](const Tensor& part) { return pair.representation(part); });
}

Tensor extract_projections(EncoderPair& pair, const Tensor& images, std::size_t chunk) {
    return chunked(images, chunk, [&](const Tensor& part) { return pair.forward_momentum(part, ad::BnMode::eval); });
}

}  // namespace smog
