#include "smog/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include "smog/errors.hpp"
#include "smog/eval.hpp"
#include "smog/trainer.hpp"

namespace smog {

std::string to_string(Suite s) {
    switch (s) {
        case Suite::beta: return "beta";
        case Suite::tricks: return "tricks";
        case Suite::groups: return "groups";
        case Suite::update_op: return "update-op";
        case Suite::objective: return "objective";
    }
    return "?";
}

Suite parse_suite(const std::string& name) {
    for (auto s : {Suite::beta, Suite::tricks, Suite::groups, Suite::update_op, Suite::objective})
        if (to_string(s) == name) return s;
    throw ConfigError("unknown ablation suite '" + name + "' (expected beta, tricks, groups, update-op or objective)");
}

std::vector<AblationVariant> suite_variants(Suite suite) {
    switch (suite) {
        case Suite::beta:
            return {{"fixed 0.99", {"group.beta_start=0.99", "group.beta_end=0.99"}},
                    {"1.0 -> 0.9", {"group.beta_start=1.0", "group.beta_end=0.9"}},
                    {"1.0 -> 0.99", {"group.beta_start=1.0", "group.beta_end=0.99"}},
                    {"1.0 -> 0.999", {"group.beta_start=1.0", "group.beta_end=0.999"}}};
        case Suite::tricks:
            return {{"None", {"group.periodic_clustering=false", "group.reset_momentum=false"}},
                    {"pd", {"group.periodic_clustering=true", "group.reset_momentum=false"}},
                    {"reset", {"group.periodic_clustering=false", "group.reset_momentum=true"}},
                    {"pd & reset", {"group.periodic_clustering=true", "group.reset_momentum=true"}}};
        case Suite::groups:
            return {{"8", {"group.count=8"}}, {"16", {"group.count=16"}}, {"32", {"group.count=32"}}, {"64", {"group.count=64"}}};
        case Suite::update_op:
            return {{"RS", {"group.update=\"RS\""}},
                    {"AL", {"group.update=\"AL\""}},
                    {"AU", {"group.update=\"AU\""}},
                    {"MU", {"group.update=\"MU\""}}};
        case Suite::objective:
            return {{"eq1", {"loss.objective=\"eq1\""}}, {"eq2", {"loss.objective=\"eq2\""}}, {"eq3", {"loss.objective=\"eq3\""}}};
    }
    return {};
}

double AblationRow::mean_top1() const {
    double s = 0.0;
    for (const auto& r : runs) s += r.top1;
    return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

std::size_t AblationRow::collapsed_runs() const {
    std::size_t n = 0;
    for (const auto& r : runs) n += r.collapsed;
    return n;
}

namespace {

double probe_encoder(EncoderPair& pair, const TrainConfig& config, const Dataset& dataset) {
    const auto features = extract_features(pair, dataset.images);
    const auto split = stratified_split(dataset.labels, config.eval.test_fraction, config.seed);
    return linear_probe(features, dataset.labels, split, dataset.class_count, config.seed, config.eval.probe).top1;
}

}  // namespace

RunOutcome train_and_probe(const TrainConfig& config, const Dataset& dataset, std::ostream* log) {
    apply_thread_setting(config.threads);
    Trainer trainer(config, UnlabeledImages(dataset));
    trainer.warm_start();
    RunOutcome out;
    try {
        while (!trainer.done()) {
            const auto r = trainer.step();
            out.final_max_share = r.max_share;
            if (log && r.iteration % trainer.iterations_per_epoch() == 0 &&
                (r.epoch + 1) % 10 == 0) {
                *log << "  epoch " << r.epoch + 1 << " loss " << r.loss << " max_share " << r.max_share << '\n';
            }
        }
    } catch (const CollapseError& e) {
        out.aborted = true;
        if (log) *log << "  " << e.what() << '\n';
    }
    out.iterations = trainer.iteration();
    out.collapsed = out.aborted || trainer.collapsed();
    out.top1 = probe_encoder(trainer.encoder(), config, dataset);
    return out;
}

double random_init_probe(const TrainConfig& config, const Dataset& dataset) {
    apply_thread_setting(config.threads);
    Trainer trainer(config, UnlabeledImages(dataset));
    return probe_encoder(trainer.encoder(), config, dataset);
}

std::vector<AblationRow> run_suite(Suite suite, const TrainConfig& base, const Dataset& dataset,
                                   const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    std::vector<AblationRow> rows;
    for (const auto& variant : suite_variants(suite)) {
        AblationRow row;
        row.variant = variant.name;
        for (auto seed : seeds) {
            TrainConfig cfg = base;
            for (const auto& o : variant.overrides) apply_override(cfg, o);
            cfg.seed = seed;
            cfg.validate();
            if (log) *log << to_string(suite) << " [" << variant.name << "] seed " << seed << '\n';
            row.seeds.push_back(seed);
            row.runs.push_back(train_and_probe(cfg, dataset, log));
            if (log) {
                const auto& r = row.runs.back();
                *log << "  top1 " << r.top1 << (r.collapsed ? " (collapsed)" : "") << '\n';
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_suite_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "variant,seeds,mean_top1,top1_per_seed,collapsed_runs\n";
    for (const auto& r : rows) {
        std::string seeds, per;
        for (std::size_t i = 0; i < r.runs.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", r.runs[i].top1);
            seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
            per += (i ? ";" : "") + std::string(buf);
        }
        char mean[32];
        std::snprintf(mean, sizeof mean, "%.4f", r.mean_top1());
        out << '"' << r.variant << "\"," << seeds << ',' << mean << ',' << per << ',' << r.collapsed_runs() << '\n';
    }
}

}  // namespace smog
