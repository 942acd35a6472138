// Command-line driver: dataset synthesis, pretraining, evaluation, ablations.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>

#include "smog/ablation.hpp"
#include "smog/config.hpp"
#include "smog/dataio.hpp"
#include "smog/eval.hpp"
#include "smog/rng.hpp"
#include "smog/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace smog;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

TrainConfig config_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
    TrainConfig cfg = load_config(path);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

int cmd_synth(std::size_t classes, std::size_t per_class, std::size_t size, double noise, std::uint64_t seed,
              const std::string& out) {
    SyntheticSpec spec;
    spec.classes = classes;
    spec.per_class = per_class;
    spec.size = size;
    spec.noise = noise;
    spec.seed = seed;
    const auto ds = gen_synthetic(spec);
    save_dataset(ds, out);
    std::cout << "wrote " << ds.size() << " images (" << classes << " classes, " << size << "x" << size << ") to " << out
              << '\n';
    return 0;
}

int cmd_pretrain(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& resume,
                 std::uint64_t stop_after, bool quiet) {
    const auto cfg = config_with_overrides(config_path, overrides);
    const auto ds = load_dataset(cfg.data_path);
    RunOptions options;
    if (!resume.empty()) options.resume = resume;
    options.stop_after = stop_after;
    options.log = quiet ? nullptr : &std::cout;
    if (cfg.eval.monitor_every > 0) {
        // The monitor sees labels; the trainer only ever receives the unlabeled view.
        const auto split = stratified_split(ds.labels, cfg.eval.test_fraction, cfg.seed);
        options.on_epoch_end = [&, split](Trainer& trainer, std::uint64_t epoch) {
            if ((epoch + 1) % cfg.eval.monitor_every != 0) return;
            const auto features = extract_features(trainer.encoder(), ds.images);
            const double acc = knn_eval(features, ds.labels, split, ds.class_count, cfg.eval.knn_k);
            if (!quiet) std::cout << "epoch " << epoch << " knn_top1 " << acc << '\n';
        };
    }
    const auto result = run_pretraining(cfg, UnlabeledImages(ds), options);
    std::cout << "finished " << result.metrics.size() << " iterations; checkpoint " << result.final_checkpoint.string()
              << (result.collapsed ? " (collapse detected, see events.log)" : "") << '\n';
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& dataset, double split_fraction, bool random_init,
              const std::string& out) {
    const auto ds = load_dataset(dataset);
    auto model = load_model(ckpt);
    if (random_init) model.pair = EncoderPair::build(model.config.network, derive_seed(model.config.seed, {tag(Stream::init)}));
    const double fraction = split_fraction > 0.0 ? split_fraction : model.config.eval.test_fraction;
    const auto split = stratified_split(ds.labels, fraction, model.config.seed);
    const auto features = extract_features(model.pair, ds.images);
    const auto result = linear_probe(features, ds.labels, split, ds.class_count, model.config.seed, model.config.eval.probe);
    const double knn = knn_eval(features, ds.labels, split, ds.class_count, model.config.eval.knn_k);
    std::printf("linear_top1 %.4f\nknn_top1 %.4f\n", result.top1, knn);
    for (std::size_t c = 0; c < result.per_class.size(); ++c) std::printf("class_%zu %.4f\n", c, result.per_class[c]);
    if (!out.empty()) write_probe_csv(result, out);
    return 0;
}

int cmd_entropy(const std::string& ckpt, const std::string& dataset, const std::string& out_dir) {
    const auto ds = load_dataset(dataset);
    auto model = load_model(ckpt);
    const auto proj = extract_projections(model.pair, ds.images);
    const auto assignment = assign(proj, model.bank.groups);
    const auto report = group_entropy(assignment.index, ds.labels, model.bank.size(), ds.class_count, model.config.seed);
    std::printf("groups_nonempty %zu\nmean_entropy %.4f\nbaseline_mean_entropy %.4f\nratio %.4f\n", report.groups.size(),
                report.mean_entropy, report.baseline_mean_entropy, report.mean_entropy / report.baseline_mean_entropy);
    if (!out_dir.empty()) {
        write_entropy_csv(report, fs::path(out_dir) / "group_entropy.csv");
        write_entropy_histogram_csv(report, fs::path(out_dir) / "entropy_histogram.csv");
    }
    return 0;
}

int cmd_ablate(const std::string& suite_name, const std::string& config_path, const std::vector<std::string>& overrides,
               std::size_t seed_count, const std::string& out) {
    const auto suite = parse_suite(suite_name);
    const auto cfg = config_with_overrides(config_path, overrides);
    const auto ds = load_dataset(cfg.data_path);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(cfg.seed + i);
    const auto rows = run_suite(suite, cfg, ds, seeds, &std::cout);
    const fs::path path = out.empty() ? fs::path(cfg.out_dir) / ("ablate_" + to_string(suite) + ".csv") : fs::path(out);
    write_suite_csv(rows, path);
    for (const auto& r : rows) std::printf("%-14s mean_top1 %.4f collapsed %zu\n", r.variant.c_str(), r.mean_top1(), r.collapsed_runs());
    std::cout << "wrote " << path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group-contrastive self-supervised pretraining at desk scale"};
    app.require_subcommand(1);

    std::size_t classes = 4, per_class = 250, size = 32;
    double noise = SyntheticSpec{}.noise;
    std::uint64_t seed = 0;
    std::string out;
    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic texture dataset");
    synth->add_option("--classes", classes, "Number of classes")->capture_default_str();
    synth->add_option("--per-class", per_class, "Images per class")->capture_default_str();
    synth->add_option("--size", size, "Image side length (>= 16)")->capture_default_str();
    synth->add_option("--noise", noise, "Within-class photometric variation strength")->capture_default_str();
    synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
    synth->add_option("--out", out, "Output file")->required();

    std::string config_path, resume;
    std::vector<std::string> overrides;
    std::uint64_t stop_after = 0;
    bool quiet = false;
    auto* pretrain = app.add_subcommand("pretrain", "Run self-supervised pretraining");
    pretrain->add_option("--config", config_path, "Run configuration file")->required();
    pretrain->add_option("--resume", resume, "Checkpoint to continue from");
    pretrain->add_option("--set", overrides, "Override a config key: section.key=value");
    pretrain->add_option("--stop-after", stop_after, "Stop (and checkpoint) after this iteration");
    pretrain->add_flag("--quiet", quiet, "Only print the summary");
    pretrain->add_flag_callback("--print-defaults", [] {
        for (const auto& k : config_keys()) std::cout << k << '\n';
        std::exit(0);
    }, "Print every config key with its default and exit");

    std::string ckpt, dataset;
    double split = 0.0;
    bool random_init = false;
    auto* probe = app.add_subcommand("probe", "Linear probe and kNN on frozen backbone features");
    probe->add_option("--ckpt", ckpt, "Checkpoint")->required();
    probe->add_option("--dataset", dataset, "Labelled dataset")->required();
    probe->add_option("--split", split, "Test fraction (default from the checkpoint config)");
    probe->add_flag("--random-init", random_init, "Probe the encoder at initialization instead");
    probe->add_option("--out", out, "Write the probe result CSV here");

    auto* entropy = app.add_subcommand("entropy-report", "Class entropy of each group");
    entropy->add_option("--ckpt", ckpt, "Checkpoint")->required();
    entropy->add_option("--dataset", dataset, "Labelled dataset")->required();
    entropy->add_option("--out", out, "Directory for group_entropy.csv and entropy_histogram.csv");

    std::string suite;
    std::size_t seed_count = 1;
    auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
    ablate->add_option("--suite", suite, "beta | tricks | groups | update-op | objective")->required();
    ablate->add_option("--config", config_path, "Base configuration")->required();
    ablate->add_option("--set", overrides, "Override a config key: section.key=value");
    ablate->add_option("--seeds", seed_count, "Seeds per variant, starting at run.seed")->capture_default_str();
    ablate->add_option("--out", out, "CSV path (default <out_dir>/ablate_<suite>.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*synth) return cmd_synth(classes, per_class, size, noise, seed, out);
        if (*pretrain) return cmd_pretrain(config_path, overrides, resume, stop_after, quiet);
        if (*probe) return cmd_probe(ckpt, dataset, split, random_init, out);
        if (*entropy) return cmd_entropy(ckpt, dataset, out);
        if (*ablate) return cmd_ablate(suite, config_path, overrides, seed_count, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
