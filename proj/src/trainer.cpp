#include "smog/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "smog/augment.hpp"
#include "smog/kernels.hpp"
#include "smog/loss.hpp"
#include "smog/rng.hpp"

namespace smog {

namespace fs = std::filesystem;

std::string metrics_header() { return "iteration,epoch,loss,lr,beta,max_share,empty_groups,drift"; }

std::string metrics_row(const MetricsRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,%.17g,%.17g,%zu,%.17g",
                  static_cast<unsigned long long>(r.iteration), static_cast<unsigned long long>(r.epoch), r.loss, r.lr,
                  r.beta, r.max_share, r.empty_groups, r.drift);
    return buf;
}

void apply_thread_setting(std::size_t configured) {
    std::size_t threads = configured;
    if (const char* env = std::getenv("SMOG_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw ConfigError("SMOG_THREADS must be a positive integer, got '" + std::string(env) + "'");
        threads = static_cast<std::size_t>(v);
    }
    if (threads > 0) kernels::set_thread_count(static_cast<int>(threads));
}

namespace {

TrainConfig checked(TrainConfig config) {
    config.validate();
    if (config.network.backbone == BackboneKind::mlp) {
        if (config.small_views() > 0) throw ConfigError("config key 'augment.multi_crop': the mlp backbone takes one input size; disable multi-crop");
        if (config.network.input_size != config.augment.large_size) {
            throw ConfigError("config key 'model.input_size': must equal augment.large_size for the mlp backbone");
        }
    }
    return config;
}

void round_params(Network& net) {
    for (auto* p : net.parameters()) round_to_f32(p->value);
    for (auto& b : net.buffers()) round_to_f32(*b.value);
}

Tensor rounded(Tensor t) {
    round_to_f32(t);
    return t;
}

ad::Var mean_of(const std::vector<ad::Var>& terms) {
    ad::Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

Assignment concat(const Assignment& a, const Assignment& b) {
    Assignment out = a;
    out.index.insert(out.index.end(), b.index.begin(), b.index.end());
    return out;
}

std::string occupancy_text(const Occupancy& o) {
    std::ostringstream ss;
    ss << "max_share=" << o.max_share << " empty_groups=" << o.empty;
    return ss.str();
}

template <typename Fn>
void for_each_state_tensor(Network& net, const std::string& prefix, Fn&& fn) {
    for (auto* p : net.parameters()) fn(prefix + p->name, p->value);
    for (auto& b : net.buffers()) fn(prefix + b.name, *b.value);
}

void load_network(Network& net, const std::string& prefix, const Checkpoint& ck) {
    for_each_state_tensor(net, prefix, [&](const std::string& name, Tensor& value) {
        const Tensor& stored = ck.tensor(name);
        if (!stored.same_shape(value)) {
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(stored.shape()) +
                              ", model expects " + shape_str(value.shape()));
        }
        value = stored;
    });
}

}  // namespace

Trainer::Trainer(TrainConfig config, UnlabeledImages data)
    : config_(checked(std::move(config))),
      data_(data),
      pair_(EncoderPair::build(config_.network, derive_seed(config_.seed, {tag(Stream::init)}))),
      cache_(config_.cache_capacity(), config_.network.proj_dim) {
    const Tensor& images = data_.images();
    if (images.rank() != 4) throw DimensionError("training images must be N x C x H x W");
    if (images.dim(1) != config_.network.input_channels) {
        throw ConfigError("config key 'model.input_channels': dataset has " + std::to_string(images.dim(1)) +
                          " channels");
    }
    per_epoch_ = data_.size() / config_.batch_size;
    if (per_epoch_ == 0) {
        throw InsufficientDataError("dataset of " + std::to_string(data_.size()) + " images is smaller than one batch of " +
                                    std::to_string(config_.batch_size));
    }
    total_ = per_epoch_ * config_.epochs;
    warmup_ = per_epoch_ * config_.warmup_epochs;
    base_lr_ = base_lr_for_batch(config_.batch_size, config_.optim.lr_per_256);
    params_ = pair_.online().parameters();
    opt_ = make_optim_state(config_.optim, params_);
    bank_ = random_groups(config_.grouping.count, config_.network.proj_dim,
                          derive_seed(config_.seed, {tag(Stream::group_init)}));
    bank_.variant = config_.grouping.update;
    round_state();
}

std::vector<std::size_t> Trainer::batch_ids(std::uint64_t epoch, std::uint64_t b) const {
    std::vector<std::size_t> perm(data_.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(config_.seed, {tag(Stream::shuffle), epoch}));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto start = perm.begin() + static_cast<std::ptrdiff_t>(b * config_.batch_size);
    return {start, start + static_cast<std::ptrdiff_t>(config_.batch_size)};
}

std::vector<std::string> Trainer::warm_start() {
    const std::size_t batches = std::min<std::size_t>(config_.grouping.init_batches, per_epoch_);
    // Key distinct from every training epoch.
    const std::uint64_t warm_epoch = ~std::uint64_t{0};
    AugmentConfig aug = config_.augment;
    aug.small_views = 0;
    try {
        for (std::size_t b = 0; b < batches; ++b) {
            const auto ids = batch_ids(warm_epoch, b);
            const auto views = make_batch_views(data_.images(), ids, 0, config_.seed, aug);
            cache_.push(rounded(pair_.forward_momentum(views.large[0])));
        }
    } catch (const ZeroVectorError& e) {
        throw CollapseError(std::string("representation collapse during warm start: ") + e.what() +
                            "; no occupancy recorded yet");
    }
    auto init = init_groups(config_.grouping.init, cache_.rows(), config_.grouping.count, config_.network.proj_dim,
                            derive_seed(config_.seed, {tag(Stream::group_init)}), config_.grouping.kmeans_iters,
                            config_.grouping.kmeans_restarts);
    bank_ = std::move(init.bank);
    bank_.variant = config_.grouping.update;
    round_state();
    for (const auto& w : init.warnings) event("warning", w);
    event("warm_start", to_string(config_.grouping.init) + " batches=" + std::to_string(batches));
    return init.warnings;
}

void Trainer::round_state() {
    round_params(pair_.online());
    round_params(pair_.momentum());
    for (auto& v : opt_.velocity) round_to_f32(v);
    round_to_f32(bank_.groups);
}

void Trainer::event(const std::string& name, const std::string& detail) {
    events_.push_back(std::to_string(iteration_) + " " + name + " " + detail);
}

std::vector<std::string> Trainer::take_events() { return std::exchange(events_, {}); }

bool CollapseMonitor::observe(double max_share) {
    streak_ = max_share > kCollapseShare ? streak_ + 1 : 0;
    if (triggered_ || streak_ < kCollapseWindow) return false;
    triggered_ = true;
    return true;
}

MetricsRecord Trainer::step() {
    if (done()) throw Error("training already reached iteration " + std::to_string(total_));
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t t = iteration_ + 1;
    const std::uint64_t epoch = (t - 1) / per_epoch_;
    const double tau = config_.loss.tau;
    const Objective objective = config_.loss.objective;

    try {
        // (1) views
        AugmentConfig aug = config_.augment;
        aug.small_views = config_.small_views();
        const auto ids = batch_ids(epoch, (t - 1) % per_epoch_);
        const auto views = make_batch_views(data_.images(), ids, t, config_.seed, aug);

        // (2)-(3) momentum features and assignments
        const Tensor za = pair_.forward_momentum(views.large[0]);
        const Tensor zb = pair_.forward_momentum(views.large[1]);
        const Assignment ca = assign(za, bank_.groups);
        const Assignment cb = assign(zb, bank_.groups);

        // (4) online anchors
        ad::Tape tape;
        const auto oa = pair_.forward_online(tape, views.large[0]);
        const auto ob = pair_.forward_online(tape, views.large[1]);
        std::vector<ad::Var> small;
        for (const auto& v : views.small) small.push_back(pair_.forward_online(tape, v).pred);

        // (5) in-graph group update
        bank_.beta = beta_schedule(t, total_, config_.grouping.beta_start, config_.grouping.beta_end);
        std::optional<GroupUpdate> update;
        const Tensor bank_before = bank_.groups;
        if (objective != Objective::instance) {
            const std::vector<ad::Var> both{oa.pred, ob.pred};
            const auto features = ad::concat_rows(both);
            const auto members = concat(ca, cb);
            update = momentum_update(bank_, features, members, derive_seed(config_.seed, {tag(Stream::random_select), t}));
            if (tracing_) trace_ = {bank_before, update->groups.value(), features.value(), members, bank_.beta};
        }

        // (6) loss over (anchor, target) pairs
        std::vector<ad::Var> terms;
        auto add_targets = [&](const ad::Var& other_large, const Assignment& target, const Tensor& target_features,
                               const Assignment& own) {
            switch (objective) {
                case Objective::smog:
                    terms.push_back(smog_loss(other_large, target, update->groups, tau));
                    for (const auto& s : small) terms.push_back(smog_loss(s, target, update->groups, tau));
                    break;
                case Objective::group:
                    terms.push_back(pure_group_loss(own, target, update->groups, tau));
                    break;
                case Objective::instance:
                    terms.push_back(instance_infonce(other_large, target_features, tau));
                    for (const auto& s : small) terms.push_back(instance_infonce(s, target_features, tau));
                    break;
            }
        };
        add_targets(oa.pred, cb, zb, ca);
        if (config_.loss.symmetric) add_targets(ob.pred, ca, za, cb);
        const auto loss = mean_of(terms);
        const double loss_value = loss.value()[0];

        // (7)-(8) backward and optimizer
        for (auto* p : params_) p->zero_grad();
        tape.backward(loss);
        const double lr = lr_schedule(t - 1, warmup_, total_, base_lr_);
        optimizer_step(params_, opt_, lr);

        // (9) momentum network
        pair_.ema_update(config_.alpha);

        // (10) store the bank, cache features
        if (update) commit_update(bank_, *update);
        cache_.push(rounded(za));
        round_state();
        iteration_ = t;

        // (11) periodic reset
        if (t % config_.grouping.reset_period == 0) {
            ResetFlags flags{config_.grouping.periodic_clustering && objective != Objective::instance,
                             config_.grouping.reset_momentum};
            const auto outcome = periodic_reset(bank_, cache_, pair_, flags, derive_seed(config_.seed, {tag(Stream::kmeans), t}),
                                                config_.grouping.kmeans_iters, config_.grouping.kmeans_restarts);
            round_state();
            for (const auto& w : outcome.warnings) event("warning", w);
            if (outcome.clustered || outcome.momentum_reset) {
                event("reset", std::string("clustered=") + (outcome.clustered ? "1" : "0") +
                                   " momentum=" + (outcome.momentum_reset ? "1" : "0"));
            }
        }

        // (12) metrics
        const auto members = concat(ca, cb);
        last_occupancy_ = occupancy_stats(members.index, bank_.size());
        if (collapse_.observe(last_occupancy_.max_share)) {
            event("collapse", occupancy_text(last_occupancy_) + " sustained for " + std::to_string(kCollapseWindow) +
                                  " iterations");
        }
        MetricsRecord r;
        r.iteration = t;
        r.epoch = epoch;
        r.loss = loss_value;
        r.lr = lr;
        r.beta = bank_.beta;
        r.max_share = last_occupancy_.max_share;
        r.empty_groups = last_occupancy_.empty;
        r.drift = pair_.drift();
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        return r;
    } catch (const ZeroVectorError& e) {
        throw CollapseError("representation collapse at iteration " + std::to_string(t) + ": " + e.what() +
                            "; last occupancy " + occupancy_text(last_occupancy_));
    }
}

Checkpoint Trainer::checkpoint() {
    Checkpoint ck;
    ck.config_text = canonical_config(config_);
    ck.config_hash = config_hash(config_);
    ck.iteration = iteration_;
    auto add = [&](const std::string& name, const Tensor& value) { ck.tensors.push_back({name, value}); };
    for_each_state_tensor(pair_.online(), "online.", add);
    for_each_state_tensor(pair_.momentum(), "momentum.", add);
    for (std::size_t i = 0; i < params_.size(); ++i) add("optim.velocity." + params_[i]->name, opt_.velocity[i]);
    add("bank.groups", bank_.groups);
    add("cache.rows", cache_.rows());
    ck.counters.push_back({"bank.counts", bank_.counts});
    ck.counters.push_back({"trainer.state",
                           {bank_.iteration, opt_.steps, collapse_.streak(), collapse_.triggered() ? 1u : 0u}});
    return ck;
}

std::vector<std::string> Trainer::restore(const Checkpoint& ck) {
    std::vector<std::string> warnings;
    if (ck.config_hash != config_hash(config_)) {
        warnings.push_back("checkpoint config hash differs from the current config; continuing with stored tensors");
    }
    if (ck.iteration > total_) {
        throw FormatError("checkpoint iteration " + std::to_string(ck.iteration) + " exceeds the schedule of " +
                          std::to_string(total_));
    }
    load_network(pair_.online(), "online.", ck);
    load_network(pair_.momentum(), "momentum.", ck);
    for (std::size_t i = 0; i < params_.size(); ++i) opt_.velocity[i] = ck.tensor("optim.velocity." + params_[i]->name);
    bank_.groups = ck.tensor("bank.groups");
    bank_.counts = ck.counter("bank.counts");
    bank_.variant = config_.grouping.update;
    const auto& state = ck.counter("trainer.state");
    if (state.size() != 4) throw FormatError("checkpoint trainer.state has " + std::to_string(state.size()) + " entries");
    bank_.iteration = state[0];
    opt_.steps = state[1];
    collapse_.restore(state[2], state[3] != 0);
    cache_.clear();
    cache_.push(ck.tensor("cache.rows"));
    iteration_ = ck.iteration;
    for (const auto& w : warnings) event("warning", w);
    return warnings;
}

LoadedModel load_model(const fs::path& path) {
    const auto ck = load_checkpoint(path);
    auto config = parse_config(ck.config_text);
    LoadedModel m{config, EncoderPair::build(config.network, 0), {}};
    load_network(m.pair.online(), "online.", ck);
    load_network(m.pair.momentum(), "momentum.", ck);
    m.bank.groups = ck.tensor("bank.groups");
    m.bank.counts = ck.counter("bank.counts");
    m.bank.variant = config.grouping.update;
    return m;
}

namespace {

std::ofstream open_append(const fs::path& path, bool truncate) {
    std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

// Keeps the header and rows up to `iteration`.
void truncate_csv(const fs::path& path, std::uint64_t iteration, const std::string& header) {
    std::vector<std::string> keep{header};
    if (std::ifstream in(path); in) {
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (std::stoull(line.substr(0, line.find(','))) <= iteration) keep.push_back(line);
        }
    }
    auto out = open_append(path, true);
    for (const auto& l : keep) out << l << '\n';
}

}  // namespace

RunResult run_pretraining(const TrainConfig& config, UnlabeledImages data, const RunOptions& options) {
    apply_thread_setting(config.threads);
    Trainer trainer(config, data);
    const fs::path dir = config.out_dir;
    fs::create_directories(dir);
    {
        auto out = open_append(dir / "config.toml", true);
        out << canonical_config(config);
    }

    const bool resuming = options.resume.has_value();
    std::uint64_t start = 0;
    if (resuming) {
        const auto ck = load_checkpoint(*options.resume);
        trainer.restore(ck);
        start = ck.iteration;
    } else {
        trainer.warm_start();
    }
    const std::string timing_header = "iteration,wall_ms";
    if (resuming) {
        truncate_csv(dir / "metrics.csv", start, metrics_header());
        truncate_csv(dir / "timing.csv", start, timing_header);
    }
    auto metrics = open_append(dir / "metrics.csv", !resuming);
    auto timing = open_append(dir / "timing.csv", !resuming);
    auto events = open_append(dir / "events.log", !resuming);
    if (!resuming) {
        metrics << metrics_header() << '\n';
        timing << timing_header << '\n';
    } else {
        events << start << " resume from " << options.resume->string() << '\n';
    }
    auto flush_events = [&] {
        for (const auto& e : trainer.take_events()) {
            events << e << '\n';
            if (options.log) *options.log << "event " << e << '\n';
        }
        events.flush();
    };
    flush_events();

    RunResult result;
    const std::uint64_t stop = options.stop_after ? std::min(options.stop_after, trainer.total_iterations())
                                                  : trainer.total_iterations();
    auto save = [&] {
        const auto path = dir / ("ckpt_" + std::to_string(trainer.iteration()) + ".bin");
        save_checkpoint(trainer.checkpoint(), path);
        result.final_checkpoint = path;
    };
    try {
        while (trainer.iteration() < stop) {
            const auto r = trainer.step();
            result.metrics.push_back(r);
            metrics << metrics_row(r) << '\n';
            timing << r.iteration << ',' << r.wall_ms << '\n';
            flush_events();
            if (options.log && (r.iteration % trainer.iterations_per_epoch() == 0)) {
                *options.log << "epoch " << r.epoch << " iter " << r.iteration << " loss " << r.loss << " lr " << r.lr
                             << " max_share " << r.max_share << " drift " << r.drift << '\n';
            }
            if (config.checkpoint_every && r.iteration % config.checkpoint_every == 0 && r.iteration != stop) save();
            if (r.iteration % trainer.iterations_per_epoch() == 0 && options.on_epoch_end) {
                options.on_epoch_end(trainer, r.epoch);
            }
        }
    } catch (const CollapseError& e) {
        events << trainer.iteration() << " abort " << e.what() << '\n';
        throw;
    }
    metrics.flush();
    save();
    result.collapsed = trainer.collapsed();
    return result;
}

}  // namespace smog
