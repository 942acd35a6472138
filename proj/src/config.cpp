#include "smog/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "smog/errors.hpp"

namespace smog {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// One right-hand side, typed on demand.
struct Literal {
    std::string key;
    std::string text;

    [[noreturn]] void bad(const std::string& expected) const {
        throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + text + "'");
    }

    std::uint64_t as_uint() const {
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size()) bad("a non-negative integer");
        return v;
    }
    std::size_t as_size() const { return static_cast<std::size_t>(as_uint()); }
    double as_double() const {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size()) bad("a number");
        return v;
    }
    bool as_bool() const {
        if (text == "true") return true;
        if (text == "false") return false;
        bad("true or false");
    }
    std::string as_string() const {
        if (text.size() < 2 || text.front() != '"' || text.back() != '"') bad("a quoted string");
        std::string out;
        for (std::size_t i = 1; i + 1 < text.size(); ++i) {
            if (text[i] == '\\' && i + 2 < text.size()) ++i;
            out += text[i];
        }
        return out;
    }
    std::vector<std::size_t> as_size_list() const {
        if (text.size() < 2 || text.front() != '[' || text.back() != ']') bad("an integer list like [16, 32]");
        std::vector<std::size_t> out;
        std::stringstream ss(text.substr(1, text.size() - 2));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (trim(item).empty()) continue;
            out.push_back(Literal{key, trim(item)}.as_size());
        }
        return out;
    }
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
    return out + "]";
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const Literal&)> set;
};

#define SMOG_SIZE(KEY, EXPR) \
    Field { KEY, [](const TrainConfig& c) { return std::to_string(c.EXPR); }, [](TrainConfig& c, const Literal& l) { c.EXPR = l.as_size(); } }
#define SMOG_U64(KEY, EXPR) \
    Field { KEY, [](const TrainConfig& c) { return std::to_string(c.EXPR); }, [](TrainConfig& c, const Literal& l) { c.EXPR = l.as_uint(); } }
#define SMOG_DOUBLE(KEY, EXPR) \
    Field { KEY, [](const TrainConfig& c) { return fmt_double(c.EXPR); }, [](TrainConfig& c, const Literal& l) { c.EXPR = l.as_double(); } }
#define SMOG_BOOL(KEY, EXPR) \
    Field { KEY, [](const TrainConfig& c) { return fmt_bool(c.EXPR); }, [](TrainConfig& c, const Literal& l) { c.EXPR = l.as_bool(); } }
#define SMOG_STRING(KEY, EXPR) \
    Field { KEY, [](const TrainConfig& c) { return fmt_string(c.EXPR); }, [](TrainConfig& c, const Literal& l) { c.EXPR = l.as_string(); } }
#define SMOG_ENUM(KEY, EXPR, PARSE) \
    Field { KEY, [](const TrainConfig& c) { return fmt_string(to_string(c.EXPR)); }, [](TrainConfig& c, const Literal& l) { c.EXPR = PARSE(l.as_string()); } }
// Photometric settings shared by both schemes.
#define SMOG_SHARED(KEY, MEMBER) \
    Field { KEY, [](const TrainConfig& c) { return fmt_double(c.augment.a.MEMBER); }, [](TrainConfig& c, const Literal& l) { c.augment.a.MEMBER = c.augment.b.MEMBER = l.as_double(); } }

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        SMOG_STRING("data.path", data_path),
        SMOG_STRING("run.out_dir", out_dir),
        SMOG_U64("run.seed", seed),
        SMOG_SIZE("run.epochs", epochs),
        SMOG_SIZE("run.batch_size", batch_size),
        SMOG_SIZE("run.checkpoint_every", checkpoint_every),
        SMOG_SIZE("run.threads", threads),

        SMOG_ENUM("model.backbone", network.backbone, parse_backbone),
        Field{"model.widths", [](const TrainConfig& c) { return fmt_list(c.network.widths); },
              [](TrainConfig& c, const Literal& l) { c.network.widths = l.as_size_list(); }},
        SMOG_SIZE("model.input_channels", network.input_channels),
        SMOG_SIZE("model.input_size", network.input_size),
        SMOG_SIZE("model.proj_hidden", network.proj_hidden),
        SMOG_SIZE("model.proj_dim", network.proj_dim),
        SMOG_SIZE("model.pred_hidden", network.pred_hidden),
        SMOG_DOUBLE("model.bn_momentum", network.bn_momentum),
        SMOG_DOUBLE("model.alpha", alpha),

        SMOG_SIZE("group.count", grouping.count),
        SMOG_DOUBLE("group.beta_start", grouping.beta_start),
        SMOG_DOUBLE("group.beta_end", grouping.beta_end),
        SMOG_ENUM("group.update", grouping.update, parse_update_variant),
        SMOG_ENUM("group.init", grouping.init, parse_group_init),
        SMOG_SIZE("group.init_batches", grouping.init_batches),
        SMOG_SIZE("group.reset_period", grouping.reset_period),
        SMOG_BOOL("group.periodic_clustering", grouping.periodic_clustering),
        SMOG_BOOL("group.reset_momentum", grouping.reset_momentum),
        SMOG_SIZE("group.cache_capacity", grouping.cache_capacity),
        SMOG_SIZE("group.kmeans_iters", grouping.kmeans_iters),
        SMOG_SIZE("group.kmeans_restarts", grouping.kmeans_restarts),

        SMOG_DOUBLE("loss.tau", loss.tau),
        SMOG_ENUM("loss.objective", loss.objective, parse_objective),
        SMOG_BOOL("loss.symmetric", loss.symmetric),

        SMOG_BOOL("augment.multi_crop", multi_crop),
        SMOG_SIZE("augment.large_size", augment.large_size),
        SMOG_SIZE("augment.small_size", augment.small_size),
        SMOG_SIZE("augment.small_views", augment.small_views),
        SMOG_DOUBLE("augment.large_scale_min", augment.large_scale.min_scale),
        SMOG_DOUBLE("augment.large_scale_max", augment.large_scale.max_scale),
        SMOG_DOUBLE("augment.small_scale_min", augment.small_scale.min_scale),
        SMOG_DOUBLE("augment.small_scale_max", augment.small_scale.max_scale),
        SMOG_DOUBLE("augment.min_ratio", augment.min_ratio),
        SMOG_DOUBLE("augment.max_ratio", augment.max_ratio),
        SMOG_SHARED("augment.flip_p", flip_p),
        SMOG_SHARED("augment.jitter_p", jitter.p),
        SMOG_SHARED("augment.brightness", jitter.brightness),
        SMOG_SHARED("augment.contrast", jitter.contrast),
        SMOG_SHARED("augment.saturation", jitter.saturation),
        SMOG_SHARED("augment.blur_sigma_min", blur_sigma_min),
        SMOG_SHARED("augment.blur_sigma_max", blur_sigma_max),
        SMOG_SHARED("augment.solarize_threshold", solarize_threshold),
        SMOG_DOUBLE("augment.a_blur_p", augment.a.blur_p),
        SMOG_DOUBLE("augment.a_solarize_p", augment.a.solarize_p),
        SMOG_DOUBLE("augment.b_blur_p", augment.b.blur_p),
        SMOG_DOUBLE("augment.b_solarize_p", augment.b.solarize_p),

        SMOG_ENUM("optim.optimizer", optim.kind, parse_optimizer),
        SMOG_DOUBLE("optim.lr_per_256", optim.lr_per_256),
        SMOG_DOUBLE("optim.momentum", optim.momentum),
        SMOG_DOUBLE("optim.weight_decay", optim.weight_decay),
        SMOG_DOUBLE("optim.lars_eta", optim.lars_eta),
        SMOG_DOUBLE("optim.lars_eps", optim.lars_eps),
        SMOG_SIZE("optim.warmup_epochs", warmup_epochs),

        SMOG_DOUBLE("eval.test_fraction", eval.test_fraction),
        SMOG_SIZE("eval.knn_k", eval.knn_k),
        SMOG_SIZE("eval.monitor_every", eval.monitor_every),
        SMOG_SIZE("eval.probe_epochs", eval.probe.epochs),
        SMOG_SIZE("eval.probe_batch", eval.probe.batch),
        SMOG_DOUBLE("eval.probe_lr", eval.probe.lr),
    };
    return all;
}

#undef SMOG_SIZE
#undef SMOG_U64
#undef SMOG_DOUBLE
#undef SMOG_BOOL
#undef SMOG_STRING
#undef SMOG_ENUM
#undef SMOG_SHARED

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

const std::vector<std::string> kRequired = {"data.path", "run.out_dir"};

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("config key '" + key + "': " + why);
    };
    if (data_path.empty()) fail("data.path", "must be set");
    if (out_dir.empty()) fail("run.out_dir", "must be set");
    if (epochs == 0) fail("run.epochs", "must be positive");
    if (warmup_epochs >= epochs) fail("optim.warmup_epochs", "must be fewer than run.epochs");
    if (batch_size < 2) fail("run.batch_size", "must be at least 2 (batch norm)");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("model.alpha", "must be in [0, 1]");
    if (!(grouping.beta_start >= 0.0 && grouping.beta_start <= 1.0)) fail("group.beta_start", "must be in [0, 1]");
    if (!(grouping.beta_end >= 0.0 && grouping.beta_end <= 1.0)) fail("group.beta_end", "must be in [0, 1]");
    if (grouping.count < 2) fail("group.count", "must be at least 2");
    if (grouping.reset_period == 0) fail("group.reset_period", "must be positive");
    if (grouping.kmeans_iters == 0) fail("group.kmeans_iters", "must be positive");
    if (grouping.kmeans_restarts == 0) fail("group.kmeans_restarts", "must be positive");
    if (eval.knn_k == 0) fail("eval.knn_k", "must be positive");
    if (eval.probe.epochs == 0 || eval.probe.batch == 0) fail("eval.probe_epochs", "probe epochs and batch must be positive");
    if (!(eval.test_fraction > 0.0 && eval.test_fraction < 1.0)) fail("eval.test_fraction", "must be in (0, 1)");
    network.validate();
    loss.validate();
    augment.validate();
    optim.validate();
}

std::size_t TrainConfig::cache_capacity() const {
    return grouping.cache_capacity ? grouping.cache_capacity : grouping.reset_period * batch_size;
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::map<std::string, bool> seen;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Strip comments outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string name = trim(line.substr(0, eq));
        const std::string key = section.empty() ? name : section + "." + name;
        if (seen[key]) throw ConfigError("config key '" + key + "' set twice");
        seen[key] = true;
        find_field(key).set(cfg, Literal{key, trim(line.substr(eq + 1))});
    }
    for (const auto& key : kRequired)
        if (!seen[key]) throw ConfigError("missing required config key '" + key + "'");
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_override(TrainConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = trim(assignment.substr(0, eq));
    find_field(key).set(config, Literal{key, trim(assignment.substr(eq + 1))});
}

std::string canonical_config(const TrainConfig& config) {
    std::vector<std::string> lines;
    for (const auto& f : fields()) lines.push_back(f.key + " = " + f.get(config));
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const TrainConfig& config) { return fnv1a64(canonical_config(config)); }

std::vector<std::string> config_keys() {
    const TrainConfig defaults;
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key + " = " + f.get(defaults));
    return out;
}

}  // namespace smog
