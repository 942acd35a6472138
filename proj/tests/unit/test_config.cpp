#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "smog/config.hpp"
#include "smog/errors.hpp"

using namespace smog;

namespace {

const std::string kMinimal = R"(
[data]
path = "d.smg"
[run]
out_dir = "runs/x"
)";

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("minimal file takes every other value from the defaults") {
    const TrainConfig c = parse_config(kMinimal);
    const TrainConfig d;
    CHECK(c.data_path == "d.smg");
    CHECK(c.out_dir == "runs/x");
    CHECK(c.epochs == d.epochs);
    CHECK(c.grouping.count == d.grouping.count);
    CHECK(c.loss.objective == Objective::smog);
    CHECK(c.network.widths == d.network.widths);
}

TEST_CASE("sections, comments and every literal kind parse") {
    const TrainConfig c = parse_config(kMinimal + R"(
seed = 7          # trailing comment
epochs = 12
[model]
widths = [8, 16]
alpha = 0.995
[group]
update = "AU"
periodic_clustering = false
[loss]
objective = "eq2"
[optim]
optimizer = "lars"
warmup_epochs = 2
)");
    CHECK(c.seed == 7);
    CHECK(c.epochs == 12);
    CHECK(c.network.widths == std::vector<std::size_t>{8, 16});
    CHECK(c.alpha == 0.995);
    CHECK(c.grouping.update == UpdateVariant::AU);
    CHECK_FALSE(c.grouping.periodic_clustering);
    CHECK(c.loss.objective == Objective::group);
    CHECK(c.optim.kind == OptimizerKind::lars);
    CHECK(c.warmup_epochs == 2);
}

TEST_CASE("a missing required key is a config error naming the key") {
    CHECK(error_of("[run]\nout_dir = \"x\"\n").find("data.path") != std::string::npos);
    CHECK(error_of("[data]\npath = \"x\"\n").find("run.out_dir") != std::string::npos);
}

TEST_CASE("unknown keys, duplicates and bad literals are rejected") {
    CHECK(error_of(kMinimal + "[group]\ncuont = 3\n").find("group.cuont") != std::string::npos);
    CHECK(error_of(kMinimal + "[run]\nseed = 1\nseed = 2\n").find("set twice") != std::string::npos);
    CHECK(error_of(kMinimal + "[run]\nepochs = many\n").find("run.epochs") != std::string::npos);
    CHECK(error_of(kMinimal + "[loss]\nobjective = \"eq9\"\n") != "");
    CHECK(error_of(kMinimal + "[run]\nepochs = 5\n[optim]\nwarmup_epochs = 5\n").find("warmup") !=
          std::string::npos);
}

TEST_CASE("canonical form parses back to the same configuration") {
    TrainConfig c = parse_config(kMinimal);
    apply_override(c, "group.count=16");
    apply_override(c, "loss.tau=0.2");
    apply_override(c, "augment.a_blur_p=0.25");
    const std::string canon = canonical_config(c);
    const TrainConfig back = parse_config(canon);
    CHECK(canonical_config(back) == canon);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(back.grouping.count == 16);
    CHECK(back.augment.a.blur_p == 0.25);
}

TEST_CASE("doubles survive the canonical form bit for bit") {
    TrainConfig c = parse_config(kMinimal);
    c.loss.tau = 0.1 + 1e-17 * 3;
    c.alpha = 1.0 / 3.0;
    const TrainConfig back = parse_config(canonical_config(c));
    CHECK(back.loss.tau == c.loss.tau);
    CHECK(back.alpha == c.alpha);
}

TEST_CASE("hash changes with any value and ignores key order in the file") {
    const TrainConfig a = parse_config(kMinimal + "[group]\ncount = 8\nreset_period = 50\n");
    const TrainConfig b = parse_config(kMinimal + "[group]\nreset_period = 50\ncount = 8\n");
    CHECK(config_hash(a) == config_hash(b));
    TrainConfig c = a;
    apply_override(c, "run.seed=1");
    CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("fnv1a64 matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("every documented key is accepted as an override") {
    const auto keys = config_keys();
    CHECK(keys.size() > 40);
    for (const auto& line : keys) {
        TrainConfig c = parse_config(kMinimal);
        INFO(line);
        CHECK_NOTHROW(apply_override(c, line));
    }
}

TEST_CASE("cache capacity defaults to one reset period of batches") {
    TrainConfig c = parse_config(kMinimal);
    c.batch_size = 64;
    c.grouping.reset_period = 10;
    CHECK(c.cache_capacity() == 640);
    c.grouping.cache_capacity = 100;
    CHECK(c.cache_capacity() == 100);
}
