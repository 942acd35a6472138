#include "smog/encoder.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include "smog/errors.hpp"

namespace smog {

std::string to_string(BackboneKind kind) { return kind == BackboneKind::mlp ? "mlp" : "tiny_cnn"; }

BackboneKind parse_backbone(const std::string& name) {
    if (name == "mlp") return BackboneKind::mlp;
    if (name == "tiny_cnn") return BackboneKind::tiny_cnn;
    throw ConfigError("unknown backbone '" + name + "' (expected mlp or tiny_cnn)");
}

void NetworkSpec::validate() const {
    if (widths.empty()) throw ConfigError("network spec: backbone needs at least one layer");
    for (std::size_t w : widths)
        if (w == 0) throw ConfigError("network spec: zero-width backbone layer");
    if (input_channels == 0 || proj_hidden == 0 || proj_dim == 0)
        throw ConfigError("network spec: zero-width layer in heads or input");
    if (backbone == BackboneKind::mlp && input_size == 0) throw ConfigError("network spec: mlp needs input_size");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("network spec: bn_momentum must be in (0,1]");
}

namespace {

ad::Parameter make_param(std::string name, Shape shape, bool decay) {
    return ad::Parameter{std::move(name), Tensor(std::move(shape)), Tensor(), decay};
}

BatchNormLayer make_bn(const std::string& prefix, std::size_t width) {
    return BatchNormLayer{make_param(prefix + ".gamma", {width}, false), make_param(prefix + ".beta", {width}, false),
                          ad::BatchNormStats{Tensor({width}, 0.0), Tensor({width}, 1.0)}};
}

LinearLayer make_linear(const std::string& prefix, std::size_t in, std::size_t out) {
    return LinearLayer{make_param(prefix + ".weight", {in, out}, true), make_param(prefix + ".bias", {out}, false)};
}

void he_uniform(ad::Parameter& p, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.value.values()) v = dist(rng);
}

void reset_bn(BatchNormLayer& bn) {
    bn.gamma.value.fill(1.0);
    bn.beta.value.fill(0.0);
    bn.stats.mean.fill(0.0);
    bn.stats.var.fill(1.0);
}

ad::Var attach(ad::Tape* tape, ad::Parameter& p) { return tape ? tape->parameter(p) : ad::constant(p.value); }

}  // namespace

Network::Network(const NetworkSpec& spec, bool with_predictor) : spec_(spec), has_predictor_(with_predictor) {
    spec_.validate();
    std::size_t in = spec_.input_channels;
    if (spec_.backbone == BackboneKind::mlp) in = spec_.input_channels * spec_.input_size * spec_.input_size;
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        const std::string prefix = "backbone." + std::to_string(i);
        const std::size_t out = spec_.widths[i];
        Shape shape = spec_.backbone == BackboneKind::tiny_cnn ? Shape{out, in, 3, 3} : Shape{in, out};
        backbone_weights_.push_back(make_param(prefix + ".weight", shape, true));
        backbone_bn_.push_back(make_bn(prefix + ".bn", out));
        in = out;
    }
    proj_fc1_ = make_linear("projection.fc1", in, spec_.proj_hidden);
    proj_bn1_ = make_bn("projection.bn1", spec_.proj_hidden);
    proj_fc2_ = make_linear("projection.fc2", spec_.proj_hidden, spec_.proj_dim);
    proj_bn2_ = make_bn("projection.bn2", spec_.proj_dim);
    if (has_predictor_) {
        pred_fc1_ = make_linear("prediction.fc1", spec_.proj_dim, spec_.prediction_hidden());
        pred_bn1_ = make_bn("prediction.bn1", spec_.prediction_hidden());
        pred_fc2_ = make_linear("prediction.fc2", spec_.prediction_hidden(), spec_.proj_dim);
    }
}

void Network::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < backbone_weights_.size(); ++i) {
        auto& w = backbone_weights_[i];
        const std::size_t fan_in = w.value.numel() / (spec_.backbone == BackboneKind::tiny_cnn ? w.value.dim(0)
                                                                                                : w.value.dim(1));
        he_uniform(w, fan_in, rng);
        reset_bn(backbone_bn_[i]);
    }
    auto init_linear = [&](LinearLayer& l) {
        he_uniform(l.weight, l.weight.value.dim(0), rng);
        l.bias.value.fill(0.0);
    };
    init_linear(proj_fc1_);
    init_linear(proj_fc2_);
    reset_bn(proj_bn1_);
    reset_bn(proj_bn2_);
    if (has_predictor_) {
        init_linear(pred_fc1_);
        init_linear(pred_fc2_);
        reset_bn(pred_bn1_);
    }
}

ad::Var Network::bn(ad::Tape* tape, const ad::Var& x, BatchNormLayer& layer, ad::BnMode mode) {
    return ad::batch_norm(x, attach(tape, layer.gamma), attach(tape, layer.beta), layer.stats, mode,
                          spec_.bn_momentum);
}

ad::Var Network::linear(ad::Tape* tape, const ad::Var& x, LinearLayer& layer) {
    return ad::add_bias(ad::matmul(x, attach(tape, layer.weight)), attach(tape, layer.bias));
}

ad::Var Network::backbone(ad::Tape* tape, const ad::Var& images, ad::BnMode mode) {
    ad::Var h = images;
    if (spec_.backbone == BackboneKind::mlp) {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != spec_.input_channels || s[2] != spec_.input_size || s[3] != spec_.input_size) {
            throw DimensionError("mlp backbone built for " + std::to_string(spec_.input_size) + "px inputs, got " +
                                 shape_str(s));
        }
        h = ad::flatten(h);
        for (std::size_t i = 0; i < backbone_weights_.size(); ++i) {
            h = ad::matmul(h, attach(tape, backbone_weights_[i]));
            h = ad::relu(bn(tape, h, backbone_bn_[i], mode));
        }
        return h;
    }
    for (std::size_t i = 0; i < backbone_weights_.size(); ++i) {
        h = ad::conv2d(h, attach(tape, backbone_weights_[i]), 2, 1);
        h = ad::relu(bn(tape, h, backbone_bn_[i], mode));
    }
    return ad::global_avg_pool(h);
}

ad::Var Network::project(ad::Tape* tape, const ad::Var& repr, ad::BnMode mode) {
    auto h = ad::relu(bn(tape, linear(tape, repr, proj_fc1_), proj_bn1_, mode));
    return bn(tape, linear(tape, h, proj_fc2_), proj_bn2_, mode);
}

ad::Var Network::predict(ad::Tape* tape, const ad::Var& proj, ad::BnMode mode) {
    if (!has_predictor_) throw Error("network has no prediction head");
    auto h = ad::relu(bn(tape, linear(tape, proj, pred_fc1_), pred_bn1_, mode));
    return linear(tape, h, pred_fc2_);
}

std::vector<ad::Parameter*> Network::parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t i = 0; i < backbone_weights_.size(); ++i) {
        out.push_back(&backbone_weights_[i]);
        out.push_back(&backbone_bn_[i].gamma);
        out.push_back(&backbone_bn_[i].beta);
    }
    for (auto* l : {&proj_fc1_, &proj_fc2_}) {
        out.push_back(&l->weight);
        out.push_back(&l->bias);
    }
    for (auto* b : {&proj_bn1_, &proj_bn2_}) {
        out.push_back(&b->gamma);
        out.push_back(&b->beta);
    }
    if (has_predictor_) {
        for (auto* l : {&pred_fc1_, &pred_fc2_}) {
            out.push_back(&l->weight);
            out.push_back(&l->bias);
        }
        out.push_back(&pred_bn1_.gamma);
        out.push_back(&pred_bn1_.beta);
    }
    return out;
}

std::vector<const ad::Parameter*> Network::parameters() const {
    auto mut = const_cast<Network*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<NamedBuffer> Network::buffers() {
    std::vector<NamedBuffer> out;
    auto add = [&](BatchNormLayer& b) {
        const std::string prefix = b.gamma.name.substr(0, b.gamma.name.size() - std::string(".gamma").size());
        out.push_back({prefix + ".running_mean", &b.stats.mean});
        out.push_back({prefix + ".running_var", &b.stats.var});
    };
    for (auto& b : backbone_bn_) add(b);
    add(proj_bn1_);
    add(proj_bn2_);
    if (has_predictor_) add(pred_bn1_);
    return out;
}

// ---- EncoderPair ------------------------------------------------------------

EncoderPair::EncoderPair(Network online, Network momentum) : online_(std::move(online)), momentum_(std::move(momentum)) {}

EncoderPair EncoderPair::build(const NetworkSpec& spec, std::uint64_t seed) {
    Network online(spec, true);
    online.init(seed);
    EncoderPair pair(std::move(online), Network(spec, false));
    pair.hard_reset_momentum();
    return pair;
}

OnlineOutputs EncoderPair::forward_online(ad::Tape& tape, const Tensor& images, ad::BnMode mode) {
    auto x = ad::constant(images);
    auto repr = online_.backbone(&tape, x, mode);
    auto proj = online_.project(&tape, repr, mode);
    auto pred = online_.predict(&tape, proj, mode);
    return {repr, ad::l2_normalize(proj), ad::l2_normalize(pred)};
}

Tensor EncoderPair::forward_momentum(const Tensor& images, ad::BnMode mode) {
    auto x = ad::constant(images);
    auto repr = momentum_.backbone(nullptr, x, mode);
    return ad::l2_normalize(momentum_.project(nullptr, repr, mode)).value();
}

Tensor EncoderPair::representation(const Tensor& images) {
    return online_.backbone(nullptr, ad::constant(images), ad::BnMode::eval).value();
}

namespace {

template <typename Fn>
void for_each_shared(Network& online, Network& momentum, Fn&& fn) {
    std::unordered_map<std::string, Tensor*> source;
    for (auto* p : online.parameters()) source.emplace(p->name, &p->value);
    for (auto& b : online.buffers()) source.emplace(b.name, b.value);
    for (auto* p : momentum.parameters()) fn(p->value, *source.at(p->name));
    for (auto& b : momentum.buffers()) fn(*b.value, *source.at(b.name));
}

}  // namespace

void EncoderPair::ema_update(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema alpha must lie in [0,1], got " + std::to_string(alpha));
    for_each_shared(online_, momentum_, [alpha](Tensor& eta, const Tensor& theta) {
        for (std::size_t i = 0; i < eta.numel(); ++i) eta[i] = alpha * eta[i] + (1.0 - alpha) * theta[i];
    });
}

void EncoderPair::hard_reset_momentum() {
    for_each_shared(online_, momentum_, [](Tensor& eta, const Tensor& theta) { eta = theta; });
}

double EncoderPair::drift() const {
    std::unordered_map<std::string, const Tensor*> source;
    for (const auto* p : online_.parameters()) source.emplace(p->name, &p->value);
    double sq = 0.0;
    for (const auto* p : momentum_.parameters()) {
        const Tensor& theta = *source.at(p->name);
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double d = p->value[i] - theta[i];
            sq += d * d;
        }
    }
    return std::sqrt(sq);
}

}  // namespace smog
