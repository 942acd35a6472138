#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smog/autodiff.hpp"

namespace smog {

enum class BackboneKind { mlp, tiny_cnn };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& name);

struct NetworkSpec {
    BackboneKind backbone = BackboneKind::tiny_cnn;
    // Conv channels per block (tiny_cnn) or hidden widths (mlp).
    std::vector<std::size_t> widths{16, 32, 64};
    std::size_t input_channels = 3;
    // Side length the mlp backbone is built for; tiny_cnn accepts any size.
    std::size_t input_size = 32;
    std::size_t proj_hidden = 256;
    std::size_t proj_dim = 32;
    // Zero means "same as proj_hidden".
    std::size_t pred_hidden = 0;
    double bn_momentum = 0.1;

    void validate() const;
    std::size_t representation_dim() const { return widths.back(); }
    std::size_t prediction_hidden() const { return pred_hidden ? pred_hidden : proj_hidden; }
};

struct BatchNormLayer {
    ad::Parameter gamma;
    ad::Parameter beta;
    ad::BatchNormStats stats;
};

struct LinearLayer {
    ad::Parameter weight;  // in x out
    ad::Parameter bias;
};

struct NamedBuffer {
    std::string name;
    Tensor* value;
};

// One branch of the Siamese pair: backbone, projection head and optionally a
// prediction head. Both heads are two-layer MLPs with BatchNorm + ReLU after
// the hidden layer; the projection output layer also has BatchNorm.
class Network {
public:
    Network(const NetworkSpec& spec, bool with_predictor);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    void init(std::uint64_t seed);

    // `tape` may be null: parameters then enter as constants and nothing is
    // recorded.
    ad::Var backbone(ad::Tape* tape, const ad::Var& images, ad::BnMode mode);
    // Unnormalized projection output.
    ad::Var project(ad::Tape* tape, const ad::Var& repr, ad::BnMode mode);
    // Unnormalized prediction output.
    ad::Var predict(ad::Tape* tape, const ad::Var& proj, ad::BnMode mode);

    bool has_predictor() const { return has_predictor_; }
    const NetworkSpec& spec() const { return spec_; }

    std::vector<ad::Parameter*> parameters();
    std::vector<const ad::Parameter*> parameters() const;
    // Batch-norm running statistics.
    std::vector<NamedBuffer> buffers();

private:
    ad::Var bn(ad::Tape* tape, const ad::Var& x, BatchNormLayer& layer, ad::BnMode mode);
    ad::Var linear(ad::Tape* tape, const ad::Var& x, LinearLayer& layer);

    NetworkSpec spec_;
    bool has_predictor_;
    std::vector<ad::Parameter> backbone_weights_;
    std::vector<BatchNormLayer> backbone_bn_;
    LinearLayer proj_fc1_, proj_fc2_;
    BatchNormLayer proj_bn1_, proj_bn2_;
    LinearLayer pred_fc1_, pred_fc2_;
    BatchNormLayer pred_bn1_;
};

struct OnlineOutputs {
    ad::Var repr;  // backbone representation, N x D_b
    ad::Var proj;  // L2-normalized projection, N x d
    ad::Var pred;  // L2-normalized prediction, N x d
};

// Online network (with predictor) and momentum network (backbone +
// projection), linked by an exponential moving average.
class EncoderPair {
public:
    static EncoderPair build(const NetworkSpec& spec, std::uint64_t seed);

    OnlineOutputs forward_online(ad::Tape& tape, const Tensor& images, ad::BnMode mode = ad::BnMode::train);
    // L2-normalized momentum projection. Never recorded on a tape.
    Tensor forward_momentum(const Tensor& images, ad::BnMode mode = ad::BnMode::train);
    // Online backbone output in eval mode, for frozen-feature evaluation.
    Tensor representation(const Tensor& images);

    // momentum <- alpha * momentum + (1 - alpha) * online, parameters and
    // batch-norm statistics alike.
    void ema_update(double alpha);
    // momentum <- online, exactly.
    void hard_reset_momentum();
    // ||momentum - online|| over the shared parameters.
    double drift() const;

    Network& online() { return online_; }
    Network& momentum() { return momentum_; }
    const Network& online() const { return online_; }
    const Network& momentum() const { return momentum_; }
    const NetworkSpec& spec() const { return online_.spec(); }

private:
    EncoderPair(Network online, Network momentum);

    Network online_;
    Network momentum_;
};

}  // namespace smog
