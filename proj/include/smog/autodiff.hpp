#pragma once

// Minimal define-by-run reverse-mode automatic differentiation.
//
// A Tape records every op whose inputs require gradients. Ops on inputs that
// do not require gradients (constants, the momentum branch) compute their
// value and record nothing, so stop-gradient is structural.
//
// Persistent weights live in Parameter objects; Tape::parameter() attaches
// one to the current graph and backward() accumulates into Parameter::grad.
// The tape is rebuilt every iteration and cleared by backward().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "smog/tensor.hpp"

namespace smog::ad {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // empty until a backward sweep reaches this parameter
    // Batch-norm affine terms and biases are excluded from weight decay and
    // LARS trust scaling.
    bool decay = true;

    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad = Tensor(); }
};

class Tape;

namespace detail {
struct Node {
    Tensor value;
    Tensor grad;
    Tape* tape = nullptr;
    Parameter* sink = nullptr;
    std::size_t id = 0;
};
}  // namespace detail

class Var {
public:
    Var() = default;

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->tape != nullptr; }
    Tape* tape() const { return node_ ? node_->tape : nullptr; }
    std::size_t id() const { return node_->id; }
    bool defined() const { return node_ != nullptr; }
    // Gradient left on this node by the last backward sweep (empty if none
    // reached it). Useful for inputs created with Tape::input().
    const Tensor& grad() const { return node_->grad; }

private:
    friend class Tape;
    friend Var constant(Tensor value);
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// A value that never receives gradients.
Var constant(Tensor value);

// grad_in[i] is null when input i does not require gradients. Adjoints are
// added into the pointed-to buffers.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Repeated calls with the same parameter return the same node.
    Var parameter(Parameter& p);
    // Differentiable leaf owned by the graph; read its gradient with Var::grad().
    Var input(Tensor value);

    // Appends an op. Used by the op library; inputs on another tape are rejected.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    // Reverse sweep from a scalar loss, accumulating into parameter grads,
    // then clears the tape.
    void backward(const Var& loss);

    std::size_t size() const { return ops_.size(); }
    void clear();

private:
    struct Op {
        std::vector<std::shared_ptr<detail::Node>> inputs;
        std::shared_ptr<detail::Node> output;
        BackwardFn backward;
    };

    std::shared_ptr<detail::Node> new_node(Tensor value);

    std::vector<Op> ops_;
    std::vector<std::shared_ptr<detail::Node>> parameter_nodes_;
    std::unordered_map<const Parameter*, std::shared_ptr<detail::Node>> parameter_index_;
    std::size_t next_id_ = 1;
};

// ---- op library ----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
// x[N x D] + b[D] broadcast over rows.
Var add_bias(const Var& x, const Var& bias);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);
Var global_avg_pool(const Var& input);
Var flatten(const Var& input);

enum class BnMode { train, eval };

struct BatchNormStats {
    Tensor mean;
    Tensor var;
};

// Normalizes N x D over the batch, or N x C x H x W per channel. Train mode
// uses biased batch variance and updates `running` with unbiased variance:
// running = (1 - momentum) * running + momentum * batch.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& running, BnMode mode,
               double momentum = 0.1, double eps = 1e-5);

inline constexpr double kNormEps = 1e-12;

// Row-wise x / ||x|| over the last axis of an N x D tensor.
Var l2_normalize(const Var& x);

Var sum(const Var& a);
Var mean(const Var& a);
Var concat_rows(std::span<const Var> parts);
// N x K -> N, max-shifted.
Var logsumexp_rows(const Var& x);
// out[i] = x[i, index[i]]
Var pick(const Var& x, std::span<const std::size_t> index);
// N x K -> N: logsumexp(x_i) - x_i[label_i], as (m - x_iy) + log1p(sum of
// exp(x_ij - m) over j other than the first argmax), so it stays positive
// whenever the off-max mass does not underflow.
Var softmax_xent_rows(const Var& x, std::span<const std::size_t> labels);
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

}  // namespace smog::ad
