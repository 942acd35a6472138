#include "smog/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smog/errors.hpp"
#include "smog/kernels.hpp"

namespace smog::ad {

namespace {

Tape* common_tape(std::span<const Var> inputs) {
    Tape* tape = nullptr;
    for (const auto& v : inputs) {
        if (!v.defined()) throw Error("undefined variable passed to an op");
        if (!v.tape()) continue;
        if (tape && tape != v.tape()) throw Error("op mixes variables from different tapes");
        tape = v.tape();
    }
    return tape;
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    Tape* tape = common_tape(inputs);
    if (!tape) return constant(std::move(value));
    return tape->record(std::move(value), std::move(inputs), std::move(fn));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.value().rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(a.shape()));
    }
}

void accumulate(Tensor& dst, std::span<const double> src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var constant(Tensor value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

std::shared_ptr<detail::Node> Tape::new_node(Tensor value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->tape = this;
    node->id = next_id_++;
    return node;
}

Var Tape::parameter(Parameter& p) {
    if (auto it = parameter_index_.find(&p); it != parameter_index_.end()) return Var(it->second);
    auto node = new_node(p.value);
    node->sink = &p;
    parameter_index_.emplace(&p, node);
    parameter_nodes_.push_back(node);
    return Var(std::move(node));
}

Var Tape::input(Tensor value) { return Var(new_node(std::move(value))); }

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Op op;
    op.inputs.reserve(inputs.size());
    for (auto& v : inputs) {
        if (v.tape() && v.tape() != this) throw Error("input recorded on a different tape");
        op.inputs.push_back(v.node_);
    }
    op.output = new_node(std::move(value));
    op.backward = std::move(backward);
    Var out(op.output);
    ops_.push_back(std::move(op));
    return out;
}

void Tape::backward(const Var& loss) {
    if (!loss.defined() || loss.value().numel() != 1) {
        throw RankError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (loss.tape() != this) throw Error("loss was not recorded on this tape");
    loss.node_->grad = Tensor(loss.shape(), 1.0);

    std::vector<Tensor*> grad_slots;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        Op& op = *it;
        if (op.output->grad.empty()) continue;
        grad_slots.assign(op.inputs.size(), nullptr);
        for (std::size_t i = 0; i < op.inputs.size(); ++i) {
            auto& in = op.inputs[i];
            if (!in->tape) continue;
            if (in->grad.empty()) in->grad = Tensor(in->value.shape());
            grad_slots[i] = &in->grad;
        }
        op.backward(op.output->grad, grad_slots);
    }
    for (auto& node : parameter_nodes_) {
        if (node->grad.empty()) continue;
        Parameter& p = *node->sink;
        if (p.grad.empty()) p.grad = Tensor(p.value.shape());
        accumulate(p.grad, node->grad.values());
    }
    clear();
}

void Tape::clear() {
    ops_.clear();
    parameter_nodes_.clear();
    parameter_index_.clear();
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    accumulate(out, b.value().values());
    return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(*gi[0], g.values());
        if (gi[1]) accumulate(*gi[1], g.values());
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(*gi[0], g.values());
        if (gi[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    Tensor av = a.value(), bv = b.value();
    return make_result(std::move(out), {a, b},
                       [av = std::move(av), bv = std::move(bv)](const Tensor& g, std::span<Tensor* const> gi) {
                           if (gi[0])
                               for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * bv[i];
                           if (gi[1])
                               for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += g[i] * av[i];
                       });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= s;
    return make_result(std::move(out), {a}, [s](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += s * g[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    Tensor mask = out;
    return make_result(std::move(out), {a}, [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (mask[i] > 0.0) (*gi[0])[i] += g[i];
    });
}

Var add_bias(const Var& x, const Var& bias) {
    require_rank(x, 2, "add_bias");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    if (bias.value().numel() != d) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias.value()[j];
    return make_result(std::move(out), {x, bias}, [n, d](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) accumulate(*gi[0], g.values());
        if (gi[1])
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += g[i * d + j];
    });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tensor out({m, n});
    kernels::matmul(a.value().values(), b.value().values(), out.values(), m, k, n);
    Tensor av = a.value(), bv = b.value();
    return make_result(
        std::move(out), {a, b},
        [av = std::move(av), bv = std::move(bv), m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
            if (gi[0]) {
                Tensor da({m, k});
                kernels::matmul_nt(g.values(), bv.values(), da.values(), m, n, k);
                accumulate(*gi[0], da.values());
            }
            if (gi[1]) {
                Tensor db({k, n});
                kernels::matmul_tn(av.values(), g.values(), db.values(), k, m, n);
                accumulate(*gi[1], db.values());
            }
        });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
    return make_result(std::move(out), {a}, [r, c](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) (*gi[0])[i * c + j] += g[j * r + i];
    });
}

// ---- convolution ----------------------------------------------------------

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
    require_rank(input, 4, "conv2d");
    require_rank(kernel, 4, "conv2d");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    const auto& is = input.shape();
    const auto& ks = kernel.shape();
    if (ks[1] != is[1]) {
        throw DimensionError("conv2d: kernel " + shape_str(ks) + " does not match input channels of " +
                             shape_str(is));
    }
    if (ks[2] > is[2] + 2 * padding || ks[3] > is[3] + 2 * padding) {
        throw DimensionError("conv2d: kernel " + shape_str(ks) + " larger than padded input " + shape_str(is));
    }
    kernels::ConvGeometry geo{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3], stride, padding};
    Tensor out({geo.batch, geo.filters, geo.out_h(), geo.out_w()});
    kernels::conv2d_forward(geo, input.value().values(), kernel.value().values(), out.values());
    Tensor iv = input.value(), kv = kernel.value();
    return make_result(
        std::move(out), {input, kernel},
        [geo, iv = std::move(iv), kv = std::move(kv)](const Tensor& g, std::span<Tensor* const> gi) {
            if (gi[0]) {
                Tensor dx(iv.shape());
                kernels::conv2d_backward_input(geo, g.values(), kv.values(), dx.values());
                accumulate(*gi[0], dx.values());
            }
            if (gi[1]) {
                Tensor dk(kv.shape());
                kernels::conv2d_backward_kernel(geo, iv.values(), g.values(), dk.values());
                accumulate(*gi[1], dk.values());
            }
        });
}

Var global_avg_pool(const Var& input) {
    require_rank(input, 4, "global_avg_pool");
    const auto& s = input.shape();
    const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += input.value()[i * plane + p];
        out[i] = acc / static_cast<double>(plane);
    }
    return make_result(std::move(out), {input}, [n, c, plane](const Tensor& g, std::span<Tensor* const> gi) {
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t i = 0; i < n * c; ++i)
            for (std::size_t p = 0; p < plane; ++p) (*gi[0])[i * plane + p] += g[i] * inv;
    });
}

Var flatten(const Var& input) {
    const std::size_t n = input.shape().at(0);
    const std::size_t rest = input.value().numel() / std::max<std::size_t>(n, 1);
    Tensor out = input.value().reshaped({n, rest});
    return make_result(std::move(out), {input},
                       [](const Tensor& g, std::span<Tensor* const> gi) { accumulate(*gi[0], g.values()); });
}

// ---- batch norm -----------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& running, BnMode mode,
               double momentum, double eps) {
    const auto& s = x.shape();
    if (s.size() != 2 && s.size() != 4) {
        throw DimensionError("batch_norm: expected N x D or N x C x H x W, got " + shape_str(s));
    }
    const std::size_t n = s[0], c = s[1];
    const std::size_t plane = s.size() == 4 ? s[2] * s[3] : 1;
    if (gamma.value().numel() != c || beta.value().numel() != c || running.mean.numel() != c ||
        running.var.numel() != c) {
        throw DimensionError("batch_norm: affine/running stats do not match " + shape_str(s));
    }
    if (mode == BnMode::train && n < 2) {
        throw DegenerateBatchError("batch_norm: train mode needs at least 2 samples, got " + std::to_string(n));
    }
    const std::size_t count = n * plane;
    const double* xv = x.value().data();
    auto at = [&](std::size_t i, std::size_t ch, std::size_t p) { return (i * c + ch) * plane + p; };

    std::vector<double> mu(c), inv_std(c);
    if (mode == BnMode::train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < plane; ++p) acc += xv[at(i, ch, p)];
            mu[ch] = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < plane; ++p) {
                    const double d = xv[at(i, ch, p)] - mu[ch];
                    sq += d * d;
                }
            const double var = sq / static_cast<double>(count);
            inv_std[ch] = 1.0 / std::sqrt(var + eps);
            const double unbiased = sq / static_cast<double>(count - 1);
            running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mu[ch];
            running.var[ch] = (1.0 - momentum) * running.var[ch] + momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = running.mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(running.var[ch] + eps);
        }
    }

    Tensor xhat(s);
    Tensor out(s);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t k = at(i, ch, p);
                xhat[k] = (xv[k] - mu[ch]) * inv_std[ch];
                out[k] = gv[ch] * xhat[k] + bv[ch];
            }

    const bool train = mode == BnMode::train;
    return make_result(
        std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), gv, n, c, plane, count, train](
            const Tensor& g, std::span<Tensor* const> gi) {
            auto at = [&](std::size_t i, std::size_t ch, std::size_t p) { return (i * c + ch) * plane + p; };
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t k = at(i, ch, p);
                        sum_g += g[k];
                        sum_gx += g[k] * xhat[k];
                    }
                if (gi[1]) (*gi[1])[ch] += sum_gx;
                if (gi[2]) (*gi[2])[ch] += sum_g;
                if (!gi[0]) continue;
                const double scale = gv[ch] * inv_std[ch];
                if (train) {
                    const double m = static_cast<double>(count);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < plane; ++p) {
                            const std::size_t k = at(i, ch, p);
                            (*gi[0])[k] += scale * (g[k] - sum_g / m - xhat[k] * sum_gx / m);
                        }
                } else {
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t p = 0; p < plane; ++p) {
                            const std::size_t k = at(i, ch, p);
                            (*gi[0])[k] += scale * g[k];
                        }
                }
            }
        });
}

// ---- normalization and reductions -----------------------------------------

Var l2_normalize(const Var& x) {
    require_rank(x, 2, "l2_normalize");
    const std::size_t n = x.shape()[0], d = x.shape()[1];
    Tensor out = x.value();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = out.row(i);
        norms[i] = l2_norm(r);
        if (!(norms[i] >= kNormEps)) {
            throw ZeroVectorError("l2_normalize: row " + std::to_string(i) + " has norm " +
                                  std::to_string(norms[i]) + " (representation collapse?)");
        }
        for (double& v : r) v /= norms[i];
    }
    Tensor y = out;
    return make_result(std::move(out), {x},
                       [y = std::move(y), norms = std::move(norms), n, d](const Tensor& g,
                                                                           std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < n; ++i) {
                               double yg = 0.0;
                               for (std::size_t j = 0; j < d; ++j) yg += y[i * d + j] * g[i * d + j];
                               for (std::size_t j = 0; j < d; ++j)
                                   (*gi[0])[i * d + j] += (g[i * d + j] - y[i * d + j] * yg) / norms[i];
                           }
                       });
}

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().values()) acc += v;
    Tensor out(Shape{}, acc);
    return make_result(std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> gi) {
        for (double& v : gi[0]->values()) v += g[0];
    });
}

Var mean(const Var& a) {
    const double count = static_cast<double>(a.value().numel());
    return scale(sum(a), 1.0 / count);
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    std::vector<Tensor> values;
    values.reserve(parts.size());
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        values.push_back(p.value());
        sizes.push_back(p.value().numel());
    }
    Tensor out = vstack(values);
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                       [sizes = std::move(sizes)](const Tensor& g, std::span<Tensor* const> gi) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < sizes.size(); ++k) {
                               if (gi[k])
                                   for (std::size_t i = 0; i < sizes[k]; ++i) (*gi[k])[i] += g[offset + i];
                               offset += sizes[k];
                           }
                       });
}

Var logsumexp_rows(const Var& x) {
    require_rank(x, 2, "logsumexp_rows");
    const std::size_t n = x.shape()[0], k = x.shape()[1];
    if (k == 0) throw DimensionError("logsumexp_rows: empty rows");
    Tensor out({n});
    Tensor softmax({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        auto r = x.value().row(i);
        const double m = *std::max_element(r.begin(), r.end());
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            softmax[i * k + j] = std::exp(r[j] - m);
            acc += softmax[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) softmax[i * k + j] /= acc;
        out[i] = m + std::log(acc);
    }
    return make_result(std::move(out), {x},
                       [softmax = std::move(softmax), n, k](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < k; ++j)
                                   (*gi[0])[i * k + j] += g[i] * softmax[i * k + j];
                       });
}

Var pick(const Var& x, std::span<const std::size_t> index) {
    require_rank(x, 2, "pick");
    const std::size_t n = x.shape()[0], k = x.shape()[1];
    if (index.size() != n) throw DimensionError("pick: index count does not match rows of " + shape_str(x.shape()));
    std::vector<std::size_t> idx(index.begin(), index.end());
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] >= k) throw Error("pick: index " + std::to_string(idx[i]) + " out of range " + std::to_string(k));
        out[i] = x.value()[i * k + idx[i]];
    }
    return make_result(std::move(out), {x}, [idx = std::move(idx), k](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < idx.size(); ++i) (*gi[0])[i * k + idx[i]] += g[i];
    });
}

Var softmax_xent_rows(const Var& x, std::span<const std::size_t> labels) {
    require_rank(x, 2, "softmax_xent_rows");
    const std::size_t n = x.shape()[0], k = x.shape()[1];
    if (k == 0) throw DimensionError("softmax_xent_rows: empty rows");
    if (labels.size() != n) {
        throw DimensionError("softmax_xent_rows: label count does not match rows of " + shape_str(x.shape()));
    }
    std::vector<std::size_t> idx(labels.begin(), labels.end());
    Tensor out({n});
    Tensor softmax({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] >= k) {
            throw Error("softmax_xent_rows: label " + std::to_string(idx[i]) + " out of range " + std::to_string(k));
        }
        auto r = x.value().row(i);
        const std::size_t top = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
        const double m = r[top];
        double rest = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            softmax[i * k + j] = std::exp(r[j] - m);
            if (j != top) rest += softmax[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) softmax[i * k + j] /= 1.0 + rest;
        out[i] = (m - r[idx[i]]) + std::log1p(rest);
    }
    return make_result(std::move(out), {x},
                       [softmax = std::move(softmax), idx = std::move(idx), k](const Tensor& g,
                                                                               std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < k; ++j) (*gi[0])[i * k + j] += g[i] * softmax[i * k + j];
                               (*gi[0])[i * k + idx[i]] -= g[i];
                           }
                       });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
    const std::size_t n = x.shape().at(0);
    for (std::size_t r : rows)
        if (r >= n) throw Error("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor out = take_rows(x.value(), idx);
    const std::size_t cols = x.value().numel() / std::max<std::size_t>(n, 1);
    return make_result(std::move(out), {x},
                       [idx = std::move(idx), cols](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t j = 0; j < cols; ++j) (*gi[0])[idx[i] * cols + j] += g[i * cols + j];
                       });
}

}  // namespace smog::ad
