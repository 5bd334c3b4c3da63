#include "aetlab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "aetlab/error.hpp"
#include "aetlab/kernels.hpp"

namespace aetlab::ad {

namespace {

void require(bool ok, const std::string& op, const std::string& msg) {
    if (!ok) throw ShapeError(op + ": " + msg);
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void add_into(Tensor& dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src[i];
}

}  // namespace

// ---- Tape -------------------------------------------------------------------

Var Tape::input(Tensor value, bool requires_grad, std::string name) {
    Node n;
    n.kind = Kind::Input;
    n.op = std::move(name);
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    inputs_.push_back(static_cast<int>(nodes_.size() - 1));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Tensor& value, std::string name, bool requires_grad) {
    Node n;
    n.kind = Kind::Param;
    n.op = std::move(name);
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.kind = Kind::Constant;
    n.op = "constant";
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw InvalidArgument("Var not on this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value(); }
const std::string& Tape::op(Var v) const { return node(v).op; }

Var Tape::record(std::string op, std::vector<Var> args, ForwardFn forward, BackwardFn backward) {
    Node n;
    n.kind = Kind::Op;
    n.op = std::move(op);
    std::vector<const Tensor*> ptrs;
    for (Var a : args) {
        const Node& an = node(a);
        n.args.push_back(a.id);
        ptrs.push_back(&an.value());
        n.requires_grad = n.requires_grad || an.requires_grad;
    }
    try {
        n.owned = forward(ptrs);
    } catch (const ShapeError& e) {
        throw ShapeError("primitive '" + n.op + "' (node " + std::to_string(nodes_.size()) + "): " + e.what());
    }
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::forward_eval(std::span<const Tensor> inputs) {
    if (inputs.size() != inputs_.size())
        throw ShapeError("forward_eval: tape has " + std::to_string(inputs_.size()) + " inputs, got " +
                         std::to_string(inputs.size()));
    if (nodes_.empty()) throw InvalidArgument("forward_eval on an empty tape");
    std::size_t next_input = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.kind == Kind::Input) {
            const Tensor& in = inputs[next_input++];
            if (in.shape != n.owned.shape)
                throw ShapeError("input '" + n.op + "' (node " + std::to_string(i) + ") expects shape " +
                                 shape_str(n.owned.shape) + ", got " + shape_str(in.shape));
            n.owned = in;
        } else if (n.kind == Kind::Op) {
            std::vector<const Tensor*> ptrs;
            for (int a : n.args) ptrs.push_back(&nodes_[static_cast<std::size_t>(a)].value());
            Tensor out;
            try {
                out = n.forward(ptrs);
            } catch (const ShapeError& e) {
                throw ShapeError("primitive '" + n.op + "' (node " + std::to_string(i) + "): " + e.what());
            }
            if (out.shape != n.owned.shape)
                throw ShapeError("primitive '" + n.op + "' (node " + std::to_string(i) + ") produced shape " +
                                 shape_str(out.shape) + ", recorded " + shape_str(n.owned.shape));
            n.owned = std::move(out);
        }
    }
    return nodes_.back().value();
}

Gradients Tape::backward(Var loss) const {
    const Tensor& v = value(loss);
    if (v.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(v.shape));
    return propagate(loss, Tensor(v.shape, 1.0));
}

Gradients Tape::backward(Var output, const Tensor& seed) const {
    if (seed.shape != value(output).shape)
        throw ShapeError("backward: seed shape " + shape_str(seed.shape) + " != output shape " +
                         shape_str(value(output).shape));
    return propagate(output, seed);
}

Gradients Tape::propagate(Var output, Tensor seed) const {
    node(output);
    Gradients g;
    g.grads_.resize(nodes_.size());
    g.present_.assign(nodes_.size(), false);
    const auto out_id = static_cast<std::size_t>(output.id);
    if (nodes_[out_id].requires_grad) {
        g.grads_[out_id] = std::move(seed);
        g.present_[out_id] = true;
    }
    for (std::size_t i = out_id + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.kind != Kind::Op || !g.present_[i]) continue;
        std::vector<const Tensor*> args;
        std::vector<Tensor*> gargs;
        for (int a : n.args) {
            const auto ai = static_cast<std::size_t>(a);
            const Node& an = nodes_[ai];
            args.push_back(&an.value());
            if (an.requires_grad) {
                if (!g.present_[ai]) {
                    g.grads_[ai] = Tensor(an.value().shape, 0.0);
                    g.present_[ai] = true;
                }
                gargs.push_back(&g.grads_[ai]);
            } else {
                gargs.push_back(nullptr);
            }
        }
        n.backward(args, n.owned, g.grads_[i], gargs);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.kind != Kind::Op && n.requires_grad && !g.present_[i]) {
            g.grads_[i] = Tensor(n.value().shape, 0.0);
            g.present_[i] = true;
        }
    }
    return g;
}

const Tensor& Gradients::operator[](Var v) const {
    if (!has(v)) throw InvalidArgument("no gradient recorded for node " + std::to_string(v.id));
    return grads_[static_cast<std::size_t>(v.id)];
}

bool Gradients::has(Var v) const {
    return v.id >= 0 && static_cast<std::size_t>(v.id) < present_.size() && present_[static_cast<std::size_t>(v.id)];
}

const Tensor& forward_eval(Tape& tape, std::span<const Tensor> inputs) { return tape.forward_eval(inputs); }

// ---- helpers ----------------------------------------------------------------

Tensor log_softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("log_softmax expects [N×K], got " + shape_str(logits.shape));
    Tensor out(logits.shape);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data.data() + i * k;
        double* o = out.data.data() + i * k;
        const double m = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < k; ++j) o[j] = z[j] - lse;
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    Tensor out = log_softmax(logits);
    for (double& v : out.data) v = std::exp(v);
    return out;
}

std::vector<double> cross_entropy_per_row(const Tensor& logits, std::span<const int> labels) {
    const Tensor lp = log_softmax(logits);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw InvalidArgument("cross_entropy: label out of range");
        out[i] = -lp.data[i * k + static_cast<std::size_t>(labels[i])];
    }
    return out;
}

// ---- primitives ---------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
    return t.record(
        "matmul", {a, b},
        [](std::span<const Tensor* const> in) {
            const Tensor &A = *in[0], &B = *in[1];
            require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul",
                    "incompatible shapes " + shape_str(A.shape) + " x " + shape_str(B.shape));
            Tensor C({A.dim(0), B.dim(1)});
            kernels::gemm_parallel(A.dim(0), B.dim(1), A.dim(1), A.data.data(), A.dim(1), B.data.data(), B.dim(1),
                                   C.data.data(), B.dim(1));
            return C;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            const Tensor &A = *in[0], &B = *in[1];
            const std::size_t M = A.dim(0), K = A.dim(1), N = B.dim(1);
            if (ga[0]) {
                std::vector<double> bt(N * K);
                kernels::transpose(K, N, B.data.data(), bt.data());
                kernels::gemm_parallel(M, K, N, g.data.data(), N, bt.data(), K, ga[0]->data.data(), K, true);
            }
            if (ga[1]) {
                std::vector<double> at(K * M);
                kernels::transpose(M, K, A.data.data(), at.data());
                kernels::gemm_parallel(K, N, M, at.data(), M, g.data.data(), N, ga[1]->data.data(), N, true);
            }
        });
}

Var dense(Tape& t, Var x, Var w, Var b) {
    return t.record(
        "dense", {x, w, b},
        [](std::span<const Tensor* const> in) {
            const Tensor &X = *in[0], &W = *in[1], &B = *in[2];
            require(X.rank() == 2 && W.rank() == 2 && B.rank() == 1 && X.dim(1) == W.dim(0) && W.dim(1) == B.dim(0),
                    "dense",
                    "incompatible shapes x" + shape_str(X.shape) + " W" + shape_str(W.shape) + " b" +
                        shape_str(B.shape));
            Tensor Y({X.dim(0), W.dim(1)});
            kernels::dense_forward(X.dim(0), X.dim(1), W.dim(1), X.data.data(), W.data.data(), B.data.data(),
                                   Y.data.data());
            return Y;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            const Tensor &X = *in[0], &W = *in[1];
            const std::size_t n = X.dim(0), d = X.dim(1), f = W.dim(1);
            if (ga[0]) {
                std::vector<double> gx(n * d);
                kernels::dense_backward_input(n, d, f, g.data.data(), W.data.data(), gx.data());
                add_into(*ga[0], gx);
            }
            if (ga[1] || ga[2]) {
                std::vector<double> gw(d * f), gb(f);
                kernels::dense_backward_params(n, d, f, g.data.data(), X.data.data(), gw.data(), gb.data());
                if (ga[1]) add_into(*ga[1], gw);
                if (ga[2]) add_into(*ga[2], gb);
            }
        });
}

Var add_bias(Tape& t, Var x, Var b) {
    return t.record(
        "add_bias", {x, b},
        [](std::span<const Tensor* const> in) {
            const Tensor &X = *in[0], &B = *in[1];
            require(X.rank() == 2 && B.rank() == 1 && X.dim(1) == B.dim(0), "add_bias",
                    "incompatible shapes " + shape_str(X.shape) + " + " + shape_str(B.shape));
            Tensor Y = X;
            const std::size_t f = B.dim(0);
            for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += B.data[i % f];
            return Y;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (ga[0]) add_into(*ga[0], g);
            if (ga[1]) {
                const std::size_t f = in[1]->dim(0);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga[1]->data[i % f] += g.data[i];
            }
        });
}

namespace {
kernels::ConvGeom conv_geom(const Tensor& x, const Tensor& w) {
    kernels::ConvGeom geo;
    geo.batch = x.dim(0);
    geo.in_channels = x.dim(1);
    geo.height = x.dim(2);
    geo.width = x.dim(3);
    geo.out_channels = w.dim(0);
    geo.kernel = w.dim(2);
    return geo;
}
}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b) {
    return t.record(
        "conv2d", {x, w, b},
        [](std::span<const Tensor* const> in) {
            const Tensor &X = *in[0], &W = *in[1], &B = *in[2];
            require(X.rank() == 4 && W.rank() == 4 && B.rank() == 1, "conv2d",
                    "expects x[N,C,H,W], w[O,C,k,k], b[O]; got " + shape_str(X.shape) + ", " + shape_str(W.shape) +
                        ", " + shape_str(B.shape));
            require(W.dim(1) == X.dim(1) && W.dim(2) == W.dim(3) && W.dim(2) % 2 == 1 && B.dim(0) == W.dim(0),
                    "conv2d", "weight " + shape_str(W.shape) + " incompatible with input " + shape_str(X.shape));
            const auto geo = conv_geom(X, W);
            Tensor Y({geo.batch, geo.out_channels, geo.height, geo.width});
            kernels::conv2d_forward(geo, X.data.data(), W.data.data(), B.data.data(), Y.data.data());
            return Y;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            const Tensor &X = *in[0], &W = *in[1];
            const auto geo = conv_geom(X, W);
            if (ga[0]) {
                std::vector<double> gx(X.numel());
                kernels::conv2d_backward_input(geo, g.data.data(), W.data.data(), gx.data());
                add_into(*ga[0], gx);
            }
            if (ga[1] || ga[2]) {
                std::vector<double> gw(W.numel()), gb(geo.out_channels);
                kernels::conv2d_backward_params(geo, g.data.data(), X.data.data(), gw.data(), gb.data());
                if (ga[1]) add_into(*ga[1], gw);
                if (ga[2]) add_into(*ga[2], gb);
            }
        });
}

Var relu(Tape& t, Var x) {
    return t.record(
        "relu", {x},
        [](std::span<const Tensor* const> in) {
            Tensor Y = *in[0];
            for (double& v : Y.data) v = v > 0.0 ? v : 0.0;
            return Y;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            const auto& X = in[0]->data;
            for (std::size_t i = 0; i < X.size(); ++i)
                if (X[i] > 0.0) ga[0]->data[i] += g.data[i];
        });
}

Var add(Tape& t, Var a, Var b) {
    return t.record(
        "add", {a, b},
        [](std::span<const Tensor* const> in) {
            require(in[0]->shape == in[1]->shape, "add",
                    "shape mismatch " + shape_str(in[0]->shape) + " vs " + shape_str(in[1]->shape));
            Tensor Y = *in[0];
            for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] += in[1]->data[i];
            return Y;
        },
        [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (ga[0]) add_into(*ga[0], g);
            if (ga[1]) add_into(*ga[1], g);
        });
}

Var sub(Tape& t, Var a, Var b) {
    return t.record(
        "sub", {a, b},
        [](std::span<const Tensor* const> in) {
            require(in[0]->shape == in[1]->shape, "sub",
                    "shape mismatch " + shape_str(in[0]->shape) + " vs " + shape_str(in[1]->shape));
            Tensor Y = *in[0];
            for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] -= in[1]->data[i];
            return Y;
        },
        [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (ga[0]) add_into(*ga[0], g);
            if (ga[1])
                for (std::size_t i = 0; i < g.data.size(); ++i) ga[1]->data[i] -= g.data[i];
        });
}

Var scale(Tape& t, Var x, double c) {
    return t.record(
        "scale", {x},
        [c](std::span<const Tensor* const> in) {
            Tensor Y = *in[0];
            for (double& v : Y.data) v *= c;
            return Y;
        },
        [c](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            for (std::size_t i = 0; i < g.data.size(); ++i) ga[0]->data[i] += c * g.data[i];
        });
}

Var flatten(Tape& t, Var x) {
    return t.record(
        "flatten", {x},
        [](std::span<const Tensor* const> in) {
            const Tensor& X = *in[0];
            require(X.rank() >= 1, "flatten", "needs a batch axis");
            return Tensor({X.dim(0), X.row_size()}, X.data);
        },
        [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (ga[0]) add_into(*ga[0], g);
        });
}

Var avgpool2(Tape& t, Var x) {
    return t.record(
        "avgpool2", {x},
        [](std::span<const Tensor* const> in) {
            const Tensor& X = *in[0];
            require(X.rank() == 4 && X.dim(2) % 2 == 0 && X.dim(3) % 2 == 0, "avgpool2",
                    "expects [N,C,H,W] with even H, W; got " + shape_str(X.shape));
            Tensor Y({X.dim(0), X.dim(1), X.dim(2) / 2, X.dim(3) / 2});
            kernels::avgpool2_forward(X.dim(0) * X.dim(1), X.dim(2), X.dim(3), X.data.data(), Y.data.data());
            return Y;
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            const Tensor& X = *in[0];
            std::vector<double> gx(X.numel());
            kernels::avgpool2_backward(X.dim(0) * X.dim(1), X.dim(2), X.dim(3), g.data.data(), gx.data());
            add_into(*ga[0], gx);
        });
}

Var sum(Tape& t, Var x) {
    return t.record(
        "sum", {x},
        [](std::span<const Tensor* const> in) {
            double s = 0.0;
            for (double v : in[0]->data) s += v;
            return Tensor::scalar(s);
        },
        [](std::span<const Tensor* const>, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            for (double& v : ga[0]->data) v += g.data[0];
        });
}

Var sum_squares(Tape& t, Var x) {
    return t.record(
        "sum_squares", {x},
        [](std::span<const Tensor* const> in) {
            double s = 0.0;
            for (double v : in[0]->data) s += v * v;
            return Tensor::scalar(s);
        },
        [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            for (std::size_t i = 0; i < in[0]->data.size(); ++i) ga[0]->data[i] += 2.0 * in[0]->data[i] * g.data[0];
        });
}

Var l2_norm(Tape& t, Var x) {
    return t.record(
        "l2_norm", {x},
        [](std::span<const Tensor* const> in) {
            double s = 0.0;
            for (double v : in[0]->data) s += v * v;
            return Tensor::scalar(std::sqrt(s));
        },
        [](std::span<const Tensor* const> in, const Tensor& out, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            const double norm = out.data[0];
            if (norm == 0.0) return;
            for (std::size_t i = 0; i < in[0]->data.size(); ++i)
                ga[0]->data[i] += in[0]->data[i] / norm * g.data[0];
        });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int> labels, Reduction r) {
    return t.record(
        "softmax_cross_entropy", {logits},
        [labels, r](std::span<const Tensor* const> in) {
            const Tensor& Z = *in[0];
            require(Z.rank() == 2 && Z.dim(0) == labels.size(), "softmax_cross_entropy",
                    "logits " + shape_str(Z.shape) + " vs " + std::to_string(labels.size()) + " labels");
            const auto per_row = cross_entropy_per_row(Z, labels);
            double s = 0.0;
            for (double v : per_row) s += v;
            if (r == Reduction::Mean && !per_row.empty()) s /= static_cast<double>(per_row.size());
            return Tensor::scalar(s);
        },
        [labels, r](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            if (!ga[0]) return;
            const Tensor& Z = *in[0];
            const std::size_t n = Z.dim(0), k = Z.dim(1);
            const Tensor p = softmax(Z);
            const double w = g.data[0] * (r == Reduction::Mean && n > 0 ? 1.0 / static_cast<double>(n) : 1.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const double target = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
                    ga[0]->data[i * k + j] += w * (p.data[i * k + j] - target);
                }
        });
}

Var kl_divergence(Tape& t, Var p_logits, Var q_logits, Reduction r) {
    return t.record(
        "kl_divergence", {p_logits, q_logits},
        [r](std::span<const Tensor* const> in) {
            require(in[0]->rank() == 2 && in[0]->shape == in[1]->shape, "kl_divergence",
                    "shape mismatch " + shape_str(in[0]->shape) + " vs " + shape_str(in[1]->shape));
            const Tensor lp = log_softmax(*in[0]);
            const Tensor lq = log_softmax(*in[1]);
            double s = 0.0;
            for (std::size_t i = 0; i < lp.data.size(); ++i) s += std::exp(lp.data[i]) * (lp.data[i] - lq.data[i]);
            const std::size_t n = in[0]->dim(0);
            if (r == Reduction::Mean && n > 0) s /= static_cast<double>(n);
            return Tensor::scalar(s);
        },
        [r](std::span<const Tensor* const> in, const Tensor&, const Tensor& g, std::span<Tensor* const> ga) {
            const Tensor lp = log_softmax(*in[0]);
            const Tensor lq = log_softmax(*in[1]);
            const std::size_t n = in[0]->dim(0), k = in[0]->dim(1);
            const double w = g.data[0] * (r == Reduction::Mean && n > 0 ? 1.0 / static_cast<double>(n) : 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                double row_kl = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t idx = i * k + j;
                    row_kl += std::exp(lp.data[idx]) * (lp.data[idx] - lq.data[idx]);
                }
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t idx = i * k + j;
                    const double p = std::exp(lp.data[idx]);
                    const double q = std::exp(lq.data[idx]);
                    if (ga[0]) ga[0]->data[idx] += w * p * ((lp.data[idx] - lq.data[idx]) - row_kl);
                    if (ga[1]) ga[1]->data[idx] += w * (q - p);
                }
            }
        });
}

}  // namespace aetlab::ad
