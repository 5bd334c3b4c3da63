#pragma once

// Reverse-mode differentiation over a recorded tape.
//
// A Tape is built define-by-run: every primitive call evaluates its output
// immediately and appends a node holding the forward and backward rules.
// Leaves are either replaceable inputs or parameters bound (by reference) to
// tensors owned elsewhere, usually a model's ParamList. The tape can be
// replayed on new inputs with `forward_eval`.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aetlab/tensor.hpp"

namespace aetlab::ad {

struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

enum class Reduction { Sum, Mean };

class Gradients;

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// A replaceable input leaf. Inputs are replayed in creation order.
    Var input(Tensor value, bool requires_grad = false, std::string name = "input");
    /// A parameter leaf referencing `value`; the referenced tensor must outlive the tape.
    Var param(const Tensor& value, std::string name, bool requires_grad = true);
    /// A constant leaf owned by the tape.
    Var constant(Tensor value);

    const Tensor& value(Var v) const;
    const std::string& op(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t num_inputs() const noexcept { return inputs_.size(); }

    /// Gradients of a scalar `loss` with respect to every leaf that requires them.
    Gradients backward(Var loss) const;
    /// Vector-Jacobian product: propagates `seed` (same shape as `output`) back to the leaves.
    Gradients backward(Var output, const Tensor& seed) const;

    /// Re-evaluates every node with new input values; returns the last node's value.
    const Tensor& forward_eval(std::span<const Tensor> inputs);

    // Primitive recording; used by the op functions below.
    using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
    using BackwardFn = std::function<void(std::span<const Tensor* const> args, const Tensor& out,
                                          const Tensor& gout, std::span<Tensor* const> gargs)>;
    Var record(std::string op, std::vector<Var> args, ForwardFn forward, BackwardFn backward);

private:
    enum class Kind { Input, Param, Constant, Op };
    struct Node {
        Kind kind = Kind::Op;
        std::string op;
        std::vector<int> args;
        Tensor owned;
        const Tensor* external = nullptr;
        bool requires_grad = false;
        ForwardFn forward;
        BackwardFn backward;
        const Tensor& value() const { return external ? *external : owned; }
    };

    const Node& node(Var v) const;
    Gradients propagate(Var output, Tensor seed) const;

    std::vector<Node> nodes_;
    std::vector<int> inputs_;
    friend class Gradients;
};

class Gradients {
public:
    /// Gradient of a leaf (zeros if it requires grad but the output does not depend on it).
    const Tensor& operator[](Var v) const;
    bool has(Var v) const;

private:
    friend class Tape;
    std::vector<Tensor> grads_;
    std::vector<bool> present_;
};

// Free-function form of Tape::forward_eval.
const Tensor& forward_eval(Tape& tape, std::span<const Tensor> inputs);

// ---- primitives -----------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);                  // [M×K]·[K×N]
Var dense(Tape& t, Var x, Var w, Var b);            // x[N×D]·W[D×F] + b[F]
Var add_bias(Tape& t, Var x, Var b);                // x[N×F] + b[F]
Var conv2d(Tape& t, Var x, Var w, Var b);           // x[N,C,H,W], w[O,C,k,k], b[O]; stride 1, zero "same" padding
Var relu(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
Var flatten(Tape& t, Var x);                        // [N, ...] -> [N, prod(...)]
Var avgpool2(Tape& t, Var x);                       // 2×2 average pool, stride 2
Var sum(Tape& t, Var x);                            // scalar
Var sum_squares(Tape& t, Var x);                    // scalar Σ x²
Var l2_norm(Tape& t, Var x);                        // scalar ||x||₂ (subgradient 0 at the origin)
/// Softmax cross-entropy via log-sum-exp; labels index the last axis of logits[N×K].
Var softmax_cross_entropy(Tape& t, Var logits, std::vector<int> labels, Reduction r = Reduction::Mean);
/// Σ_rows KL(softmax(p_logits) || softmax(q_logits)), optionally divided by the row count.
Var kl_divergence(Tape& t, Var p_logits, Var q_logits, Reduction r = Reduction::Mean);

// ---- plain helpers (no tape) ------------------------------------------------

/// Row-wise log-softmax of a [N×K] array.
Tensor log_softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits);
std::vector<double> cross_entropy_per_row(const Tensor& logits, std::span<const int> labels);

}  // namespace aetlab::ad
