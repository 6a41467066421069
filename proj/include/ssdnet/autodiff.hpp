#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive applied during a forward pass, in
// execution order, so inputs always precede the nodes that consume them.
// backward() walks the tape in reverse and accumulates gradients into
// every node that depends on a variable or Parameter leaf.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ssdnet/tensor.hpp"

namespace ssdnet {

/// A trainable array with its gradient slot.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad();
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(int axis) const { return value().dim(axis); }
    std::size_t id() const { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Propagates the gradient of node `self` into its inputs.
    using Backward = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool training = false, std::uint64_t seed = 0);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf whose gradient is kept on the tape (see grad()).
    Var variable(Tensor value);
    /// Leaf bound to a Parameter; backward() adds into parameter.grad.
    Var parameter(Parameter& parameter);

    Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, Backward backward);

    void backward(Var root);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    /// Gradient of the last backward() root w.r.t. node `id`; empty when the
    /// node does not influence the root.
    const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& grad(Var v) const { return grad(v.id()); }
    /// Gradient accumulator, zero-initialised on first access.
    Tensor& grad_slot(std::size_t id);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::string node_name(std::size_t id) const;

    bool training() const { return training_; }
    void set_training(bool training) { training_ = training; }
    std::mt19937_64& rng() { return rng_; }
    std::size_t size() const { return nodes_.size(); }

    /// Names nodes recorded while alive, e.g. "encoder.layer0".
    class Scope {
    public:
        Scope(Tape& tape, std::string name);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape& tape_;
        std::string previous_;
    };

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        Backward backward;
        Parameter* parameter = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool training_;
    std::mt19937_64 rng_;
    std::string scope_;
};

// ---------------------------------------------------------------------------
// Primitives
//
// Binary elementwise ops accept equal shapes, or a right operand whose shape
// is a trailing suffix of the left operand's (expansion over leading batch
// axes). Every other mismatch is a ShapeError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// scale * a + shift
Var affine(Var a, double scale, double shift = 0.0);

/// [..., m, k] x [k, n] or batched [B..., m, k] x [B..., k, n].
Var matmul(Var a, Var b);
Var transpose_last2(Var a);
Var reshape(Var a, Shape shape);

Var concat(const std::vector<Var>& parts, int axis);
Var concat_last(const std::vector<Var>& parts);
/// Elements [begin, end) along `axis`.
Var slice(Var a, int axis, std::size_t begin, std::size_t end);

Var sum(Var a);
Var mean(Var a);

Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// log(1 + exp(x)) in the overflow-safe form max(x, 0) + log1p(exp(-|x|)).
Var softplus(Var a);
/// clamp(x / 6 + 0.5, 0, 1); derivative 1/6 strictly inside (-3, 3), else 0.
Var hard_sigmoid(Var a);

/// Softmax over the last axis. `mask`, when given, has shape
/// [rows_per_block, last] and is applied to each block of rows; masked
/// entries produce exactly 0.
Var softmax_last(Var a, const std::vector<std::uint8_t>* mask = nullptr);

/// Normalises the last axis, then applies gain and bias of that width.
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

/// Gathers rows of `table` ([V, d]); output shape is `out_leading` + [d].
Var embedding(Var table, const std::vector<std::size_t>& rows, Shape out_leading);

/// Inverted dropout in training mode, exact identity otherwise.
Var dropout(Var a, double rate);

}  // namespace ssdnet
