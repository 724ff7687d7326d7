#pragma once

#include "fdsm/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

namespace fdsm::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape over a fixed vocabulary of primitives.
///
/// A non-recording tape evaluates values only; it is what inference uses.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);

    bool recording() const noexcept { return recording_; }
    bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
    const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }

    /// Appends the output of `primitive`. Throws NonFiniteError when `value`
    /// holds NaN or Inf.
    Var record(const char* primitive, Tensor value, std::initializer_list<Var> inputs,
               Backward backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
    void backward(Var loss);

    /// Gradient reached at `v` by the last backward(); zeros when unreached.
    Tensor grad(Var v) const;

    /// Adds `g` into the gradient buffer of `v` (no-op for constants).
    void accumulate(Var v, const Tensor& g);
    /// Zero-initialised gradient buffer of `v`, for in-place accumulation.
    Tensor& grad_buffer(Var v);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Backward backward;
    };

    std::deque<Node> nodes_;
    bool recording_;
};

/// Parameter name -> Var on one tape.
class VarMap {
public:
    void add(const std::string& name, Var v) { vars_.emplace(name, v); }
    Var operator[](const std::string& name) const;
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }

private:
    std::map<std::string, Var> vars_;
};

using LossFn = std::function<Var(Tape&, const VarMap&)>;

VarMap bind(Tape& tape, const ParameterSet& params, bool trainable);

struct ValueAndGrad {
    double value = 0.0;
    GradientMap grads;
};

ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParameterSet& params);
/// d(loss)/d(p) for every parameter via the tape.
GradientMap grad(const LossFn& loss_fn, const ParameterSet& params);
/// Forward value only.
double evaluate(const LossFn& loss_fn, const ParameterSet& params);
/// Central differences (loss(p+h) - loss(p-h)) / 2h, one scalar at a time.
GradientMap finite_diff_grad(const LossFn& loss_fn, const ParameterSet& params, double h);

// Registered primitives. Each records one node; shapes are checked eagerly.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Elementwise product with a non-differentiated tensor of the same shape.
Var mul_const(Var a, const Tensor& w);
Var square(Var a);

/// x[..., in] @ w[in, out].
Var linear(Var x, Var w);
/// x[..., n] + b[n].
Var add_bias(Var x, Var b);
/// a[B, n, k] @ b[B, k, m].
Var bmm(Var a, Var b);
Var transpose_last2(Var a);
Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& perm);
/// Inserts a new axis of extent `n` at `axis`, repeating the input along it.
Var broadcast_axis(Var a, std::size_t axis, std::size_t n);

Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_last(Var a);

Var dct(Var a, std::size_t axis);
Var idct(Var a, std::size_t axis);
/// IDCT(DCT(a) * m) along `axis` with constant multipliers (see spectral_scale_along).
/// Its Jacobian D^T diag(m) D is symmetric, so the vector-Jacobian product is
/// the same operator applied to the incoming gradient.
Var spectral_scale(Var a, std::size_t axis, const Tensor& multipliers);

Var sum(Var a);
Var mean(Var a);

} // namespace fdsm::ad
