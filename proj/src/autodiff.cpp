#include "fdsm/autodiff.hpp"

#include "fdsm/dct_kernel.hpp"
#include "fdsm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

namespace fdsm::ad {

const Tensor& Var::value() const {
    return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, recording_, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* primitive, Tensor value, std::initializer_list<Var> inputs,
                 Backward backward) {
    if (!value.all_finite()) {
        throw NonFiniteError(primitive, "output shape " + shape_to_string(value.shape()));
    }
    bool needs = false;
    if (recording_) {
        for (Var v : inputs) needs = needs || nodes_.at(v.id()).needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1) {
        throw ShapeError("backward() needs a scalar loss, got " +
                         shape_to_string(root.value.shape()));
    }
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.backward && !node.grad.empty()) node.backward(*this, node.grad);
    }
}

Tensor Tape::grad(Var v) const {
    const Node& node = nodes_.at(v.id());
    return node.grad.empty() ? Tensor(node.value.shape()) : node.grad;
}

Tensor& Tape::grad_buffer(Var v) {
    Node& node = nodes_.at(v.id());
    if (node.grad.empty()) node.grad = Tensor(node.value.shape());
    return node.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    Node& node = nodes_.at(v.id());
    if (!node.needs_grad) return;
    if (node.grad.empty()) {
        require_same_shape(node.value, g, "gradient accumulation");
        node.grad = g;
        return;
    }
    Tensor& buf = node.grad;
    require_same_shape(buf, g, "gradient accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Var VarMap::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("no variable bound for '" + name + "'");
    return it->second;
}

VarMap bind(Tape& tape, const ParameterSet& params, bool trainable) {
    VarMap vars;
    for (const auto& [name, value] : params) {
        vars.add(name, trainable ? tape.variable(value) : tape.constant(value));
    }
    return vars;
}

ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParameterSet& params) {
    Tape tape(true);
    const VarMap vars = bind(tape, params, true);
    const Var loss = loss_fn(tape, vars);
    tape.backward(loss);
    ValueAndGrad out;
    out.value = loss.value().item();
    for (const auto& [name, value] : params) out.grads.add(name, tape.grad(vars[name]));
    return out;
}

GradientMap grad(const LossFn& loss_fn, const ParameterSet& params) {
    return value_and_grad(loss_fn, params).grads;
}

double evaluate(const LossFn& loss_fn, const ParameterSet& params) {
    Tape tape(false);
    const VarMap vars = bind(tape, params, false);
    return loss_fn(tape, vars).value().item();
}

GradientMap finite_diff_grad(const LossFn& loss_fn, const ParameterSet& params, double h) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
    ParameterSet probe = params;
    GradientMap out;
    for (const auto& [name, value] : params) {
        Tensor g(value.shape());
        Tensor& p = probe.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = evaluate(loss_fn, probe);
            p[i] = saved - h;
            const double down = evaluate(loss_fn, probe);
            p[i] = saved;
            g[i] = (up - down) / (2.0 * h);
        }
        out.add(name, std::move(g));
    }
    return out;
}

namespace {

Tape& tape_of(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
    return a.tape();
}

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

std::size_t last_dim(const Tensor& t) {
    return t.shape().back();
}

} // namespace

Var add(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    return tape.record("add", a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    return tape.record("sub", a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, -1.0 * g);
    });
}

Var mul(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    return tape.record("mul", a.value() * b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.needs_grad(a)) t.accumulate(a, g * b.value());
        if (t.needs_grad(b)) t.accumulate(b, g * a.value());
    });
}

Var scale(Var a, double s) {
    return a.tape().record("scale", s * a.value(), {a},
                           [a, s](Tape& t, const Tensor& g) { t.accumulate(a, s * g); });
}

Var add_scalar(Var a, double s) {
    return a.tape().record("add_scalar", map(a.value(), [s](double v) { return v + s; }), {a},
                           [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var mul_const(Var a, const Tensor& w) {
    require_same_shape(a.value(), w, "mul_const");
    return a.tape().record("mul_const", a.value() * w, {a},
                           [a, w](Tape& t, const Tensor& g) { t.accumulate(a, g * w); });
}

Var square(Var a) {
    return a.tape().record("square", map(a.value(), [](double v) { return v * v; }), {a},
                           [a](Tape& t, const Tensor& g) {
                               t.accumulate(a, 2.0 * (g * a.value()));
                           });
}

namespace {

// out[r, :] += a[r, k] * b[k, :] for an [rows, inner] x [inner, cols] product.
std::vector<double> transposed(const double* m, std::size_t rows, std::size_t cols);

using vec4 = double __attribute__((vector_size(32)));

inline vec4 load4(const double* p) {
    vec4 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store4(double* p, vec4 v) { std::memcpy(p, &v, sizeof v); }

void gemm_rows(const double* __restrict a, const double* __restrict b, double* __restrict out,
               std::size_t row_begin, std::size_t row_end, std::size_t inner, std::size_t cols,
               std::size_t col_begin) {
    for (std::size_t i = row_begin; i < row_end; ++i) {
        double* __restrict orow = out + i * cols;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a[i * inner + k];
            const double* __restrict brow = b + k * cols;
            for (std::size_t c = col_begin; c < cols; ++c) orow[c] += aik * brow[c];
        }
    }
}

// out[rows, cols] += a[rows, inner] b[inner, cols] in 4x12 register tiles.
// Every output element sums over k in increasing order, tiled or not.
void gemm_accumulate(const double* __restrict a, const double* __restrict b, double* __restrict out,
                     std::size_t rows, std::size_t inner, std::size_t cols) {
    constexpr std::size_t RT = 4, CT = 12;
    const std::size_t rows_tiled = rows - rows % RT;
    const std::size_t cols_tiled = cols - cols % CT;
    for (std::size_t r = 0; r < rows_tiled; r += RT) {
        for (std::size_t j = 0; j < cols_tiled; j += CT) {
            vec4 acc[RT][3];
            for (std::size_t i = 0; i < RT; ++i)
                for (std::size_t c = 0; c < 3; ++c) acc[i][c] = load4(out + (r + i) * cols + j + 4 * c);
            for (std::size_t k = 0; k < inner; ++k) {
                const double* brow = b + k * cols + j;
                const vec4 b0 = load4(brow), b1 = load4(brow + 4), b2 = load4(brow + 8);
                for (std::size_t i = 0; i < RT; ++i) {
                    const double aik = a[(r + i) * inner + k];
                    acc[i][0] += aik * b0;
                    acc[i][1] += aik * b1;
                    acc[i][2] += aik * b2;
                }
            }
            for (std::size_t i = 0; i < RT; ++i)
                for (std::size_t c = 0; c < 3; ++c) store4(out + (r + i) * cols + j + 4 * c, acc[i][c]);
        }
        if (cols_tiled < cols) gemm_rows(a, b, out, r, r + RT, inner, cols, cols_tiled);
    }
    gemm_rows(a, b, out, rows_tiled, rows, inner, cols, 0);
}

// out[a_cols, b_cols] += a^T b with a [rows, a_cols], b [rows, b_cols].
void gemm_tn_accumulate(const double* __restrict a, const double* __restrict b, double* __restrict out,
                        std::size_t rows, std::size_t a_cols, std::size_t b_cols) {
    const auto at = transposed(a, rows, a_cols);
    gemm_accumulate(at.data(), b, out, a_cols, rows, b_cols);
}

std::vector<double> transposed(const double* m, std::size_t rows, std::size_t cols) {
    std::vector<double> t(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = m[i * cols + j];
    return t;
}

} // namespace

Var linear(Var x, Var w) {
    Tape& tape = tape_of(x, w);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.rank() != 2 || last_dim(xv) != wv.dim(0)) {
        throw ShapeError("linear: input " + shape_to_string(xv.shape()) + " vs weight " +
                         shape_to_string(wv.shape()));
    }
    const std::size_t in = wv.dim(0);
    const std::size_t out_dim = wv.dim(1);
    const std::size_t rows = xv.size() / in;
    Shape out_shape = xv.shape();
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    gemm_accumulate(xv.data().data(), wv.data().data(), out.data().data(), rows, in, out_dim);
    return tape.record("linear", std::move(out), {x, w},
                       [x, w, in, out_dim, rows](Tape& t, const Tensor& g) {
                           if (t.needs_grad(x)) {
                               const auto wt = transposed(w.value().data().data(), in, out_dim);
                               gemm_accumulate(g.data().data(), wt.data(), t.grad_buffer(x).data().data(),
                                               rows, out_dim, in);
                           }
                           if (t.needs_grad(w)) {
                               gemm_tn_accumulate(x.value().data().data(), g.data().data(),
                                                  t.grad_buffer(w).data().data(), rows, in, out_dim);
                           }
                       });
}

Var add_bias(Var x, Var b) {
    Tape& tape = tape_of(x, b);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    const std::size_t n = last_dim(xv);
    if (bv.size() != n) {
        throw ShapeError("add_bias: bias " + shape_to_string(bv.shape()) + " vs input " +
                         shape_to_string(xv.shape()));
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
    return tape.record("add_bias", std::move(out), {x, b}, [x, b, n](Tape& t, const Tensor& g) {
        t.accumulate(x, g);
        if (t.needs_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
    });
}

Var bmm(Var a, Var b) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw ShapeError("bmm: " + shape_to_string(av.shape()) + " x " +
                         shape_to_string(bv.shape()));
    }
    const std::size_t B = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
    Tensor out({B, n, m});
    for (std::size_t s = 0; s < B; ++s) {
        const double* ap = av.data().data() + s * n * k;
        const double* bp = bv.data().data() + s * k * m;
        double* op = out.data().data() + s * n * m;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t q = 0; q < k; ++q) {
                const double aiq = ap[i * k + q];
                const double* brow = bp + q * m;
                for (std::size_t j = 0; j < m; ++j) op[i * m + j] += aiq * brow[j];
            }
        }
    }
    return tape.record("bmm", std::move(out), {a, b}, [a, b, B, n, k, m](Tape& t, const Tensor& g) {
        const bool ga = t.needs_grad(a);
        const bool gb = t.needs_grad(b);
        double* gap = ga ? t.grad_buffer(a).data().data() : nullptr;
        double* gbp = gb ? t.grad_buffer(b).data().data() : nullptr;
        for (std::size_t s = 0; s < B; ++s) {
            const double* ap = a.value().data().data() + s * n * k;
            const double* bp = b.value().data().data() + s * k * m;
            const double* gp = g.data().data() + s * n * m;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t q = 0; q < k; ++q) {
                    const double* brow = bp + q * m;
                    const double* grow = gp + i * m;
                    if (ga) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        gap[s * n * k + i * k + q] += acc;
                    }
                    if (gb) {
                        const double aiq = ap[i * k + q];
                        double* gbrow = gbp + s * k * m + q * m;
                        for (std::size_t j = 0; j < m; ++j) gbrow[j] += aiq * grow[j];
                    }
                }
            }
        }
    });
}

Var transpose_last2(Var a) {
    const std::size_t r = a.value().rank();
    if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2");
    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(a, perm);
}

Var reshape(Var a, Shape shape) {
    const Shape original = a.value().shape();
    if (shape_size(shape) != a.value().size()) {
        throw ShapeError("reshape " + shape_to_string(original) + " -> " + shape_to_string(shape));
    }
    return a.tape().record("reshape", a.value().reshaped(std::move(shape)), {a},
                           [a, original](Tape& t, const Tensor& g) {
                               t.accumulate(a, g.reshaped(original));
                           });
}

namespace {

Tensor permute_tensor(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    if (perm.size() != r) throw ShapeError("permutation rank mismatch");
    std::vector<bool> seen(r, false);
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ShapeError("invalid permutation");
        seen[p] = true;
    }
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * x.dim(i + 1);
    Shape out_shape(r);
    std::vector<std::size_t> strides(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = x.dim(perm[i]);
        strides[i] = in_strides[perm[i]];
    }
    Tensor out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < out.size(); ++o) {
        out[o] = x[src];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += strides[d];
            if (idx[d] < out_shape[d]) break;
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return out;
}

} // namespace

Var permute(Var a, const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size() && perm[i] < perm.size(); ++i) inverse[perm[i]] = i;
    return a.tape().record("permute", permute_tensor(a.value(), perm), {a},
                           [a, inverse](Tape& t, const Tensor& g) {
                               t.accumulate(a, permute_tensor(g, inverse));
                           });
}

Var broadcast_axis(Var a, std::size_t axis, std::size_t n) {
    const Tensor& av = a.value();
    if (axis > av.rank() || n == 0) throw ShapeError("broadcast_axis: bad axis or extent");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
    for (std::size_t i = axis; i < av.rank(); ++i) inner *= av.dim(i);
    Shape shape = av.shape();
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < n; ++j) {
            std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                        out.data().begin() + static_cast<std::ptrdiff_t>((o * n + j) * inner));
        }
    }
    return a.tape().record("broadcast_axis", std::move(out), {a},
                           [a, outer, inner, n](Tape& t, const Tensor& g) {
                               if (!t.needs_grad(a)) return;
                               Tensor& ga = t.grad_buffer(a);
                               for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t j = 0; j < n; ++j)
                                       for (std::size_t i = 0; i < inner; ++i)
                                           ga[o * inner + i] += g[(o * n + j) * inner + i];
                           });
}

Var relu(Var a) {
    return a.tape().record("relu", map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                           [a](Tape& t, const Tensor& g) {
                               const Tensor& x = a.value();
                               Tensor gx(x.shape());
                               for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
                               t.accumulate(a, gx);
                           });
}

Var gelu(Var a) {
    // Exact form x * Phi(x).
    return a.tape().record(
        "gelu", map(a.value(), [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }),
        {a}, [a](Tape& t, const Tensor& g) {
            const Tensor& x = a.value();
            Tensor gx(x.shape());
            const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double v = x[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                gx[i] = g[i] * (cdf + v * pdf);
            }
            t.accumulate(a, gx);
        });
}

namespace {

double logistic(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

} // namespace

Var sigmoid(Var a) {
    Tensor y = map(a.value(), logistic);
    return a.tape().record("sigmoid", y, {a}, [a, y](Tape& t, const Tensor& g) {
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
        t.accumulate(a, gx);
    });
}

Var softmax_last(Var a) {
    const Tensor& x = a.value();
    const std::size_t n = last_dim(x);
    const std::size_t rows = x.size() / n;
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * n;
        double* yr = y.data().data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    return a.tape().record("softmax", y, {a}, [a, y, n, rows](Tape& t, const Tensor& g) {
        Tensor gx(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data().data() + r * n;
            const double* gr = g.data().data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] = yr[j] * (gr[j] - dot);
        }
        t.accumulate(a, gx);
    });
}

Var dct(Var a, std::size_t axis) {
    return a.tape().record("dct", dct_along(a.value(), axis), {a},
                           [a, axis](Tape& t, const Tensor& g) {
                               t.accumulate(a, idct_along(g, axis));
                           });
}

Var idct(Var a, std::size_t axis) {
    return a.tape().record("idct", idct_along(a.value(), axis), {a},
                           [a, axis](Tape& t, const Tensor& g) {
                               t.accumulate(a, dct_along(g, axis));
                           });
}

Var spectral_scale(Var a, std::size_t axis, const Tensor& multipliers) {
    return a.tape().record("spectral_scale", spectral_scale_along(a.value(), axis, multipliers), {a},
                           [a, axis, multipliers](Tape& t, const Tensor& g) {
                               t.accumulate(a, spectral_scale_along(g, axis, multipliers));
                           });
}

Var sum(Var a) {
    const Shape shape = a.value().shape();
    return a.tape().record("sum", Tensor::scalar(fdsm::sum(a.value())), {a},
                           [a, shape](Tape& t, const Tensor& g) {
                               t.accumulate(a, Tensor(shape, g.item()));
                           });
}

Var mean(Var a) {
    const Shape shape = a.value().shape();
    const double n = static_cast<double>(a.value().size());
    return a.tape().record("mean", Tensor::scalar(fdsm::sum(a.value()) / n), {a},
                           [a, shape, n](Tape& t, const Tensor& g) {
                               t.accumulate(a, Tensor(shape, g.item() / n));
                           });
}

} // namespace fdsm::ad
