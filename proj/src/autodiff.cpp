#include "ssdnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssdnet/errors.hpp"

namespace ssdnet {

void Parameter::zero_grad() {
    if (grad.shape() != value.shape()) {
        grad = Tensor(value.shape());
    } else {
        grad.fill(0.0);
    }
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tape::Tape(bool training, std::uint64_t seed) : training_(training), rng_(seed) {}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("non-finite constant recorded on tape");
    nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    if (!value.all_finite()) throw NumericError("non-finite variable recorded on tape");
    nodes_.push_back(Node{"variable", std::move(value), {}, {}, {}, nullptr, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
    if (!p.value.all_finite()) throw NumericError("parameter " + p.name + " holds non-finite values");
    nodes_.push_back(Node{p.name, p.value, {}, {}, {}, &p, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, Backward backward) {
    std::string name = scope_.empty() ? std::string(op) : scope_ + "/" + std::string(op);
    if (!value.all_finite()) {
        throw NumericError("non-finite value produced by " + name);
    }
    bool needs_grad = false;
    for (std::size_t id : inputs) needs_grad = needs_grad || nodes_[id].requires_grad;
    if (!needs_grad) backward = nullptr;
    nodes_.push_back(Node{std::move(name), std::move(value), {}, std::move(inputs), std::move(backward), nullptr,
                          needs_grad});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
        n.grad = Tensor(n.value.shape());
    }
    return n.grad;
}

std::string Tape::node_name(std::size_t id) const { return nodes_[id].op; }

void Tape::backward(Var root) {
    if (root.value().size() != 1) {
        throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_slot(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.requires_grad) continue;
        // Callbacks only touch gradients of earlier nodes; nodes_ never grows here.
        if (n.backward) n.backward(*this, i);
        if (n.parameter != nullptr) {
            Parameter& p = *n.parameter;
            if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
            const Tensor& g = nodes_[i].grad;
            for (std::size_t k = 0; k < g.size(); ++k) p.grad[k] += g[k];
        }
    }
}

Tape::Scope::Scope(Tape& tape, std::string name) : tape_(tape), previous_(tape.scope_) {
    tape_.scope_ = previous_.empty() ? std::move(name) : previous_ + "." + name;
}

Tape::Scope::~Scope() { tape_.scope_ = previous_; }

namespace {

Tape& same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
    return a.tape();
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::size_t norm_axis(int axis, std::size_t rank) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

// dfn(x, y, out, g, gx, gy) accumulates partials into gx, gy.
template <class Fwd, class Bwd>
Var binary(std::string_view op, Var a, Var b, Fwd fwd, Bwd bwd) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Shape out_shape;
    if (av.shape() == bv.shape() || is_suffix(bv.shape(), av.shape())) {
        out_shape = av.shape();
    } else if (is_suffix(av.shape(), bv.shape())) {
        out_shape = bv.shape();
    } else {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }
    Tensor out(out_shape);
    const std::size_t na = av.size(), nb = bv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i % na], bv[i % nb]);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(op, std::move(out), {ia, ib}, [ia, ib, bwd](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        const Tensor& o = t.value(self);
        const bool want_a = t.requires_grad(ia), want_b = t.requires_grad(ib);
        Tensor* ga = want_a ? &t.grad_slot(ia) : nullptr;
        Tensor* gb = want_b ? &t.grad_slot(ib) : nullptr;
        const std::size_t na = x.size(), nb = y.size();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double dx = 0.0, dy = 0.0;
            bwd(x[i % na], y[i % nb], o[i], g[i], dx, dy);
            if (ga) (*ga)[i % na] += dx;
            if (gb) (*gb)[i % nb] += dy;
        }
    });
}

// dfn(x, y) returns dy/dx given input x and output y.
template <class Fwd, class Deriv>
Var unary(std::string_view op, Var a, Fwd fwd, Deriv deriv) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    const std::size_t ia = a.id();
    return a.tape().record(op, std::move(out), {ia}, [ia, deriv](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
    });
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m,k] += G[m,n] B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = G + i * n;
        double* c = C + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * b[j];
            c[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* g = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
        }
    }
}

}  // namespace

Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& dx, double& dy) {
            dx = g;
            dy = g;
        });
}

Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& dx, double& dy) {
            dx = g;
            dy = -g;
        });
}

Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& dx, double& dy) {
            dx = g * y;
            dy = g * x;
        });
}

Var div(Var a, Var b) {
    for (double v : b.value().data()) {
        if (v == 0.0) throw DomainError("div: division by zero");
    }
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double o, double g, double& dx, double& dy) {
            dx = g / y;
            dy = -g * o / y;
        });
}

Var affine(Var a, double scale, double shift) {
    return unary(
        "affine", a, [scale, shift](double x) { return scale * x + shift; },
        [scale](double, double) { return scale; });
}

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() < 2 || bv.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
    }
    const std::size_t m = av.dim(-2), k = av.dim(-1);
    if (bv.dim(-2) != k) {
        throw ShapeError("matmul inner extent mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t n = bv.dim(-1);
    const bool shared_rhs = bv.rank() == 2;
    std::size_t batch = 1;
    if (!shared_rhs) {
        if (av.rank() != bv.rank() ||
            !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
            throw ShapeError("matmul batch mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
        }
        batch = av.size() / (m * k);
    }
    Shape out_shape(av.shape().begin(), av.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out(out_shape);
    if (shared_rhs) {
        gemm_nn(av.data().data(), bv.data().data(), out.data().data(), av.size() / k, k, n);
    } else {
        for (std::size_t q = 0; q < batch; ++q) {
            gemm_nn(av.data().data() + q * m * k, bv.data().data() + q * k * n, out.data().data() + q * m * n, m,
                    k, n);
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("matmul", std::move(out), {ia, ib},
                       [ia, ib, m, k, n, batch, shared_rhs](Tape& t, std::size_t self) {
                           const double* g = t.grad(self).data().data();
                           const double* x = t.value(ia).data().data();
                           const double* y = t.value(ib).data().data();
                           const std::size_t rows = t.value(ia).size() / k;
                           if (t.requires_grad(ia)) {
                               double* gx = t.grad_slot(ia).data().data();
                               if (shared_rhs) {
                                   gemm_nt(g, y, gx, rows, n, k);
                               } else {
                                   for (std::size_t q = 0; q < batch; ++q)
                                       gemm_nt(g + q * m * n, y + q * k * n, gx + q * m * k, m, n, k);
                               }
                           }
                           if (t.requires_grad(ib)) {
                               double* gy = t.grad_slot(ib).data().data();
                               if (shared_rhs) {
                                   gemm_tn(x, g, gy, rows, k, n);
                               } else {
                                   for (std::size_t q = 0; q < batch; ++q)
                                       gemm_tn(x + q * m * k, g + q * m * n, gy + q * k * n, m, k, n);
                               }
                           }
                       });
}

Var transpose_last2(Var a) {
    const Tensor& av = a.value();
    if (av.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2, got " + shape_str(av.shape()));
    const std::size_t m = av.dim(-2), n = av.dim(-1), batch = av.size() / (m * n);
    Shape out_shape = av.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out(out_shape);
    for (std::size_t q = 0; q < batch; ++q)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[q * m * n + j * m + i] = av[q * m * n + i * n + j];
    const std::size_t ia = a.id();
    return a.tape().record("transpose", std::move(out), {ia}, [ia, m, n, batch](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t q = 0; q < batch; ++q)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[q * m * n + i * n + j] += g[q * m * n + j * m + i];
    });
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    const std::size_t ia = a.id();
    return a.tape().record("reshape", std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    Tape& tape = parts.front().tape();
    const Shape& first = parts.front().shape();
    const std::size_t ax = norm_axis(axis, first.size());
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
    for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> widths;
    std::vector<std::size_t> ids;
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (&p.tape() != &tape) throw ContractError("concat operands live on different tapes");
        Shape s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != first[i]) {
                throw ShapeError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(first));
            }
        }
        widths.push_back(s[ax] * inner);
        ids.push_back(p.id());
        total += s[ax];
    }
    Shape out_shape = first;
    out_shape[ax] = total;
    Tensor out(out_shape);
    const std::size_t row = total * inner;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data().begin() + o * widths[p], widths[p], out.data().begin() + o * row + offset);
        offset += widths[p];
    }
    return tape.record("concat", std::move(out), ids, [ids, widths, outer, row](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (t.requires_grad(ids[p])) {
                Tensor& gx = t.grad_slot(ids[p]);
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t j = 0; j < widths[p]; ++j) gx[o * widths[p] + j] += g[o * row + offset + j];
            }
            offset += widths[p];
        }
    });
}

Var concat_last(const std::vector<Var>& parts) { return concat(parts, -1); }

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    const std::size_t ax = norm_axis(axis, s.size());
    if (begin >= end || end > s[ax]) {
        throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range on axis " +
                         std::to_string(ax) + " of " + shape_str(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t in_row = s[ax] * inner, out_row = (end - begin) * inner, off = begin * inner;
    Shape out_shape = s;
    out_shape[ax] = end - begin;
    Tensor out(out_shape);
    const Tensor& v = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(v.data().begin() + o * in_row + off, out_row, out.data().begin() + o * out_row);
    const std::size_t ia = a.id();
    return a.tape().record("slice", std::move(out), {ia}, [ia, outer, in_row, out_row, off](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < out_row; ++j) gx[o * in_row + off + j] += g[o * out_row + j];
    });
}

Var sum(Var a) {
    const Tensor& v = a.value();
    const double total = std::accumulate(v.data().begin(), v.data().end(), 0.0);
    const std::size_t ia = a.id();
    return a.tape().record("sum", Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var mean(Var a) {
    const Tensor& v = a.value();
    if (v.empty()) throw ShapeError("mean of empty tensor");
    const double n = static_cast<double>(v.size());
    const double total = std::accumulate(v.data().begin(), v.data().end(), 0.0);
    const std::size_t ia = a.id();
    return a.tape().record("mean", Tensor::scalar(total / n), {ia}, [ia, n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / n;
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var exp(Var a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    for (double v : a.value().data()) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
    return unary(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
    return unary(
        "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var hard_sigmoid(Var a) {
    return unary(
        "hard_sigmoid", a,
        [](double x) {
            if (x <= -3.0) return 0.0;
            if (x >= 3.0) return 1.0;
            return x / 6.0 + 0.5;
        },
        [](double x, double) { return (x > -3.0 && x < 3.0) ? 1.0 / 6.0 : 0.0; });
}

Var softmax_last(Var a, const std::vector<std::uint8_t>* mask) {
    const Tensor& v = a.value();
    if (v.rank() < 1) throw ShapeError("softmax of a scalar");
    const std::size_t n = v.dim(-1), rows = v.size() / n;
    std::size_t block = 0;
    if (mask) {
        if (mask->empty() || mask->size() % n != 0) throw ShapeError("softmax mask width mismatch");
        block = mask->size() / n;
        if (rows % block != 0) throw ShapeError("softmax mask rows do not tile the input");
    }
    Tensor out(v.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = v.data().data() + r * n;
        double* y = out.data().data() + r * n;
        const std::uint8_t* m = mask ? mask->data() + (r % block) * n : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j)
            if (!m || m[j]) mx = std::max(mx, x[j]);
        if (!std::isfinite(mx)) throw ContractError("softmax row is fully masked");
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = (!m || m[j]) ? std::exp(x[j] - mx) : 0.0;
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    const std::size_t ia = a.id();
    return a.tape().record("softmax", std::move(out), {ia}, [ia, n, rows](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
    Tape& tape = same_tape(a, gain);
    same_tape(a, bias);
    const Tensor& v = a.value();
    const std::size_t d = v.dim(-1), rows = v.size() / d;
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    Tensor out(v.shape());
    Tensor xhat(v.shape());
    std::vector<double> inv(rows);
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = v.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        inv[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (x[j] - mu) * inv[r];
            out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
        }
    }
    const std::size_t ia = a.id(), ig = gain.id(), ib = bias.id();
    return tape.record("layer_norm", std::move(out), {ia, ig, ib},
                       [ia, ig, ib, d, rows, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad(self);
                           const Tensor& gv = t.value(ig);
                           if (t.requires_grad(ig)) {
                               Tensor& gg = t.grad_slot(ig);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                           }
                           if (t.requires_grad(ib)) {
                               Tensor& gb = t.grad_slot(ib);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                           }
                           if (t.requires_grad(ia)) {
                               Tensor& gx = t.grad_slot(ia);
                               const double dn = static_cast<double>(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double dxh = g[r * d + j] * gv[j];
                                       m1 += dxh;
                                       m2 += dxh * xhat[r * d + j];
                                   }
                                   m1 /= dn;
                                   m2 /= dn;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double dxh = g[r * d + j] * gv[j];
                                       gx[r * d + j] += inv[r] * (dxh - m1 - xhat[r * d + j] * m2);
                                   }
                               }
                           }
                       });
}

Var embedding(Var table, const std::vector<std::size_t>& rows, Shape out_leading) {
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_str(tv.shape()));
    if (shape_size(out_leading) != rows.size()) {
        throw ShapeError("embedding: " + std::to_string(rows.size()) + " indices do not fill " +
                         shape_str(out_leading));
    }
    const std::size_t vocab = tv.dim(0), d = tv.dim(1);
    Shape out_shape = std::move(out_leading);
    out_shape.push_back(d);
    Tensor out(out_shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= vocab) {
            throw ShapeError("embedding index " + std::to_string(rows[i]) + " out of range " + std::to_string(vocab));
        }
        std::copy_n(tv.data().begin() + rows[i] * d, d, out.data().begin() + i * d);
    }
    const std::size_t it = table.id();
    return table.tape().record("embedding", std::move(out), {it}, [it, rows, d](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gt = t.grad_slot(it);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += g[i * d + j];
    });
}

Var dropout(Var a, double rate) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
    Tape& tape = a.tape();
    if (!tape.training() || rate == 0.0) return a;
    const Tensor& v = a.value();
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(v.size());
    for (double& m : mask) m = keep(tape.rng()) ? scale : 0.0;
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * mask[i];
    const std::size_t ia = a.id();
    return tape.record("dropout", std::move(out), {ia}, [ia, mask = std::move(mask)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
}

}  // namespace ssdnet
