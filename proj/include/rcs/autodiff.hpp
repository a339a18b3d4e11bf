#pragma once

// Reverse-mode differentiation over a dynamic tape.
//
// A Tape owns every value produced during one forward pass. Primitives append
// a node holding the forward value and a closure that scatters the output
// adjoint into the input adjoints. Nodes are appended in evaluation order, so
// walking the tape backwards from the loss is a reverse topological order.
//
// Leaf gradients accumulate across backward() calls until zero_grad() or
// clear(). Intermediate adjoints are scratch and discarded after each call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rcs/error.hpp"
#include "rcs/tensor.hpp"

namespace rcs {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and is not cleared.
class Var {
public:
    Var() = default;

    Tape* tape() const { return tape_; }
    std::size_t index() const { return index_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

/// Adjoint storage for one backward sweep. Buffers are allocated on first touch.
class AdjointBuffer {
public:
    AdjointBuffer(const std::vector<std::size_t>& sizes) : sizes_(sizes), adjoints_(sizes.size()) {}

    std::span<double> at(std::size_t node) {
        auto& buf = adjoints_[node];
        if (buf.empty()) buf.assign(sizes_[node], 0.0);
        return buf;
    }

    bool touched(std::size_t node) const { return !adjoints_[node].empty(); }
    std::span<const double> view(std::size_t node) const { return adjoints_[node]; }

private:
    const std::vector<std::size_t>& sizes_;
    std::vector<std::vector<double>> adjoints_;
};

class Tape {
public:
    using BackwardFn = std::function<void(const Tape&, std::span<const double> out_adjoint, AdjointBuffer&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf whose gradient is tracked.
    Var leaf(Tensor value) { return push(std::move(value), true, true, {}); }

    /// Leaf treated as a constant; backward never writes to it.
    Var constant(Tensor value) { return push(std::move(value), false, true, {}); }

    const Tensor& value(Var v) const { return nodes_.at(v.index()).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.index()).requires_grad; }
    const Tensor& value_at(std::size_t node) const { return nodes_[node].value; }
    bool tracks(std::size_t node) const { return nodes_[node].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Accumulated gradient of a leaf (zeros when nothing reached it).
    Tensor grad(Var v) const {
        const auto& node = nodes_.at(v.index());
        const auto& g = leaf_grads_.at(v.index());
        if (g.empty()) return Tensor::zeros(node.value.shape());
        return Tensor(node.value.shape(), g);
    }

    /// Appends a primitive application. Used by the primitive implementations.
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
        bool needs = false;
        for (const Var& in : inputs) {
            if (in.tape() != this) throw Error("tape: operand recorded on a different tape");
            needs = needs || nodes_[in.index()].requires_grad;
        }
        return push(std::move(value), needs, false, needs ? std::move(backward) : BackwardFn{});
    }

    void backward(Var loss) {
        if (loss.tape() != this) throw Error("backward: loss recorded on a different tape");
        const Tensor& out = nodes_.at(loss.index()).value;
        if (out.size() != 1) throw ShapeError("backward: loss of shape " + shape_string(out.shape()) + " is not a scalar");
        if (!nodes_[loss.index()].requires_grad) return;

        AdjointBuffer adj(sizes_);
        adj.at(loss.index())[0] = 1.0;
        for (std::size_t i = loss.index() + 1; i-- > 0;) {
            if (!adj.touched(i)) continue;
            const Node& node = nodes_[i];
            if (node.is_leaf) {
                if (node.requires_grad) {
                    auto& acc = leaf_grads_[i];
                    if (acc.empty()) acc.assign(node.value.size(), 0.0);
                    auto g = adj.view(i);
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
                }
                continue;
            }
            if (node.backward) node.backward(*this, adj.view(i), adj);
        }
    }

    void zero_grad() {
        for (auto& g : leaf_grads_) g.clear();
    }

    void clear() {
        nodes_.clear();
        sizes_.clear();
        leaf_grads_.clear();
    }

private:
    struct Node {
        Tensor value;
        bool requires_grad;
        bool is_leaf;
        BackwardFn backward;
    };

    Var push(Tensor value, bool requires_grad, bool is_leaf, BackwardFn backward) {
        sizes_.push_back(value.size());
        nodes_.push_back(Node{std::move(value), requires_grad, is_leaf, std::move(backward)});
        leaf_grads_.emplace_back();
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::vector<std::size_t> sizes_;
    std::vector<std::vector<double>> leaf_grads_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }


// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline Tape& common_tape(Var a, Var b, const char* op) {
    if (a.tape() == nullptr || a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
    return *a.tape();
}

enum class Broadcast { same, row, scalar };

/// How `b` broadcasts against `a` in an elementwise binary op.
inline Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return Broadcast::same;
    if (b.size() <= 1 && shape_size(b) == 1) return Broadcast::scalar;
    const bool row_shape = b.size() == 1 || (b.size() == 2 && b[0] == 1);
    if (a.size() == 2 && row_shape && b.back() == a[1]) return Broadcast::row;
    shape_mismatch(op, a, b);
}

inline std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
    switch (kind) {
        case Broadcast::same: return i;
        case Broadcast::row: return i % cols;
        case Broadcast::scalar: return 0;
    }
    return 0;
}

/// out = f(x, y); d_out/dx = da(x, y); d_out/dy = db(x, y).
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
    Tape& tape = common_tape(a, b, op);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const Broadcast kind = broadcast_kind(x.shape(), y.shape(), op);
    const std::size_t cols = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[b_index(kind, i, cols)]);
    const std::size_t ia = a.index(), ib = b.index();
    return tape.record(Tensor(x.shape(), std::move(out)), {a, b},
                       [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                           const Tensor& xv = t.value_at(ia);
                           const Tensor& yv = t.value_at(ib);
                           if (t.tracks(ia)) {
                               auto gx = adj.at(ia);
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   gx[i] += g[i] * da(xv[i], yv[b_index(kind, i, cols)]);
                           }
                           if (t.tracks(ib)) {
                               auto gy = adj.at(ib);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   const std::size_t j = b_index(kind, i, cols);
                                   gy[j] += g[i] * db(xv[i], yv[j]);
                               }
                           }
                       });
}

/// out = f(x); d_out/dx = d(x, out).
template <class F, class D>
Var unary(Var a, F f, D d) {
    Tape& tape = *a.tape();
    const Tensor& x = a.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    const std::size_t ia = a.index();
    const std::size_t self = tape.size();
    return tape.record(Tensor(x.shape(), std::move(out)), {a},
                       [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                           const Tensor& xv = t.value_at(ia);
                           const Tensor& yv = t.value_at(self);
                           auto gx = adj.at(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xv[i], yv[i]);
                       });
}

inline void require_finite(const std::vector<double>& values, const char* op) {
    for (double v : values)
        if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite output");
}

}  // namespace detail

inline Var add(Var a, Var b) {
    return detail::binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

/// Elementwise product (Hadamard), with row/scalar broadcasting of `b`.
inline Var mul(Var a, Var b) {
    return detail::binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Var scale(Var a, double c) {
    return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
    return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Var a) {
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var a) {
    Var out = detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    if (!out.value().all_finite()) throw DomainError("exp: non-finite output");
    return out;
}

inline Var log(Var a) {
    for (double v : a.value().values())
        if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("log: input " + std::to_string(v) + " outside (0, inf)");
    return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// sign(0) = 0. Zero gradient everywhere.
inline Var sign(Var a) {
    return detail::unary(
        a, [](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }, [](double, double) { return 0.0; });
}

/// Clamps to [lo, hi]; gradient passes only strictly inside the interval.
inline Var clamp(Var a, double lo, double hi) {
    if (lo > hi) throw DomainError("clamp: empty interval");
    return detail::unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

inline Var matmul(Var a, Var b) {
    Tape& tape = detail::common_tape(a, b, "matmul");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0])
        detail::shape_mismatch("matmul", x.shape(), y.shape());
    const std::size_t m = x.shape()[0], k = x.shape()[1], n = y.shape()[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
        }
    const std::size_t ia = a.index(), ib = b.index();
    return tape.record(Tensor({m, n}, std::move(out)), {a, b},
                       [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                           const Tensor& xv = t.value_at(ia);
                           const Tensor& yv = t.value_at(ib);
                           if (t.tracks(ia)) {  // dA = G * B^T
                               auto gx = adj.at(ia);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       double s = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * yv[p * n + j];
                                       gx[i * k + p] += s;
                                   }
                           }
                           if (t.tracks(ib)) {  // dB = A^T * G
                               auto gy = adj.at(ib);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       const double xi = xv[i * k + p];
                                       for (std::size_t j = 0; j < n; ++j) gy[p * n + j] += xi * g[i * n + j];
                                   }
                           }
                       });
}

inline Var transpose(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_string(x.shape()));
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
    const std::size_t ia = a.index();
    return a.tape()->record(Tensor({n, m}, std::move(out)), {a},
                            [=](const Tape&, std::span<const double> g, AdjointBuffer& adj) {
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
                            });
}

/// Sum of all entries, as a scalar.
inline Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const std::size_t ia = a.index();
    return a.tape()->record(Tensor::scalar(s), {a}, [=](const Tape&, std::span<const double> g, AdjointBuffer& adj) {
        auto gx = adj.at(ia);
        for (double& v : gx) v += g[0];
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Sum along the last axis: (rows, cols) -> (rows).
inline Var sum_last(Var a) {
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
    const std::size_t ia = a.index();
    return a.tape()->record(Tensor::vector(std::move(out)), {a},
                            [=](const Tape&, std::span<const double> g, AdjointBuffer& adj) {
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
                            });
}

/// Rows scaled to unit Euclidean norm. Norms below 1e-12 are floored.
inline Var l2_normalize(Var a) {
    constexpr double floor = 1e-12;
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
        norms[i] = std::max(std::sqrt(s), floor);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
    }
    const std::size_t ia = a.index();
    const std::size_t self = a.tape()->size();
    return a.tape()->record(Tensor(x.shape(), std::move(out)), {a},
                            [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                                const Tensor& y = t.value_at(self);
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i) {
                                    if (norms[i] <= floor) {
                                        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] / floor;
                                        continue;
                                    }
                                    double yg = 0.0;
                                    for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                        gx[i * c + j] += (g[i * c + j] - y[i * c + j] * yg) / norms[i];
                                }
                            });
}

/// Softmax along the last axis.
inline Var softmax(Var a) {
    const Tensor& x = a.value();
    if (!x.all_finite()) throw DomainError("softmax: non-finite input");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) m = std::max(m, x[i * c + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(x[i * c + j] - m));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
    }
    detail::require_finite(out, "softmax");
    const std::size_t ia = a.index();
    const std::size_t self = a.tape()->size();
    return a.tape()->record(Tensor(x.shape(), std::move(out)), {a},
                            [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                                const Tensor& y = t.value_at(self);
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i) {
                                    double yg = 0.0;
                                    for (std::size_t j = 0; j < c; ++j) yg += y[i * c + j] * g[i * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - yg);
                                }
                            });
}

/// log(softmax(x)) along the last axis, computed stably.
inline Var log_softmax(Var a) {
    const Tensor& x = a.value();
    if (!x.all_finite()) throw DomainError("log_softmax: non-finite input");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) m = std::max(m, x[i * c + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(x[i * c + j] - m);
        const double lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] - lse;
    }
    detail::require_finite(out, "log_softmax");
    const std::size_t ia = a.index();
    const std::size_t self = a.tape()->size();
    return a.tape()->record(Tensor(x.shape(), std::move(out)), {a},
                            [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                                const Tensor& y = t.value_at(self);
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i) {
                                    double gs = 0.0;
                                    for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
                                    for (std::size_t j = 0; j < c; ++j)
                                        gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gs;
                                }
                            });
}

/// Row-wise log-sum-exp over entries where mask is nonzero: (rows, cols) -> (rows).
/// An empty mask is treated as all-ones. Every row must keep at least one entry.
inline Var logsumexp(Var a, const std::vector<char>& mask = {}) {
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    if (!mask.empty() && mask.size() != x.size())
        throw ShapeError("logsumexp: mask of " + std::to_string(mask.size()) + " entries for shape " + shape_string(x.shape()));
    auto keep = [&mask](std::size_t i) { return mask.empty() || mask[i] != 0; };
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (keep(i * c + j)) m = std::max(m, x[i * c + j]);
        if (!std::isfinite(m)) throw DomainError("logsumexp: row " + std::to_string(i) + " has no finite kept entry");
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            if (keep(i * c + j)) s += std::exp(x[i * c + j] - m);
        out[i] = m + std::log(s);
    }
    const std::size_t ia = a.index();
    const std::size_t self = a.tape()->size();
    return a.tape()->record(Tensor::vector(std::move(out)), {a},
                            [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                                const Tensor& xv = t.value_at(ia);
                                const Tensor& y = t.value_at(self);
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j)
                                        if (mask.empty() || mask[i * c + j])
                                            gx[i * c + j] += g[i] * std::exp(xv[i * c + j] - y[i]);
                            });
}

/// Stacks rank-2 tensors with equal column counts.
inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Tape& tape = *parts.front().tape();
    const std::size_t c = parts.front().value().cols();
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    std::size_t rows = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        if (v.rank() != 2 || v.cols() != c) detail::shape_mismatch("concat_rows", parts.front().shape(), v.shape());
        offsets.push_back(out.size());
        out.insert(out.end(), v.values().begin(), v.values().end());
        rows += v.shape()[0];
    }
    std::vector<std::size_t> indices;
    for (const Var& p : parts) indices.push_back(p.index());
    return tape.record(Tensor({rows, c}, std::move(out)), parts,
                       [=](const Tape& t, std::span<const double> g, AdjointBuffer& adj) {
                           for (std::size_t k = 0; k < indices.size(); ++k) {
                               if (!t.tracks(indices[k])) continue;
                               auto gx = adj.at(indices[k]);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offsets[k] + i];
                           }
                       });
}

/// Rows [begin, end) of a rank-2 tensor.
inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& x = a.value();
    if (x.rank() != 2 || begin > end || end > x.shape()[0])
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") for shape " +
                         shape_string(x.shape()));
    const std::size_t c = x.cols();
    const std::size_t ia = a.index();
    return a.tape()->record(x.rows_slice(begin, end), {a},
                            [=](const Tape&, std::span<const double> g, AdjointBuffer& adj) {
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
                            });
}

/// out[i] = x[i, index[i]]: (rows, cols) -> (rows).
inline Var pick(Var a, const std::vector<std::size_t>& index) {
    const Tensor& x = a.value();
    const std::size_t r = x.rows(), c = x.cols();
    if (index.size() != r) throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + std::to_string(r) + " rows");
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (index[i] >= c) throw ShapeError("pick: column " + std::to_string(index[i]) + " out of range");
        out[i] = x[i * c + index[i]];
    }
    const std::size_t ia = a.index();
    return a.tape()->record(Tensor::vector(std::move(out)), {a},
                            [=](const Tape&, std::span<const double> g, AdjointBuffer& adj) {
                                auto gx = adj.at(ia);
                                for (std::size_t i = 0; i < r; ++i) gx[i * c + index[i]] += g[i];
                            });
}

/// Pairwise cosine similarities between the rows of a and the rows of b.
inline Var cosine_similarity(Var a, Var b) { return matmul(l2_normalize(a), transpose(l2_normalize(b))); }

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function.
template <class F>
Tensor finite_difference_gradient(F&& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw DomainError("finite_difference_gradient: step must be positive");
    Tensor probe = x;
    Tensor grad = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(static_cast<const Tensor&>(probe));
        probe[i] = orig - h;
        const double fm = f(static_cast<const Tensor&>(probe));
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw DomainError("finite_difference_gradient: non-finite evaluation at coordinate " + std::to_string(i));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
    if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(diff) / std::max({l2_norm(a), l2_norm(b), floor});
}

}  // namespace rcs
