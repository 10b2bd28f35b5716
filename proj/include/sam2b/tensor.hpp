#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sam2b/core.hpp"

namespace sam2b::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor: dense row-major 64-bit real array. Gradients accumulate into `grad`
// across backward passes until zero_grad() — callers running multiple steps
// must zero between them.
// ---------------------------------------------------------------------------

struct Tensor {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily on first backward accumulation

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (numel(shape) != values.size())
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
    }

    static Tensor zeros(Shape s) {
        std::vector<double> v(numel(s), 0.0);
        return Tensor(std::move(s), std::move(v));
    }

    static Tensor full(Shape s, double x) {
        std::vector<double> v(numel(s), x);
        return Tensor(std::move(s), std::move(v));
    }

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    void zero_grad() { grad.assign(values.size(), 0.0); }

    bool finite() const {
        return std::all_of(values.begin(), values.end(),
                           [](double x) { return std::isfinite(x); });
    }
};

// ---------------------------------------------------------------------------
// Tape: dynamic reverse-mode graph, rebuilt per forward pass. Nodes are
// appended in execution order, which is by construction a topological order;
// backward() sweeps the node list once in reverse. A Tape and its Vars are
// confined to one thread; independent tapes may run concurrently.
// ---------------------------------------------------------------------------

class Tape;

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;                 // allocated during backward
        std::function<void(Tape&, std::size_t)> back;  // empty for leaves/constants
        Tensor* external = nullptr;               // leaf binding
        bool needs_grad = false;
    };

public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }

    // -- graph inputs --------------------------------------------------------

    /// Registers an external tensor as a leaf. Its current values are copied
    /// in; after backward(), gradients accumulate into t.grad when
    /// t.requires_grad is set.
    Var leaf(Tensor& t) {
        Node n;
        n.shape = t.shape;
        n.val = t.values;
        n.external = &t;
        n.needs_grad = t.requires_grad;
        return push(std::move(n));
    }

    Var constant(Tensor t) {
        Node n;
        n.shape = std::move(t.shape);
        n.val = std::move(t.values);
        return push(std::move(n));
    }

    Var constant(Shape s, std::vector<double> v) { return constant(Tensor(std::move(s), std::move(v))); }

    Var scalar(double x) { return constant(Shape{1}, {x}); }

    // -- node access ---------------------------------------------------------

    const Shape& shape(Var v) const { return nodes_[v.id].shape; }
    const std::vector<double>& val(Var v) const { return nodes_[v.id].val; }
    const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
    double item(Var v) const {
        if (nodes_[v.id].val.size() != 1)
            throw DimensionError("item: tensor " + shape_str(nodes_[v.id].shape) + " is not scalar");
        return nodes_[v.id].val[0];
    }

    // -- operations ----------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        auto [m, k] = as_matrix(na.shape);
        auto [k2, n] = as_matrix(nb.shape);
        if (k != k2)
            throw DimensionError("matmul: inner dimensions disagree, " + shape_str(na.shape) +
                                 " vs " + shape_str(nb.shape));
        Node out;
        out.shape = {m, n};
        out.val.assign(m * n, 0.0);
        mat_mul_acc(na.val.data(), nb.val.data(), out.val.data(), m, k, n, false, false);
        out.needs_grad = na.needs_grad || nb.needs_grad;
        if (out.needs_grad) {
            out.back = [a, b, m, k, n](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                Node& na2 = tp.nodes_[a.id];
                Node& nb2 = tp.nodes_[b.id];
                // a.grad += g * b^T ; b.grad += a^T * g
                if (na2.needs_grad)
                    mat_mul_acc(g.data(), nb2.val.data(), na2.grad.data(), m, n, k, false, true);
                if (nb2.needs_grad)
                    mat_mul_acc(na2.val.data(), g.data(), nb2.grad.data(), k, m, n, true, false);
            };
        }
        return push(std::move(out));
    }

    Var transpose(Var x) {
        const Node& nx = node(x);
        auto [m, n] = as_matrix(nx.shape);
        Node out;
        out.shape = {n, m};
        out.val.resize(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.val[j * m + i] = nx.val[i * n + j];
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, m, n](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
            };
        }
        return push(std::move(out));
    }

    Var add(Var a, Var b) { return binary(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0); }
    Var sub(Var a, Var b) { return binary(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0); }

    Var mul(Var a, Var b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        require_same_shape(na.shape, nb.shape, "mul");
        Node out;
        out.shape = na.shape;
        out.val.resize(na.val.size());
        for (std::size_t i = 0; i < out.val.size(); ++i) out.val[i] = na.val[i] * nb.val[i];
        out.needs_grad = na.needs_grad || nb.needs_grad;
        if (out.needs_grad) {
            out.back = [a, b](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                Node& na2 = tp.nodes_[a.id];
                Node& nb2 = tp.nodes_[b.id];
                if (na2.needs_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) na2.grad[i] += g[i] * nb2.val[i];
                if (nb2.needs_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) nb2.grad[i] += g[i] * na2.val[i];
            };
        }
        return push(std::move(out));
    }

    /// Multiply by a compile-time-known scalar constant.
    Var scale(Var x, double c) {
        return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
    }

    /// Multiply a tensor by a 1-element tensor (the scalar-broadcast case of
    /// elementwise mul); differentiable in both operands.
    Var scale_by(Var x, Var s) {
        const Node& nx = node(x);
        const Node& ns = node(s);
        if (ns.val.size() != 1)
            throw DimensionError("scale_by: scalar operand has shape " + shape_str(ns.shape));
        Node out;
        out.shape = nx.shape;
        out.val.resize(nx.val.size());
        const double sv = ns.val[0];
        for (std::size_t i = 0; i < out.val.size(); ++i) out.val[i] = nx.val[i] * sv;
        out.needs_grad = nx.needs_grad || ns.needs_grad;
        if (out.needs_grad) {
            out.back = [x, s](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                Node& nx2 = tp.nodes_[x.id];
                Node& ns2 = tp.nodes_[s.id];
                if (nx2.needs_grad) {
                    const double sv2 = ns2.val[0];
                    for (std::size_t i = 0; i < g.size(); ++i) nx2.grad[i] += g[i] * sv2;
                }
                if (ns2.needs_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * nx2.val[i];
                    ns2.grad[0] += acc;
                }
            };
        }
        return push(std::move(out));
    }

    /// Repeat a 1-element tensor into the given shape.
    Var broadcast_scalar(Var s, Shape shape) {
        const Node& ns = node(s);
        if (ns.val.size() != 1)
            throw DimensionError("broadcast_scalar: operand has shape " + shape_str(ns.shape));
        Node out;
        out.shape = std::move(shape);
        out.val.assign(numel(out.shape), ns.val[0]);
        out.needs_grad = ns.needs_grad;
        if (out.needs_grad) {
            out.back = [s](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                double acc = 0.0;
                for (double gi : g) acc += gi;
                tp.nodes_[s.id].grad[0] += acc;
            };
        }
        return push(std::move(out));
    }

    /// x[m x n] + row-broadcast bias[n].
    Var add_row_bias(Var x, Var b) {
        const Node& nx = node(x);
        const Node& nb = node(b);
        auto [m, n] = as_matrix(nx.shape);
        if (nb.val.size() != n)
            throw DimensionError("add_row_bias: bias " + shape_str(nb.shape) + " vs matrix " +
                                 shape_str(nx.shape));
        Node out;
        out.shape = nx.shape;
        out.val.resize(nx.val.size());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.val[i * n + j] = nx.val[i * n + j] + nb.val[j];
        out.needs_grad = nx.needs_grad || nb.needs_grad;
        if (out.needs_grad) {
            out.back = [x, b, m, n](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                Node& nx2 = tp.nodes_[x.id];
                Node& nb2 = tp.nodes_[b.id];
                if (nx2.needs_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) nx2.grad[i] += g[i];
                if (nb2.needs_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) nb2.grad[j] += g[i * n + j];
            };
        }
        return push(std::move(out));
    }

    /// relu with subgradient 0 at exactly 0.
    Var relu(Var x) {
        return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    }

    Var sigmoid(Var x) {
        return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                     [](double, double y) { return y * (1.0 - y); });
    }

    Var sqrt_op(Var x) {
        return unary(x, [](double v) { return std::sqrt(v); },
                     [](double, double y) { return 0.5 / y; });
    }

    Var reciprocal(Var x) {
        return unary(x, [](double v) { return 1.0 / v; },
                     [](double, double y) { return -y * y; });
    }

    /// Full reduction to a scalar.
    Var sum(Var x) {
        const Node& nx = node(x);
        Node out;
        out.shape = {1};
        out.val = {std::accumulate(nx.val.begin(), nx.val.end(), 0.0)};
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x](Tape& tp, std::size_t self) {
                const double g = tp.nodes_[self].grad[0];
                auto& gx = tp.nodes_[x.id].grad;
                for (double& gi : gx) gi += g;
            };
        }
        return push(std::move(out));
    }

    /// Numerically stable softmax over the last dimension (max subtraction).
    /// Backward is the exact softmax Jacobian-vector product.
    Var row_softmax(Var x) {
        const Node& nx = node(x);
        auto [m, n] = as_matrix(nx.shape);
        Node out;
        out.shape = nx.shape;
        out.val.resize(nx.val.size());
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = nx.val.data() + i * n;
            double* orow = out.val.data() + i * n;
            double mx = row[0];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) z += (orow[j] = std::exp(row[j] - mx));
            for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
        }
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, m, n](Tape& tp, std::size_t self) {
                const Node& no = tp.nodes_[self];
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < m; ++i) {
                    const double* y = no.val.data() + i * n;
                    const double* g = no.grad.data() + i * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
                }
            };
        }
        return push(std::move(out));
    }

    /// Row-wise projection onto the unit sphere. Rows with norm below eps map
    /// to zero rows and receive zero gradient.
    Var l2_normalize_rows(Var x, double eps = 1e-12) {
        const Node& nx = node(x);
        auto [m, n] = as_matrix(nx.shape);
        Node out;
        out.shape = nx.shape;
        out.val.resize(nx.val.size());
        std::vector<double> norms(m);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = nx.val.data() + i * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += row[j] * row[j];
            const double r = std::sqrt(s);
            norms[i] = r;
            double* orow = out.val.data() + i * n;
            if (r < eps) {
                std::fill(orow, orow + n, 0.0);
            } else {
                for (std::size_t j = 0; j < n; ++j) orow[j] = row[j] / r;
            }
        }
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, m, n, eps, norms = std::move(norms)](Tape& tp, std::size_t self) {
                const Node& no = tp.nodes_[self];
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < m; ++i) {
                    const double r = norms[i];
                    if (r < eps) continue;
                    const double* y = no.val.data() + i * n;
                    const double* g = no.grad.data() + i * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += (g[j] - y[j] * dot) / r;
                }
            };
        }
        return push(std::move(out));
    }

    /// Mean over the batch of -log softmax(logits)[label]; fused log-softmax
    /// for stability.
    Var log_softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
        const Node& nx = node(logits);
        auto [b, q] = as_matrix(nx.shape);
        if (labels.size() != b)
            throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                                 " labels for batch of " + std::to_string(b));
        for (std::size_t i = 0; i < b; ++i)
            if (labels[i] >= q)
                throw IndexError("cross_entropy: label " + std::to_string(labels[i]) +
                                 " out of range [0, " + std::to_string(q) + ")");
        Node out;
        out.shape = {1};
        std::vector<double> probs(b * q);
        double loss = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double* row = nx.val.data() + i * q;
            double mx = row[0];
            for (std::size_t j = 1; j < q; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < q; ++j) z += std::exp(row[j] - mx);
            const double logz = std::log(z) + mx;
            loss += logz - row[labels[i]];
            for (std::size_t j = 0; j < q; ++j) probs[i * q + j] = std::exp(row[j] - logz);
        }
        out.val = {loss / static_cast<double>(b)};
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [logits, b, q, probs = std::move(probs),
                        labels = std::vector<std::size_t>(labels.begin(), labels.end())](
                           Tape& tp, std::size_t self) {
                const double g = tp.nodes_[self].grad[0] / static_cast<double>(b);
                auto& gx = tp.nodes_[logits.id].grad;
                for (std::size_t i = 0; i < b; ++i) {
                    for (std::size_t j = 0; j < q; ++j) gx[i * q + j] += g * probs[i * q + j];
                    gx[i * q + labels[i]] -= g;
                }
            };
        }
        return push(std::move(out));
    }

    Var slice_rows(Var x, std::size_t r0, std::size_t nrows) {
        const Node& nx = node(x);
        auto [m, n] = as_matrix(nx.shape);
        if (r0 + nrows > m)
            throw DimensionError("slice_rows: [" + std::to_string(r0) + ", " +
                                 std::to_string(r0 + nrows) + ") out of " + std::to_string(m));
        Node out;
        out.shape = {nrows, n};
        out.val.assign(nx.val.begin() + r0 * n, nx.val.begin() + (r0 + nrows) * n);
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, r0, n, nrows](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < nrows * n; ++i) gx[r0 * n + i] += g[i];
            };
        }
        return push(std::move(out));
    }

    Var slice_cols(Var x, std::size_t c0, std::size_t ncols) {
        const Node& nx = node(x);
        auto [m, n] = as_matrix(nx.shape);
        if (c0 + ncols > n)
            throw DimensionError("slice_cols: [" + std::to_string(c0) + ", " +
                                 std::to_string(c0 + ncols) + ") out of " + std::to_string(n));
        Node out;
        out.shape = {m, ncols};
        out.val.resize(m * ncols);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < ncols; ++j) out.val[i * ncols + j] = nx.val[i * n + c0 + j];
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, c0, m, n, ncols](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < ncols; ++j) gx[i * n + c0 + j] += g[i * ncols + j];
            };
        }
        return push(std::move(out));
    }

    Var concat_rows(std::span<const Var> parts) {
        if (parts.empty()) throw DimensionError("concat_rows: no operands");
        const std::size_t n = as_matrix(node(parts[0]).shape).second;
        Node out;
        std::size_t m = 0;
        bool needs = false;
        for (Var p : parts) {
            auto [pm, pn] = as_matrix(node(p).shape);
            if (pn != n)
                throw DimensionError("concat_rows: column mismatch " + shape_str(node(p).shape));
            m += pm;
            needs = needs || node(p).needs_grad;
            out.val.insert(out.val.end(), node(p).val.begin(), node(p).val.end());
        }
        out.shape = {m, n};
        out.needs_grad = needs;
        if (needs) {
            out.back = [parts = std::vector<Var>(parts.begin(), parts.end()), n](
                           Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                std::size_t off = 0;
                for (Var p : parts) {
                    Node& np = tp.nodes_[p.id];
                    const std::size_t cnt = np.val.size();
                    if (np.needs_grad)
                        for (std::size_t i = 0; i < cnt; ++i) np.grad[i] += g[off + i];
                    off += cnt;
                }
                (void)n;
            };
        }
        return push(std::move(out));
    }

    Var concat_cols(std::span<const Var> parts) {
        if (parts.empty()) throw DimensionError("concat_cols: no operands");
        const std::size_t m = as_matrix(node(parts[0]).shape).first;
        std::size_t n = 0;
        bool needs = false;
        for (Var p : parts) {
            auto [pm, pn] = as_matrix(node(p).shape);
            if (pm != m)
                throw DimensionError("concat_cols: row mismatch " + shape_str(node(p).shape));
            n += pn;
            needs = needs || node(p).needs_grad;
        }
        Node out;
        out.shape = {m, n};
        out.val.resize(m * n);
        std::size_t coff = 0;
        for (Var p : parts) {
            auto [pm, pn] = as_matrix(node(p).shape);
            for (std::size_t i = 0; i < pm; ++i)
                for (std::size_t j = 0; j < pn; ++j)
                    out.val[i * n + coff + j] = node(p).val[i * pn + j];
            coff += pn;
        }
        out.needs_grad = needs;
        if (needs) {
            out.back = [parts = std::vector<Var>(parts.begin(), parts.end()), m, n](
                           Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                std::size_t off = 0;
                for (Var p : parts) {
                    Node& np = tp.nodes_[p.id];
                    const std::size_t pn = np.val.size() / m;
                    if (np.needs_grad)
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < pn; ++j)
                                np.grad[i * pn + j] += g[i * n + off + j];
                    off += pn;
                }
            };
        }
        return push(std::move(out));
    }

    /// out[i] = x.flat[indices[i]]; backward scatter-adds. Used to lower
    /// convolution to matmul via patch extraction.
    Var gather(Var x, std::vector<std::size_t> indices, Shape out_shape) {
        const Node& nx = node(x);
        if (numel(out_shape) != indices.size())
            throw DimensionError("gather: " + std::to_string(indices.size()) +
                                 " indices vs output " + shape_str(out_shape));
        Node out;
        out.shape = std::move(out_shape);
        out.val.resize(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= nx.val.size())
                throw IndexError("gather: index " + std::to_string(indices[i]) + " out of " +
                                 std::to_string(nx.val.size()));
            out.val[i] = nx.val[indices[i]];
        }
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, indices = std::move(indices)](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += g[i];
            };
        }
        return push(std::move(out));
    }

    /// Same flat data, new shape.
    Var reshape(Var x, Shape s) {
        const Node& nx = node(x);
        if (numel(s) != nx.val.size())
            throw DimensionError("reshape: " + shape_str(nx.shape) + " to " + shape_str(s));
        Node out;
        out.shape = std::move(s);
        out.val = nx.val;
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                auto& gx = tp.nodes_[x.id].grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            };
        }
        return push(std::move(out));
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar output. Each recorded operation is visited
    /// exactly once; leaf gradients are then flushed into their external
    /// tensors' grad buffers (accumulating — callers zero_grad between steps).
    void backward(Var output) {
        Node& no = nodes_[output.id];
        if (no.val.size() != 1)
            throw DimensionError("backward: output " + shape_str(no.shape) + " is not scalar");
        for (std::size_t i = 0; i <= output.id; ++i) {
            Node& n = nodes_[i];
            if (n.needs_grad) n.grad.assign(n.val.size(), 0.0);
        }
        if (!no.needs_grad) return;  // nothing differentiable upstream
        no.grad[0] = 1.0;
        for (std::size_t i = output.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back) n.back(*this, i);
        }
        for (std::size_t i = 0; i <= output.id; ++i) {
            Node& n = nodes_[i];
            if (n.external && n.external->requires_grad) {
                Tensor& t = *n.external;
                if (t.grad.size() != t.values.size()) t.grad.assign(t.values.size(), 0.0);
                for (std::size_t j = 0; j < n.grad.size(); ++j) t.grad[j] += n.grad[j];
            }
        }
    }

private:
    friend struct Var;

    Node& node(Var v) { return nodes_[v.id]; }
    const Node& node(Var v) const { return nodes_[v.id]; }

    Var push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    static std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
        if (s.size() == 1) return {std::size_t{1}, s[0]};
        if (s.size() == 2) return {s[0], s[1]};
        throw DimensionError("expected rank 1 or 2, got " + shape_str(s));
    }

    static void require_same_shape(const Shape& a, const Shape& b, const char* op) {
        if (a != b)
            throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                 shape_str(b));
    }

    // C[m x n] (+)= op(A, B) with optional logical transposes of A [m x k] and
    // B [k x n]. Always accumulates.
    static void mat_mul_acc(const double* A, const double* B, double* C, std::size_t m,
                            std::size_t k, std::size_t n, bool ta, bool tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = ta ? A[p * m + i] : A[i * k + p];
                if (a == 0.0) continue;
                if (!tb) {
                    const double* brow = B + p * n;
                    for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
                } else {
                    for (std::size_t j = 0; j < n; ++j) crow[j] += a * B[j * k + p];
                }
            }
        }
    }

    template <typename F, typename DF>
    Var unary(Var x, F f, DF df) {
        const Node& nx = node(x);
        Node out;
        out.shape = nx.shape;
        out.val.resize(nx.val.size());
        for (std::size_t i = 0; i < out.val.size(); ++i) out.val[i] = f(nx.val[i]);
        out.needs_grad = nx.needs_grad;
        if (out.needs_grad) {
            out.back = [x, df](Tape& tp, std::size_t self) {
                const Node& no = tp.nodes_[self];
                Node& nx2 = tp.nodes_[x.id];
                for (std::size_t i = 0; i < no.grad.size(); ++i)
                    nx2.grad[i] += no.grad[i] * df(nx2.val[i], no.val[i]);
            };
        }
        return push(std::move(out));
    }

    template <typename F>
    Var binary(Var a, Var b, const char* name, F f, double da, double db) {
        const Node& na = node(a);
        const Node& nb = node(b);
        require_same_shape(na.shape, nb.shape, name);
        Node out;
        out.shape = na.shape;
        out.val.resize(na.val.size());
        for (std::size_t i = 0; i < out.val.size(); ++i) out.val[i] = f(na.val[i], nb.val[i]);
        out.needs_grad = na.needs_grad || nb.needs_grad;
        if (out.needs_grad) {
            out.back = [a, b, da, db](Tape& tp, std::size_t self) {
                const auto& g = tp.nodes_[self].grad;
                Node& na2 = tp.nodes_[a.id];
                Node& nb2 = tp.nodes_[b.id];
                if (na2.needs_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) na2.grad[i] += da * g[i];
                if (nb2.needs_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) nb2.grad[i] += db * g[i];
            };
        }
        return push(std::move(out));
    }

    std::deque<Node> nodes_;
};

}  // namespace sam2b::ad
