#pragma once

// Dense float32 tensor with reverse-mode autodiff. Every operation that
// produces a tensor records its parents and a gradient rule on the node;
// backward() replays the recorded graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "sdmamba/common.hpp"

namespace sdmamba {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("nonpositive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
        bool backward_done = false;
        std::vector<std::shared_ptr<Node>> parents;
        // Reads this->grad, accumulates into parents' grad buffers.
        std::function<void(Node&)> backprop;

        void ensure_grad() {
            if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.node_->data.begin(), t.node_->data.end(), value);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    const std::vector<float>& data() const { return node_->data; }
    std::vector<float>& mutable_data() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    const std::vector<float>& grad() const {
        if (!has_grad()) throw ContractError("gradient not populated; run backward() first");
        return node_->grad;
    }
    std::vector<float>& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0f); }

    float item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    float operator()(int i) const { return node_->data[static_cast<size_t>(i)]; }
    float operator()(int i, int j) const {
        return node_->data[static_cast<size_t>(i) * dim(1) + j];
    }

    // Value copy with no graph attachment.
    Tensor detach() const {
        return from_data(node_->shape, node_->data, false);
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Graph construction helper for operations defined outside the class.
    static Tensor make(Shape shape, std::vector<float> data,
                       std::vector<Tensor> parents,
                       std::function<void(Node&)> backprop) {
        Tensor t = from_data(std::move(shape), std::move(data));
        bool rg = false;
        for (const auto& p : parents) {
            rg = rg || p.requires_grad();
            t.node_->parents.push_back(p.node_);
        }
        t.node_->requires_grad = rg;
        if (rg) t.node_->backprop = std::move(backprop);
        return t;
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

inline void accumulate(std::vector<float>& dst, const std::vector<float>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<float> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](Tensor::Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            detail::accumulate(p->grad, n.grad);
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<float> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](Tensor::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            detail::accumulate(pa->grad, n.grad);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<float> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
    macs::add(out.size());
    return Tensor::make(a.shape(), std::move(out), {a, b}, [](Tensor::Node& n) {
        auto& pa = n.parents[0];
        auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, float s) {
    std::vector<float> out(a.data());
    for (auto& v : out) v *= s;
    return Tensor::make(a.shape(), std::move(out), {a}, [s](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * s;
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

template <typename Fwd, typename Dfn>
inline Tensor unary_op(const Tensor& a, Fwd f, Dfn df) {
    std::vector<float> out(a.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
    return Tensor::make(a.shape(), std::move(out), {a}, [df](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            p->grad[i] += n.grad[i] * df(p->data[i], n.data[i]);
    });
}

inline Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::exp(x); },
        [](float, float y) { return y; });
}

inline Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
        [](float, float y) { return y * (1.0f - y); });
}

inline Tensor silu(const Tensor& a) {
    return unary_op(
        a,
        [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x, float) {
            float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

inline Tensor softplus(const Tensor& a) {
    return unary_op(
        a,
        [](float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); },
        [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
inline Tensor gelu(const Tensor& a) {
    constexpr float kC = 0.7978845608028654f; // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    return unary_op(
        a,
        [](float x) {
            float u = kC * (x + kA * x * x * x);
            return 0.5f * x * (1.0f + std::tanh(u));
        },
        [](float x, float) {
            float u = kC * (x + kA * x * x * x);
            float t = std::tanh(u);
            float du = kC * (1.0f + 3.0f * kA * x * x);
            return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    return Tensor::make({1}, {static_cast<float>(acc)}, {a}, [](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        float g = n.grad[0];
        for (auto& v : p->grad) v += g;
    });
}

inline Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    float inv = 1.0f / static_cast<float>(a.numel());
    return Tensor::make({1}, {static_cast<float>(acc / static_cast<double>(a.numel()))}, {a},
                        [inv](Tensor::Node& n) {
                            auto& p = n.parents[0];
                            p->ensure_grad();
                            float g = n.grad[0] * inv;
                            for (auto& v : p->grad) v += g;
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    return Tensor::make(std::move(shape), a.data(), {a}, [](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        detail::accumulate(p->grad, n.grad);
    });
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d expects rank-2, got " + shape_str(a.shape()));
    int r = a.dim(0), c = a.dim(1);
    std::vector<float> out(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(j) * r + i] = a.data()[static_cast<size_t>(i) * c + j];
    return Tensor::make({c, r}, std::move(out), {a}, [r, c](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                p->grad[static_cast<size_t>(i) * c + j] +=
                    n.grad[static_cast<size_t>(j) * r + i];
    });
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.rank() != 2) throw ShapeError("slice_cols expects rank-2, got " + shape_str(a.shape()));
    int r = a.dim(0), c = a.dim(1);
    if (start < 0 || len <= 0 || start + len > c)
        throw IndexError("slice_cols [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " +
                         std::to_string(c) + " columns");
    std::vector<float> out(static_cast<size_t>(r) * len);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
            out[static_cast<size_t>(i) * len + j] =
                a.data()[static_cast<size_t>(i) * c + start + j];
    return Tensor::make({r, len}, std::move(out), {a}, [r, c, start, len](Tensor::Node& n) {
        auto& p = n.parents[0];
        p->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                p->grad[static_cast<size_t>(i) * c + start + j] +=
                    n.grad[static_cast<size_t>(i) * len + j];
    });
}

// ---------------------------------------------------------------------------
// Row gather / scatter (hard index selection; indices are not differentiated)
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("gather_rows expects rank-2, got " + shape_str(a.shape()));
    int r = a.dim(0), c = a.dim(1);
    for (int i : idx)
        if (i < 0 || i >= r)
            throw IndexError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                             std::to_string(r) + ")");
    std::vector<float> out(idx.size() * static_cast<size_t>(c));
    for (size_t k = 0; k < idx.size(); ++k)
        std::copy_n(a.data().begin() + static_cast<size_t>(idx[k]) * c, c,
                    out.begin() + k * static_cast<size_t>(c));
    return Tensor::make({static_cast<int>(idx.size()), c}, std::move(out), {a},
                        [idx, c](Tensor::Node& n) {
                            auto& p = n.parents[0];
                            p->ensure_grad();
                            for (size_t k = 0; k < idx.size(); ++k)
                                for (int j = 0; j < c; ++j)
                                    p->grad[static_cast<size_t>(idx[k]) * c + j] +=
                                        n.grad[k * static_cast<size_t>(c) + j];
                        });
}

// Writes `rows` into `base` at the given row indices (overwriting), keeping
// the remaining rows of `base`. Adjoint of gather_rows on the written rows.
inline Tensor scatter_rows(const Tensor& base, const std::vector<int>& idx, const Tensor& rows) {
    if (base.rank() != 2 || rows.rank() != 2)
        throw ShapeError("scatter_rows expects rank-2 operands");
    int r = base.dim(0), c = base.dim(1);
    if (rows.dim(1) != c)
        throw ShapeError("scatter_rows: row width " + std::to_string(rows.dim(1)) +
                         " != base width " + std::to_string(c));
    if (static_cast<size_t>(rows.dim(0)) != idx.size())
        throw ShapeError("scatter_rows: index count does not match row count");
    for (int i : idx)
        if (i < 0 || i >= r)
            throw IndexError("scatter_rows: index " + std::to_string(i) + " out of range [0," +
                             std::to_string(r) + ")");
    std::vector<float> out(base.data());
    std::vector<char> written(static_cast<size_t>(r), 0);
    for (size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(rows.data().begin() + k * static_cast<size_t>(c), c,
                    out.begin() + static_cast<size_t>(idx[k]) * c);
        written[static_cast<size_t>(idx[k])] = 1;
    }
    return Tensor::make({r, c}, std::move(out), {base, rows},
                        [idx, c, written](Tensor::Node& n) {
                            auto& pb = n.parents[0];
                            auto& pr = n.parents[1];
                            if (pb->requires_grad) {
                                pb->ensure_grad();
                                int r0 = n.shape[0];
                                for (int i = 0; i < r0; ++i) {
                                    if (written[static_cast<size_t>(i)]) continue;
                                    for (int j = 0; j < c; ++j)
                                        pb->grad[static_cast<size_t>(i) * c + j] +=
                                            n.grad[static_cast<size_t>(i) * c + j];
                                }
                            }
                            if (pr->requires_grad) {
                                pr->ensure_grad();
                                for (size_t k = 0; k < idx.size(); ++k)
                                    for (int j = 0; j < c; ++j)
                                        pr->grad[k * static_cast<size_t>(c) + j] +=
                                            n.grad[static_cast<size_t>(idx[k]) * c + j];
                            }
                        });
}

// Stack rank-2 tensors with equal column counts along the row axis.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
    int c = parts.front().dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != c)
            throw ShapeError("concat_rows: incompatible part " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    std::vector<float> out;
    out.reserve(static_cast<size_t>(rows) * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<int> part_rows;
    for (const auto& p : parts) part_rows.push_back(p.dim(0));
    return Tensor::make({rows, c}, std::move(out), parts, [part_rows, c](Tensor::Node& n) {
        size_t off = 0;
        for (size_t k = 0; k < n.parents.size(); ++k) {
            auto& p = n.parents[k];
            size_t count = static_cast<size_t>(part_rows[k]) * c;
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < count; ++i) p->grad[i] += n.grad[off + i];
            }
            off += count;
        }
    });
}

// Stable ascending argsort; ties keep original relative order.
inline std::vector<int> argsort(const std::vector<float>& values) {
    std::vector<int> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return values[static_cast<size_t>(a)] < values[static_cast<size_t>(b)];
    });
    return idx;
}

inline std::vector<int> argsort(const Tensor& t) { return argsort(t.data()); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::vector<float> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += static_cast<double>(a.data()[static_cast<size_t>(i) * k + p]) *
                       b.data()[static_cast<size_t>(p) * n + j];
            out[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    }
    macs::add(static_cast<std::uint64_t>(m) * k * n);
    return Tensor::make({m, n}, std::move(out), {a, b}, [m, k, n](Tensor::Node& nd) {
        auto& pa = nd.parents[0];
        auto& pb = nd.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j)
                        acc += static_cast<double>(nd.grad[static_cast<size_t>(i) * n + j]) *
                               pb->data[static_cast<size_t>(p) * n + j];
                    pa->grad[static_cast<size_t>(i) * k + p] += static_cast<float>(acc);
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += static_cast<double>(pa->data[static_cast<size_t>(i) * k + p]) *
                               nd.grad[static_cast<size_t>(i) * n + j];
                    pb->grad[static_cast<size_t>(p) * n + j] += static_cast<float>(acc);
                }
        }
    });
}

// m[i][j] + v[j]; the usual bias add for row-major token matrices.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || v.dim(0) != m.dim(1))
        throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
    int r = m.dim(0), c = m.dim(1);
    std::vector<float> out(m.data());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += v.data()[static_cast<size_t>(j)];
    return Tensor::make({r, c}, std::move(out), {m, v}, [r, c](Tensor::Node& n) {
        auto& pm = n.parents[0];
        auto& pv = n.parents[1];
        if (pm->requires_grad) {
            pm->ensure_grad();
            detail::accumulate(pm->grad, n.grad);
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int i = 0; i < r; ++i) acc += n.grad[static_cast<size_t>(i) * c + j];
                pv->grad[static_cast<size_t>(j)] += static_cast<float>(acc);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax (max-subtracted), along `axis` of a rank-1 or rank-2 tensor.
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a, int axis) {
    if (a.rank() == 1) axis = 0;
    if (a.rank() > 2 || axis < 0 || axis >= a.rank())
        throw ShapeError("softmax: unsupported axis " + std::to_string(axis) + " for shape " +
                         shape_str(a.shape()));
    int rows, cols, rstride, cstride;
    if (a.rank() == 1) {
        rows = 1; cols = a.dim(0); rstride = 0; cstride = 1;
    } else if (axis == 1) {
        rows = a.dim(0); cols = a.dim(1); rstride = cols; cstride = 1;
    } else {
        rows = a.dim(1); cols = a.dim(0); rstride = 1; cstride = a.dim(1);
    }
    std::vector<float> out(a.data().size());
    for (int i = 0; i < rows; ++i) {
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < cols; ++j)
            mx = std::max(mx, a.data()[static_cast<size_t>(i) * rstride + static_cast<size_t>(j) * cstride]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            size_t k = static_cast<size_t>(i) * rstride + static_cast<size_t>(j) * cstride;
            out[k] = std::exp(a.data()[k] - mx);
            denom += out[k];
        }
        float inv = static_cast<float>(1.0 / denom);
        for (int j = 0; j < cols; ++j)
            out[static_cast<size_t>(i) * rstride + static_cast<size_t>(j) * cstride] *= inv;
    }
    return Tensor::make(a.shape(), std::move(out), {a},
                        [rows, cols, rstride, cstride](Tensor::Node& n) {
                            auto& p = n.parents[0];
                            p->ensure_grad();
                            for (int i = 0; i < rows; ++i) {
                                double dot = 0.0;
                                for (int j = 0; j < cols; ++j) {
                                    size_t k = static_cast<size_t>(i) * rstride +
                                               static_cast<size_t>(j) * cstride;
                                    dot += static_cast<double>(n.grad[k]) * n.data[k];
                                }
                                for (int j = 0; j < cols; ++j) {
                                    size_t k = static_cast<size_t>(i) * rstride +
                                               static_cast<size_t>(j) * cstride;
                                    p->grad[k] += n.data[k] *
                                                  (n.grad[k] - static_cast<float>(dot));
                                }
                            }
                        });
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding.
//   x: B x Cin x H x W, w: Cout x Cin x k x k, bias: Cout
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int padding) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d expects 4-d input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    int Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Cin)
        throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels but weight expects " +
                         std::to_string(w.dim(1)));
    if (w.dim(3) != k) throw ShapeError("conv2d: non-square kernel");
    if (bias.rank() != 1 || bias.dim(0) != Cout)
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
    int Ho = H + 2 * padding - k + 1;
    int Wo = W + 2 * padding - k + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    auto xat = [&](int b, int c, int i, int j) {
        return x.data()[((static_cast<size_t>(b) * Cin + c) * H + i) * W + j];
    };
    std::vector<float> out(static_cast<size_t>(B) * Cout * Ho * Wo);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oi = 0; oi < Ho; ++oi)
                for (int oj = 0; oj < Wo; ++oj) {
                    double acc = bias.data()[static_cast<size_t>(co)];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ki = 0; ki < k; ++ki) {
                            int ii = oi - padding + ki;
                            if (ii < 0 || ii >= H) continue;
                            for (int kj = 0; kj < k; ++kj) {
                                int jj = oj - padding + kj;
                                if (jj < 0 || jj >= W) continue;
                                acc += static_cast<double>(xat(b, ci, ii, jj)) *
                                       w.data()[((static_cast<size_t>(co) * Cin + ci) * k + ki) * k + kj];
                            }
                        }
                    out[((static_cast<size_t>(b) * Cout + co) * Ho + oi) * Wo + oj] =
                        static_cast<float>(acc);
                }

    return Tensor::make({B, Cout, Ho, Wo}, std::move(out), {x, w, bias},
                        [B, Cin, H, W, Cout, k, padding, Ho, Wo](Tensor::Node& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        auto& pb = n.parents[2];
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int co = 0; co < Cout; ++co)
                for (int oi = 0; oi < Ho; ++oi)
                    for (int oj = 0; oj < Wo; ++oj) {
                        float g = n.grad[((static_cast<size_t>(b) * Cout + co) * Ho + oi) * Wo + oj];
                        if (g == 0.0f) continue;
                        if (pb->requires_grad) pb->grad[static_cast<size_t>(co)] += g;
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int ki = 0; ki < k; ++ki) {
                                int ii = oi - padding + ki;
                                if (ii < 0 || ii >= H) continue;
                                for (int kj = 0; kj < k; ++kj) {
                                    int jj = oj - padding + kj;
                                    if (jj < 0 || jj >= W) continue;
                                    size_t xi = ((static_cast<size_t>(b) * Cin + ci) * H + ii) * W + jj;
                                    size_t wi = ((static_cast<size_t>(co) * Cin + ci) * k + ki) * k + kj;
                                    if (pw->requires_grad) pw->grad[wi] += g * px->data[xi];
                                    if (px->requires_grad) px->grad[xi] += g * pw->data[wi];
                                }
                            }
                    }
    });
}

// ---------------------------------------------------------------------------
// Depthwise causal 1-d convolution over a token sequence.
//   x: L x C, w: C x k, b: C.  y[t][c] = b[c] + sum_j x[t-k+1+j][c] * w[c][j]
// ---------------------------------------------------------------------------

inline Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("causal_conv1d: bad operand ranks");
    int L = x.dim(0), C = x.dim(1), k = w.dim(1);
    if (w.dim(0) != C || b.dim(0) != C)
        throw ShapeError("causal_conv1d: channel mismatch, x " + shape_str(x.shape()) +
                         " w " + shape_str(w.shape()));
    std::vector<float> out(static_cast<size_t>(L) * C);
    for (int t = 0; t < L; ++t)
        for (int c = 0; c < C; ++c) {
            double acc = b.data()[static_cast<size_t>(c)];
            for (int j = 0; j < k; ++j) {
                int s = t - (k - 1) + j;
                if (s < 0) continue;
                acc += static_cast<double>(x.data()[static_cast<size_t>(s) * C + c]) *
                       w.data()[static_cast<size_t>(c) * k + j];
            }
            out[static_cast<size_t>(t) * C + c] = static_cast<float>(acc);
        }
    macs::add(static_cast<std::uint64_t>(L) * C * k);
    return Tensor::make({L, C}, std::move(out), {x, w, b}, [L, C, k](Tensor::Node& n) {
        auto& px = n.parents[0];
        auto& pw = n.parents[1];
        auto& pb = n.parents[2];
        if (px->requires_grad) px->ensure_grad();
        if (pw->requires_grad) pw->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int t = 0; t < L; ++t)
            for (int c = 0; c < C; ++c) {
                float g = n.grad[static_cast<size_t>(t) * C + c];
                if (g == 0.0f) continue;
                if (pb->requires_grad) pb->grad[static_cast<size_t>(c)] += g;
                for (int j = 0; j < k; ++j) {
                    int s = t - (k - 1) + j;
                    if (s < 0) continue;
                    if (pw->requires_grad)
                        pw->grad[static_cast<size_t>(c) * k + j] +=
                            g * px->data[static_cast<size_t>(s) * C + c];
                    if (px->requires_grad)
                        px->grad[static_cast<size_t>(s) * C + c] +=
                            g * pw->data[static_cast<size_t>(c) * k + j];
                }
            }
    });
}

// ---------------------------------------------------------------------------
// BatchNorm over (B, H, W) per channel for B x C x H x W input.
// ---------------------------------------------------------------------------

struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float momentum = 0.9f;
    float eps = 1e-5f;

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<size_t>(channels), 0.0f),
          running_var(static_cast<size_t>(channels), 1.0f) {}
};

inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, bool training) {
    if (x.rank() != 4) throw ShapeError("batchnorm2d expects 4-d input");
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.dim(0) != C || beta.dim(0) != C ||
        static_cast<int>(state.running_mean.size()) != C)
        throw ShapeError("batchnorm2d: channel mismatch");
    std::int64_t m = static_cast<std::int64_t>(B) * H * W;
    if (training && m < 2)
        throw ContractError("batchnorm2d: degenerate variance, need at least 2 elements per "
                            "channel in train mode");

    std::vector<float> mean_c(static_cast<size_t>(C)), invstd_c(static_cast<size_t>(C));
    const float eps = state.eps;
    size_t plane = static_cast<size_t>(H) * W;
    auto idx = [&](int b, int c, size_t s) {
        return (static_cast<size_t>(b) * C + static_cast<size_t>(c)) * plane + s;
    };
    if (training) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b)
                for (size_t s = 0; s < plane; ++s) acc += x.data()[idx(b, c, s)];
            double mu = acc / static_cast<double>(m);
            double var = 0.0;
            for (int b = 0; b < B; ++b)
                for (size_t s = 0; s < plane; ++s) {
                    double d = x.data()[idx(b, c, s)] - mu;
                    var += d * d;
                }
            var /= static_cast<double>(m);
            mean_c[static_cast<size_t>(c)] = static_cast<float>(mu);
            invstd_c[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + eps));
            state.running_mean[static_cast<size_t>(c)] =
                state.momentum * state.running_mean[static_cast<size_t>(c)] +
                (1.0f - state.momentum) * static_cast<float>(mu);
            state.running_var[static_cast<size_t>(c)] =
                state.momentum * state.running_var[static_cast<size_t>(c)] +
                (1.0f - state.momentum) * static_cast<float>(var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean_c[static_cast<size_t>(c)] = state.running_mean[static_cast<size_t>(c)];
            invstd_c[static_cast<size_t>(c)] =
                1.0f / std::sqrt(state.running_var[static_cast<size_t>(c)] + eps);
        }
    }

    std::vector<float> xhat(x.data().size());
    std::vector<float> out(x.data().size());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (size_t s = 0; s < plane; ++s) {
                size_t i = idx(b, c, s);
                xhat[i] = (x.data()[i] - mean_c[static_cast<size_t>(c)]) *
                          invstd_c[static_cast<size_t>(c)];
                out[i] = gamma.data()[static_cast<size_t>(c)] * xhat[i] +
                         beta.data()[static_cast<size_t>(c)];
            }

    return Tensor::make(
        x.shape(), std::move(out), {x, gamma, beta},
        [B, C, plane, m, training, xhat = std::move(xhat), invstd_c](Tensor::Node& n) {
            auto idx = [C, plane](int b, int c, size_t s) {
                return (static_cast<size_t>(b) * C + static_cast<size_t>(c)) * plane + s;
            };
            auto& px = n.parents[0];
            auto& pg = n.parents[1];
            auto& pb = n.parents[2];
            if (px->requires_grad) px->ensure_grad();
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            for (int c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int b = 0; b < B; ++b)
                    for (size_t s = 0; s < plane; ++s) {
                        size_t i = idx(b, c, s);
                        sum_g += n.grad[i];
                        sum_gx += static_cast<double>(n.grad[i]) * xhat[i];
                    }
                if (pg->requires_grad) pg->grad[static_cast<size_t>(c)] += static_cast<float>(sum_gx);
                if (pb->requires_grad) pb->grad[static_cast<size_t>(c)] += static_cast<float>(sum_g);
                if (!px->requires_grad) continue;
                float gma = pg->data[static_cast<size_t>(c)];
                float istd = invstd_c[static_cast<size_t>(c)];
                if (training) {
                    double inv_m = 1.0 / static_cast<double>(m);
                    for (int b = 0; b < B; ++b)
                        for (size_t s = 0; s < plane; ++s) {
                            size_t i = idx(b, c, s);
                            double dxhat = static_cast<double>(n.grad[i]) * gma;
                            px->grad[i] += static_cast<float>(
                                istd * (dxhat - inv_m * gma * sum_g -
                                        xhat[i] * inv_m * gma * sum_gx));
                        }
                } else {
                    for (int b = 0; b < B; ++b)
                        for (size_t s = 0; s < plane; ++s) {
                            size_t i = idx(b, c, s);
                            px->grad[i] += n.grad[i] * gma * istd;
                        }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Cross-entropy over logits (B x K) with integer class labels; mean over batch.
// ---------------------------------------------------------------------------

inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects B x K logits");
    int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
    for (int y : labels)
        if (y < 0 || y >= K)
            throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(K) + ")");
    std::vector<float> probs(logits.data().size());
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* row = logits.data().data() + static_cast<size_t>(b) * K;
        float mx = *std::max_element(row, row + K);
        double denom = 0.0;
        for (int j = 0; j < K; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        double lse = mx + std::log(denom);
        loss += lse - row[labels[static_cast<size_t>(b)]];
        for (int j = 0; j < K; ++j)
            probs[static_cast<size_t>(b) * K + j] =
                static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
    }
    float value = static_cast<float>(loss / B);
    return Tensor::make({1}, {value}, {logits},
                        [B, K, probs = std::move(probs), labels](Tensor::Node& n) {
                            auto& p = n.parents[0];
                            p->ensure_grad();
                            float g = n.grad[0] / static_cast<float>(B);
                            for (int b = 0; b < B; ++b)
                                for (int j = 0; j < K; ++j) {
                                    size_t i = static_cast<size_t>(b) * K + j;
                                    float t = (j == labels[static_cast<size_t>(b)]) ? 1.0f : 0.0f;
                                    p->grad[i] += g * (probs[i] - t);
                                }
                        });
}

// ---------------------------------------------------------------------------
// backward: reverse-topological gradient accumulation from a scalar loss.
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a defined scalar loss");
    auto root = loss.node();
    if (root->backward_done)
        throw ContractError("backward already run on this loss; build a fresh graph");
    if (!root->requires_grad)
        throw ContractError("loss does not require grad; nothing to differentiate");
    root->backward_done = true;

    // Iterative post-order DFS over the recorded graph.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    std::vector<std::pair<Tensor::Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

} // namespace sdmamba
