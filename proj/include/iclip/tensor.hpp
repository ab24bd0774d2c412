#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iclip/errors.hpp"

namespace iclip {

// Eager NaN/Inf detection at op boundaries. On by default; release-style
// callers may switch it off.
inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    bool requires_grad = false;
    std::vector<double> grad;  // allocated only for tracked nodes
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;  // pushes this->grad into parents

    bool leaf() const { return parents.empty(); }
    bool tracked() const { return requires_grad || !parents.empty(); }
    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major tensor of doubles, rank 1-3, with reverse-mode autodiff.
// Copying a Tensor copies the handle; the node (values, grad, graph edges)
// is shared.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(std::vector<double> data, std::vector<std::size_t> shape,
                       bool requires_grad = false) {
        if (shape.empty() || shape.size() > 3)
            throw DimensionError("tensor rank must be 1-3, got " + shape_str(shape));
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
            n *= e;
        }
        if (n != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return from(std::vector<double>(n, 0.0), std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return from(std::vector<double>(n, v), std::move(shape), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({v}, {1}, requires_grad);
    }

    static Tensor wrap(std::shared_ptr<detail::TensorNode> node) {
        return Tensor(std::move(node));
    }

    bool defined() const { return n_ != nullptr; }
    std::size_t rank() const { return n_->shape.size(); }
    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t extent(std::size_t i) const { return n_->shape.at(i); }
    std::size_t size() const { return n_->value.size(); }

    const std::vector<double>& values() const { return n_->value; }
    std::vector<double>& values_mut() { return n_->value; }

    double operator()(std::size_t i) const { return n_->value[i]; }
    double operator()(std::size_t i, std::size_t j) const {
        return n_->value[i * n_->shape[1] + j];
    }
    double& at(std::size_t i) { return n_->value[i]; }
    double& at(std::size_t i, std::size_t j) { return n_->value[i * n_->shape[1] + j]; }
    double at(std::size_t i) const { return n_->value[i]; }
    double at(std::size_t i, std::size_t j) const { return n_->value[i * n_->shape[1] + j]; }

    bool requires_grad() const { return n_->requires_grad; }
    bool has_grad() const { return n_->grad.size() == n_->value.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw UsageError("tensor has no gradient (untracked or backward not run)");
        return n_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Value copy detached from any graph.
    Tensor detach() const { return from(n_->value, n_->shape, false); }

    const std::shared_ptr<detail::TensorNode>& node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> n_;
};

inline void check_finite(const Tensor& t, const char* where) {
    if (!finite_checks()) return;
    for (double v : t.values())
        if (!std::isfinite(v))
            throw NumericError(std::string(where) + ": non-finite value encountered");
}

namespace detail {

inline std::shared_ptr<TensorNode> make_node(std::vector<double> value,
                                             std::vector<std::size_t> shape) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    return node;
}

inline bool any_tracked(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->node()->tracked()) return true;
    return false;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Intermediate node gradients are
// reset per call; tracked leaf gradients accumulate across calls.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw UsageError("backward: loss must be a scalar tensor");
    using detail::TensorNode;
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order DFS: inputs are pushed before their consumers
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (TensorNode* n : topo)
        if (!n->leaf()) n->grad.assign(n->value.size(), 0.0);
    TensorNode* root = loss.node().get();
    if (!root->tracked()) return;  // nothing to differentiate
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

// ---------------------------------------------------------------------------
// Operations

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    check_finite(a, "matmul");
    check_finite(b, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const double ait = av[i * k + t];
            if (ait == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ait * bv[t * n + j];
        }
    auto node = detail::make_node(std::move(out), {m, n});
    if (detail::any_tracked({&a, &b})) {
        node->parents = {a.node(), b.node()};
        auto* self = node.get();
        auto* pa = a.node().get();
        auto* pb = b.node().get();
        node->backprop = [self, pa, pb, m, k, n]() {
            if (pa->tracked()) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = self->grad[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t t = 0; t < k; ++t)
                            pa->grad[i * k + t] += g * pb->value[t * n + j];
                    }
            }
            if (pb->tracked()) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        const double av_ = pa->value[i * k + t];
                        if (av_ == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                            pb->grad[t * n + j] += av_ * self->grad[i * n + j];
                    }
            }
        };
    }
    Tensor r = Tensor::wrap(node);
    check_finite(r, "matmul");
    return r;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank-2 tensor required, got " +
                                            shape_str(a.shape()));
    const std::size_t m = a.extent(0), n = a.extent(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
    auto node = detail::make_node(std::move(out), {n, m});
    if (a.node()->tracked()) {
        node->parents = {a.node()};
        auto* self = node.get();
        auto* pa = a.node().get();
        node->backprop = [self, pa, m, n]() {
            pa->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self->grad[j * m + i];
        };
    }
    return Tensor::wrap(node);
}

namespace detail {

// rank-1 tensors are treated as a single row by the row-wise ops
inline std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t) {
    if (t.rank() == 1) return {1, t.extent(0)};
    if (t.rank() == 2) return {t.extent(0), t.extent(1)};
    throw DimensionError("row-wise op requires rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& x) {
    check_finite(x, "softmax_rows");
    auto [r, c] = detail::rows_cols(x);
    std::vector<double> out(r * c);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        double mx = xv[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(xv[i * c + j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    auto node = detail::make_node(std::move(out), x.shape());
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, r = r, c = c]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += self->grad[i * c + j] * self->value[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    px->grad[i * c + j] +=
                        self->value[i * c + j] * (self->grad[i * c + j] - dot);
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    auto [r, d] = detail::rows_cols(x);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != d || bias.extent(0) != d)
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match feature dim " +
                             std::to_string(d));
    if (!(eps > 0.0)) throw UsageError("layer_norm: eps must be positive");
    check_finite(x, "layer_norm");
    check_finite(gain, "layer_norm");
    check_finite(bias, "layer_norm");
    std::vector<double> out(r * d), xhat(r * d), inv_std(r);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xv[i * d + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[i * d + j] = (xv[i * d + j] - mu) * inv;
            out[i * d + j] = gain.values()[j] * xhat[i * d + j] + bias.values()[j];
        }
    }
    auto node = detail::make_node(std::move(out), x.shape());
    if (detail::any_tracked({&x, &gain, &bias})) {
        node->parents = {x.node(), gain.node(), bias.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        auto* pg = gain.node().get();
        auto* pb = bias.node().get();
        node->backprop = [self, px, pg, pb, r = r, d = d, xhat = std::move(xhat),
                          inv_std = std::move(inv_std)]() {
            const double dd = static_cast<double>(d);
            for (std::size_t i = 0; i < r; ++i) {
                if (pg->tracked()) {
                    pg->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j)
                        pg->grad[j] += self->grad[i * d + j] * xhat[i * d + j];
                }
                if (pb->tracked()) {
                    pb->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self->grad[i * d + j];
                }
                if (px->tracked()) {
                    px->ensure_grad();
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = self->grad[i * d + j] * pg->value[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat[i * d + j];
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = self->grad[i * d + j] * pg->value[j];
                        px->grad[i * d + j] +=
                            inv_std[i] *
                            (dxh - sum_dxhat / dd - xhat[i * d + j] * sum_dxhat_xhat / dd);
                    }
                }
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor l2_normalize(const Tensor& x, double norm_floor = 1e-12) {
    check_finite(x, "l2_normalize");
    auto [r, d] = detail::rows_cols(x);
    std::vector<double> out(r * d), norms(r);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
        const double norm = std::sqrt(s);
        if (!(norm > norm_floor))
            throw NumericError("l2_normalize: zero-norm row " + std::to_string(i));
        norms[i] = norm;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] / norm;
    }
    auto node = detail::make_node(std::move(out), x.shape());
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, r = r, d = d, norms = std::move(norms)]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    dot += self->grad[i * d + j] * self->value[i * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    px->grad[i * d + j] +=
                        (self->grad[i * d + j] - self->value[i * d + j] * dot) / norms[i];
            }
        };
    }
    return Tensor::wrap(node);
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    check_finite(a, "add");
    check_finite(b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto node = detail::make_node(std::move(out), a.shape());
    if (detail::any_tracked({&a, &b})) {
        node->parents = {a.node(), b.node()};
        auto* self = node.get();
        auto* pa = a.node().get();
        auto* pb = b.node().get();
        node->backprop = [self, pa, pb]() {
            for (detail::TensorNode* p : {pa, pb}) {
                if (!p->tracked()) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i];
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor scale(const Tensor& x, double alpha) {
    check_finite(x, "scale");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * x.values()[i];
    auto node = detail::make_node(std::move(out), x.shape());
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, alpha]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                px->grad[i] += alpha * self->grad[i];
        };
    }
    Tensor r = Tensor::wrap(node);
    check_finite(r, "scale");
    return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    check_finite(a, "mul");
    check_finite(b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto node = detail::make_node(std::move(out), a.shape());
    if (detail::any_tracked({&a, &b})) {
        node->parents = {a.node(), b.node()};
        auto* self = node.get();
        auto* pa = a.node().get();
        auto* pb = b.node().get();
        node->backprop = [self, pa, pb]() {
            if (pa->tracked()) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pa->grad[i] += self->grad[i] * pb->value[i];
            }
            if (pb->tracked()) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pb->grad[i] += self->grad[i] * pa->value[i];
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor mean_pool_pair(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mean_pool_pair");
    return scale(add(a, b), 0.5);
}

inline Tensor gelu(const Tensor& x) {
    check_finite(x, "gelu");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    auto node = detail::make_node(std::move(out), x.shape());
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px]() {
            px->ensure_grad();
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                const double v = px->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                px->grad[i] += self->grad[i] * (cdf + v * pdf);
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor elem_log(const Tensor& x) {
    check_finite(x, "log");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(x.values()[i] > 0.0))
            throw NumericError("log: non-positive input at index " + std::to_string(i));
        out[i] = std::log(x.values()[i]);
    }
    auto node = detail::make_node(std::move(out), x.shape());
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                px->grad[i] += self->grad[i] / px->value[i];
        };
    }
    return Tensor::wrap(node);
}

inline Tensor sum(const Tensor& x) {
    check_finite(x, "sum");
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto node = detail::make_node({s}, {1});
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += self->grad[0];
        };
    }
    return Tensor::wrap(node);
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: empty input");
    std::size_t cols = 0, rows = 0;
    for (const Tensor& t : parts) {
        auto [r, c] = detail::rows_cols(t);
        if (cols == 0) cols = c;
        if (c != cols)
            throw DimensionError("concat_rows: column mismatch " + shape_str(t.shape()));
        rows += r;
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const Tensor& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
    auto node = detail::make_node(std::move(out), {rows, cols});
    bool tracked = false;
    for (const Tensor& t : parts) tracked = tracked || t.node()->tracked();
    if (tracked) {
        for (const Tensor& t : parts) node->parents.push_back(t.node());
        auto* self = node.get();
        node->backprop = [self]() {
            std::size_t off = 0;
            for (auto& p : self->parents) {
                const std::size_t n = p->value.size();
                if (p->tracked()) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) p->grad[i] += self->grad[off + i];
                }
                off += n;
            }
        };
    }
    return Tensor::wrap(node);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: empty input");
    std::size_t rows = 0, cols = 0;
    std::vector<std::size_t> widths;
    for (const Tensor& t : parts) {
        auto [r, c] = detail::rows_cols(t);
        if (rows == 0) rows = r;
        if (r != rows) throw DimensionError("concat_cols: row mismatch " + shape_str(t.shape()));
        widths.push_back(c);
        cols += c;
    }
    std::vector<double> out(rows * cols);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].values();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
                out[i * cols + off + j] = v[i * widths[k] + j];
        off += widths[k];
    }
    auto node = detail::make_node(std::move(out), {rows, cols});
    bool tracked = false;
    for (const Tensor& t : parts) tracked = tracked || t.node()->tracked();
    if (tracked) {
        for (const Tensor& t : parts) node->parents.push_back(t.node());
        auto* self = node.get();
        node->backprop = [self, rows, cols, widths = std::move(widths)]() {
            std::size_t off = 0;
            for (std::size_t k = 0; k < self->parents.size(); ++k) {
                auto& p = self->parents[k];
                if (p->tracked()) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            p->grad[i * widths[k] + j] += self->grad[i * cols + off + j];
                }
                off += widths[k];
            }
        };
    }
    return Tensor::wrap(node);
}

// Broadcast a single row to n identical rows; gradient sums back.
inline Tensor repeat_row(const Tensor& x, std::size_t n) {
    auto [r, d] = detail::rows_cols(x);
    if (r != 1) throw DimensionError("repeat_row: single-row input required, got " +
                                     shape_str(x.shape()));
    if (n == 0) throw UsageError("repeat_row: n must be positive");
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[j];
    auto node = detail::make_node(std::move(out), {n, d});
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, n, d = d]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) px->grad[j] += self->grad[i * d + j];
        };
    }
    return Tensor::wrap(node);
}

inline Tensor take_row(const Tensor& x, std::size_t row) {
    if (x.rank() != 2) throw DimensionError("take_row: rank-2 tensor required");
    const std::size_t r = x.extent(0), d = x.extent(1);
    if (row >= r) throw UsageError("take_row: row " + std::to_string(row) + " out of range");
    std::vector<double> out(x.values().begin() + row * d, x.values().begin() + (row + 1) * d);
    auto node = detail::make_node(std::move(out), {1, d});
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, row, d]() {
            px->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) px->grad[row * d + j] += self->grad[j];
        };
    }
    return Tensor::wrap(node);
}

// out[i, 0] = x[i, idx[i]]
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    if (x.rank() != 2) throw DimensionError("gather_rows: rank-2 tensor required");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (idx.size() != r)
        throw UsageError("gather_rows: index count " + std::to_string(idx.size()) +
                         " does not match row count " + std::to_string(r));
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (idx[i] >= c)
            throw UsageError("gather_rows: index " + std::to_string(idx[i]) +
                             " out of range for " + std::to_string(c) + " columns");
        out[i] = x.values()[i * c + idx[i]];
    }
    auto node = detail::make_node(std::move(out), {r, 1});
    if (x.node()->tracked()) {
        node->parents = {x.node()};
        auto* self = node.get();
        auto* px = x.node().get();
        node->backprop = [self, px, c, idx]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < idx.size(); ++i)
                px->grad[i * c + idx[i]] += self->grad[i];
        };
    }
    return Tensor::wrap(node);
}

}  // namespace iclip
