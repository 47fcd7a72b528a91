#include "koel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "koel/kernels.hpp"

namespace koel {

int64_t shape_numel(const Shape &s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape &s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

template <class S>
void check_finite(const char *op, const std::vector<S> &v) {
    for (const S x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            fail("op '", op, "' produced a non-finite value");
    }
}

std::vector<int64_t> strides_of(const Shape &s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
    return st;
}

// rows x cols view of a tensor, folding every axis but the last into rows
template <class S>
std::pair<int64_t, int> as_rows(const TensorT<S> &x) {
    check(x.ndim() >= 1, "expected at least 1-D tensor");
    const int cols = x.dim(x.ndim() - 1);
    return {x.numel() / cols, cols};
}

} // namespace

// ---------------------------------------------------------------------------
// TensorT
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> make_node(const char *op, Shape shape, std::vector<S> value,
                     std::vector<TensorT<S>> parents,
                     std::function<void(TensorNodeT<S> &)> backward_fn, double scalar_cache) {
    check(shape_numel(shape) == static_cast<int64_t>(value.size()), "op '", op,
          "': shape ", shape_str(shape), " does not match data size ", value.size());
    check_finite(op, value);
    auto n = std::make_shared<TensorNodeT<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    n->scalar_cache = scalar_cache;
    for (auto &p : parents) {
        if (p.requires_grad()) n->requires_grad = true;
        n->parents.push_back(p.node());
    }
    if (n->requires_grad) n->backward = std::move(backward_fn);
    return TensorT<S>(std::move(n));
}

template <class S>
TensorT<S> TensorT<S>::zeros(Shape shape) {
    return full(std::move(shape), S(0));
}

template <class S>
TensorT<S> TensorT<S>::full(Shape shape, S v) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    return TensorT(std::move(n));
}

template <class S>
TensorT<S> TensorT<S>::from(Shape shape, std::vector<S> data) {
    check(shape_numel(shape) == static_cast<int64_t>(data.size()), "tensor shape ",
          shape_str(shape), " does not match data size ", data.size());
    check_finite("leaf", data);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return TensorT(std::move(n));
}

template <class S>
TensorT<S> TensorT<S>::scalar_value(double v) {
    auto t = from({1}, {static_cast<S>(v)});
    t.n_->scalar_cache = v;
    return t;
}

template <class S>
TensorT<S> TensorT<S>::randn(Shape shape, Rng &rng, double stddev) {
    std::vector<S> d(static_cast<size_t>(shape_numel(shape)));
    for (auto &x : d) x = static_cast<S>(rng.normal() * stddev);
    return from(std::move(shape), std::move(d));
}

template <class S>
TensorT<S> TensorT<S>::uniform(Shape shape, Rng &rng, double lo, double hi) {
    std::vector<S> d(static_cast<size_t>(shape_numel(shape)));
    for (auto &x : d) x = static_cast<S>(rng.uniform(lo, hi));
    return from(std::move(shape), std::move(d));
}

template <class S>
S TensorT<S>::at(std::initializer_list<int> idx) const {
    check(static_cast<int>(idx.size()) == ndim(), "index rank mismatch");
    const auto st = strides_of(n_->shape);
    int64_t off = 0;
    int i = 0;
    for (int v : idx) {
        check(v >= 0 && v < n_->shape[static_cast<size_t>(i)], "index out of range");
        off += st[static_cast<size_t>(i)] * v;
        ++i;
    }
    return n_->value[static_cast<size_t>(off)];
}

template <class S>
TensorT<S> &TensorT<S>::set_requires_grad(bool on) {
    check(std::string(n_->op) == "leaf", "requires_grad can only be toggled on leaf tensors");
    n_->requires_grad = on;
    if (on) n_->ensure_grad();
    return *this;
}

template <class S>
const std::vector<S> &TensorT<S>::grad() const {
    check(n_->requires_grad, "tensor does not require grad");
    const_cast<Node *>(n_.get())->ensure_grad();
    return n_->grad;
}

template <class S>
void TensorT<S>::zero_grad() {
    if (n_->requires_grad) {
        n_->ensure_grad();
        std::fill(n_->grad.begin(), n_->grad.end(), S(0));
    }
}

template <class S>
double TensorT<S>::scalar() const {
    check(numel() == 1, "scalar() on tensor of shape ", shape_str(n_->shape));
    if (std::isfinite(n_->scalar_cache)) return n_->scalar_cache;
    return static_cast<double>(n_->value[0]);
}

template <class S>
std::vector<S> &TensorT<S>::leaf_data() {
    check(std::string(n_->op) == "leaf", "in-place data access is only allowed on leaf tensors");
    return n_->value;
}

template <class S>
void TensorT<S>::backward() {
    check(numel() == 1, "backward() requires a scalar loss, got ", shape_str(n_->shape));
    check(n_->requires_grad, "backward() on a tensor with no grad path");

    // reverse post-order over the subgraph that requires grad
    std::vector<Node *> order;
    std::unordered_set<Node *> seen;
    std::vector<std::pair<Node *, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            Node *p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    n_->ensure_grad();
    n_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node *node = *it;
        if (node->backward) node->backward(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise and shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S> &a, const TensorT<S> &b) {
    check(a.shape() == b.shape(), "op 'add': shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    std::vector<S> out(a.data());
    const auto &bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    double cache = std::numeric_limits<double>::quiet_NaN();
    if (a.numel() == 1 && std::isfinite(a.node()->scalar_cache) &&
        std::isfinite(b.node()->scalar_cache))
        cache = a.node()->scalar_cache + b.node()->scalar_cache;
    auto pa = a.node(), pb = b.node();
    return make_node<S>(
        "add", a.shape(), std::move(out), {a, b},
        [pa, pb](TensorNodeT<S> &self) {
            for (auto &p : {pa, pb}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        },
        cache);
}

template <class S>
TensorT<S> sub(const TensorT<S> &a, const TensorT<S> &b) {
    check(a.shape() == b.shape(), "op 'sub': shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    std::vector<S> out(a.data());
    const auto &bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto pa = a.node(), pb = b.node();
    return make_node<S>("sub", a.shape(), std::move(out), {a, b}, [pa, pb](TensorNodeT<S> &self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

template <class S>
TensorT<S> mul(const TensorT<S> &a, const TensorT<S> &b) {
    check(a.shape() == b.shape(), "op 'mul': shape mismatch ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    std::vector<S> out(a.data());
    const auto &bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto pa = a.node(), pb = b.node();
    return make_node<S>("mul", a.shape(), std::move(out), {a, b}, [pa, pb](TensorNodeT<S> &self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

template <class S>
TensorT<S> scale(const TensorT<S> &a, double s) {
    std::vector<S> out(a.data());
    for (auto &x : out) x = static_cast<S>(x * s);
    double cache = std::numeric_limits<double>::quiet_NaN();
    if (a.numel() == 1 && std::isfinite(a.node()->scalar_cache))
        cache = a.node()->scalar_cache * s;
    auto pa = a.node();
    return make_node<S>(
        "scale", a.shape(), std::move(out), {a},
        [pa, s](TensorNodeT<S> &self) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += static_cast<S>(self.grad[i] * s);
        },
        cache);
}

template <class S>
TensorT<S> add_bias(const TensorT<S> &x, const TensorT<S> &bias) {
    check(bias.ndim() == 1, "op 'add_bias': bias must be 1-D, got ", shape_str(bias.shape()));
    const auto [rows, cols] = as_rows(x);
    check(cols == bias.dim(0), "op 'add_bias': last axis ", shape_str(x.shape()),
          " vs bias ", shape_str(bias.shape()));
    std::vector<S> out(x.data());
    const auto &bd = bias.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<size_t>(r * cols + c)] += bd[static_cast<size_t>(c)];
    auto px = x.node(), pb = bias.node();
    const int64_t rows_c = rows;
    const int cols_c = cols;
    return make_node<S>("add_bias", x.shape(), std::move(out), {x, bias},
                        [px, pb, rows_c, cols_c](TensorNodeT<S> &self) {
                            if (px->requires_grad) {
                                px->ensure_grad();
                                for (size_t i = 0; i < self.grad.size(); ++i)
                                    px->grad[i] += self.grad[i];
                            }
                            if (pb->requires_grad) {
                                pb->ensure_grad();
                                for (int64_t r = 0; r < rows_c; ++r)
                                    for (int c = 0; c < cols_c; ++c)
                                        pb->grad[static_cast<size_t>(c)] +=
                                            self.grad[static_cast<size_t>(r * cols_c + c)];
                            }
                        });
}

template <class S>
TensorT<S> reshape(const TensorT<S> &a, Shape shape) {
    check(shape_numel(shape) == a.numel(), "op 'reshape': ", shape_str(a.shape()),
          " cannot reshape to ", shape_str(shape));
    auto pa = a.node();
    return make_node<S>("reshape", std::move(shape), std::vector<S>(a.data()), {a},
                        [pa](TensorNodeT<S> &self) {
                            pa->ensure_grad();
                            for (size_t i = 0; i < self.grad.size(); ++i)
                                pa->grad[i] += self.grad[i];
                        });
}

namespace {

template <class S>
void permute_copy(const Shape &src_shape, const std::vector<int> &axes, const std::vector<S> &src,
                  std::vector<S> &dst) {
    const int nd = static_cast<int>(src_shape.size());
    Shape dst_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) dst_shape[static_cast<size_t>(i)] = src_shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    const auto sst = strides_of(src_shape);
    const auto dstr = strides_of(dst_shape);
    std::vector<int> idx(static_cast<size_t>(nd), 0);
    const int64_t n = static_cast<int64_t>(src.size());
    for (int64_t di = 0; di < n; ++di) {
        int64_t rem = di;
        int64_t si = 0;
        for (int i = 0; i < nd; ++i) {
            const int64_t v = rem / dstr[static_cast<size_t>(i)];
            rem %= dstr[static_cast<size_t>(i)];
            si += v * sst[static_cast<size_t>(axes[static_cast<size_t>(i)])];
        }
        dst[static_cast<size_t>(di)] = src[static_cast<size_t>(si)];
    }
}

} // namespace

template <class S>
TensorT<S> permute(const TensorT<S> &a, const std::vector<int> &axes) {
    const int nd = a.ndim();
    check(static_cast<int>(axes.size()) == nd, "op 'permute': axes rank mismatch");
    std::vector<bool> used(static_cast<size_t>(nd), false);
    for (int ax : axes) {
        check(ax >= 0 && ax < nd && !used[static_cast<size_t>(ax)], "op 'permute': bad axes");
        used[static_cast<size_t>(ax)] = true;
    }
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = a.dim(axes[static_cast<size_t>(i)]);
    std::vector<S> out(a.data().size());
    permute_copy(a.shape(), axes, a.data(), out);
    auto pa = a.node();
    const Shape src_shape = a.shape();
    std::vector<int> inv(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
    const Shape out_shape_c = out_shape;
    return make_node<S>("permute", std::move(out_shape), std::move(out), {a},
                        [pa, inv, out_shape_c](TensorNodeT<S> &self) {
                            pa->ensure_grad();
                            std::vector<S> g(self.grad.size());
                            permute_copy(out_shape_c, inv, self.grad, g);
                            for (size_t i = 0; i < g.size(); ++i) pa->grad[i] += g[i];
                        });
}

template <class S>
TensorT<S> transpose(const TensorT<S> &a, int ax0, int ax1) {
    std::vector<int> axes(static_cast<size_t>(a.ndim()));
    for (int i = 0; i < a.ndim(); ++i) axes[static_cast<size_t>(i)] = i;
    std::swap(axes[static_cast<size_t>(ax0)], axes[static_cast<size_t>(ax1)]);
    return permute(a, axes);
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>> &parts, int axis) {
    check(!parts.empty(), "op 'concat': no inputs");
    const int nd = parts[0].ndim();
    check(axis >= 0 && axis < nd, "op 'concat': bad axis");
    int total = 0;
    for (const auto &p : parts) {
        check(p.ndim() == nd, "op 'concat': rank mismatch");
        for (int i = 0; i < nd; ++i)
            check(i == axis || p.dim(i) == parts[0].dim(i), "op 'concat': shape mismatch ",
                  shape_str(p.shape()), " vs ", shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<size_t>(axis)] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= out_shape[static_cast<size_t>(i)];

    std::vector<S> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<TensorT<S>> parents = parts;
    int64_t off = 0;
    for (const auto &p : parts) {
        const int64_t span = p.dim(axis) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(p.data().begin() + o * span, span,
                        out.begin() + o * total * inner + off);
        off += span;
    }
    std::vector<std::shared_ptr<TensorNodeT<S>>> pn;
    std::vector<int64_t> spans;
    for (const auto &p : parts) {
        pn.push_back(p.node());
        spans.push_back(p.dim(axis) * inner);
    }
    const int64_t outer_c = outer, inner_total = total * inner;
    return make_node<S>("concat", std::move(out_shape), std::move(out), std::move(parents),
                        [pn, spans, outer_c, inner_total](TensorNodeT<S> &self) {
                            int64_t off2 = 0;
                            for (size_t pi = 0; pi < pn.size(); ++pi) {
                                if (pn[pi]->requires_grad) {
                                    pn[pi]->ensure_grad();
                                    for (int64_t o = 0; o < outer_c; ++o)
                                        for (int64_t i = 0; i < spans[pi]; ++i)
                                            pn[pi]->grad[static_cast<size_t>(o * spans[pi] + i)] +=
                                                self.grad[static_cast<size_t>(o * inner_total + off2 + i)];
                                }
                                off2 += spans[pi];
                            }
                        });
}

template <class S>
TensorT<S> slice(const TensorT<S> &a, int axis, int start, int len) {
    const int nd = a.ndim();
    check(axis >= 0 && axis < nd, "op 'slice': bad axis");
    check(start >= 0 && len >= 0 && start + len <= a.dim(axis), "op 'slice': range [", start, ", ",
          start + len, ") out of bounds for ", shape_str(a.shape()), " axis ", axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
    const int64_t src_span = a.dim(axis) * inner;
    const int64_t dst_span = len * inner;
    std::vector<S> out(static_cast<size_t>(outer * dst_span));
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a.data().begin() + o * src_span + start * inner, dst_span,
                    out.begin() + o * dst_span);
    auto pa = a.node();
    const int64_t outer_c = outer, inner_c = inner, src_span_c = src_span, dst_span_c = dst_span;
    const int start_c = start;
    return make_node<S>("slice", std::move(out_shape), std::move(out), {a},
                        [pa, outer_c, inner_c, src_span_c, dst_span_c, start_c](TensorNodeT<S> &self) {
                            pa->ensure_grad();
                            for (int64_t o = 0; o < outer_c; ++o)
                                for (int64_t i = 0; i < dst_span_c; ++i)
                                    pa->grad[static_cast<size_t>(o * src_span_c + start_c * inner_c + i)] +=
                                        self.grad[static_cast<size_t>(o * dst_span_c + i)];
                        });
}

template <class S>
TensorT<S> embedding(const TensorT<S> &table, const std::vector<int> &ids) {
    check(table.ndim() == 2, "op 'embedding': table must be 2-D, got ", shape_str(table.shape()));
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        check(id >= 0 && id < v, "op 'embedding': id ", id, " out of range for vocab ", v);
    std::vector<S> out(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data().begin() + static_cast<int64_t>(ids[i]) * d, d,
                    out.begin() + static_cast<int64_t>(i) * d);
    auto pt = table.node();
    const std::vector<int> ids_c = ids;
    const int d_c = d;
    return make_node<S>("embedding", {static_cast<int>(ids.size()), d}, std::move(out), {table},
                        [pt, ids_c, d_c](TensorNodeT<S> &self) {
                            pt->ensure_grad();
                            for (size_t i = 0; i < ids_c.size(); ++i)
                                for (int j = 0; j < d_c; ++j)
                                    pt->grad[static_cast<size_t>(static_cast<int64_t>(ids_c[i]) * d_c + j)] +=
                                        self.grad[static_cast<size_t>(static_cast<int64_t>(i) * d_c + j)];
                        });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

namespace {
template <class S>
inline S sigmoid_scalar(S x) {
    return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}
} // namespace

template <class S>
TensorT<S> relu(const TensorT<S> &x) {
    std::vector<S> out(x.data());
    for (auto &v : out) v = v > S(0) ? v : S(0);
    auto px = x.node();
    return make_node<S>("relu", x.shape(), std::move(out), {x}, [px](TensorNodeT<S> &self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (px->value[i] > S(0)) px->grad[i] += self.grad[i];
    });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S> &x) {
    std::vector<S> out(x.data());
    for (auto &v : out) v = sigmoid_scalar(v);
    auto px = x.node();
    return make_node<S>("sigmoid", x.shape(), std::move(out), {x}, [px](TensorNodeT<S> &self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const S y = self.value[i];
            px->grad[i] += self.grad[i] * y * (S(1) - y);
        }
    });
}

template <class S>
TensorT<S> swish(const TensorT<S> &x) {
    std::vector<S> out(x.data().size());
    const auto &xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sigmoid_scalar(xd[i]);
    auto px = x.node();
    return make_node<S>("swish", x.shape(), std::move(out), {x}, [px](TensorNodeT<S> &self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const S s = sigmoid_scalar(px->value[i]);
            px->grad[i] += self.grad[i] * (s + px->value[i] * s * (S(1) - s));
        }
    });
}

template <class S>
TensorT<S> glu(const TensorT<S> &x) {
    const auto [rows, cols] = as_rows(x);
    check(cols % 2 == 0, "op 'glu': last axis must be even, got ", shape_str(x.shape()));
    const int half = cols / 2;
    Shape out_shape = x.shape();
    out_shape.back() = half;
    std::vector<S> out(static_cast<size_t>(rows * half));
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < half; ++c) {
            const S a = xd[static_cast<size_t>(r * cols + c)];
            const S b = xd[static_cast<size_t>(r * cols + half + c)];
            out[static_cast<size_t>(r * half + c)] = a * sigmoid_scalar(b);
        }
    auto px = x.node();
    const int64_t rows_c = rows;
    const int cols_c = cols, half_c = half;
    return make_node<S>("glu", std::move(out_shape), std::move(out), {x},
                        [px, rows_c, cols_c, half_c](TensorNodeT<S> &self) {
                            px->ensure_grad();
                            for (int64_t r = 0; r < rows_c; ++r)
                                for (int c = 0; c < half_c; ++c) {
                                    const S a = px->value[static_cast<size_t>(r * cols_c + c)];
                                    const S b = px->value[static_cast<size_t>(r * cols_c + half_c + c)];
                                    const S s = sigmoid_scalar(b);
                                    const S g = self.grad[static_cast<size_t>(r * half_c + c)];
                                    px->grad[static_cast<size_t>(r * cols_c + c)] += g * s;
                                    px->grad[static_cast<size_t>(r * cols_c + half_c + c)] +=
                                        g * a * s * (S(1) - s);
                                }
                        });
}

template <class S>
TensorT<S> dropout(const TensorT<S> &x, double p, Rng &rng, bool training) {
    check(p >= 0.0 && p < 1.0, "op 'dropout': p must be in [0, 1), got ", p);
    if (!training || p == 0.0) return x;
    const double keep = 1.0 - p;
    const S inv = static_cast<S>(1.0 / keep);
    std::vector<S> mask(x.data().size());
    std::vector<S> out(x.data().size());
    const auto &xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < keep ? inv : S(0);
        out[i] = xd[i] * mask[i];
    }
    auto px = x.node();
    auto mask_c = std::make_shared<std::vector<S>>(std::move(mask));
    return make_node<S>("dropout", x.shape(), std::move(out), {x}, [px, mask_c](TensorNodeT<S> &self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            px->grad[i] += self.grad[i] * (*mask_c)[i];
    });
}

template <class S>
TensorT<S> masked_fill(const TensorT<S> &x, const TensorT<S> &keep, double fill) {
    check(x.shape() == keep.shape(), "op 'masked_fill': shape mismatch ", shape_str(x.shape()),
          " vs ", shape_str(keep.shape()));
    std::vector<S> out(x.data());
    const auto &kd = keep.data();
    const S f = static_cast<S>(fill);
    for (size_t i = 0; i < out.size(); ++i)
        if (kd[i] == S(0)) out[i] = f;
    auto px = x.node();
    auto pk = keep.node();
    // the mask is a constant: no gradient flows into `keep`
    return make_node<S>("masked_fill", x.shape(), std::move(out), {x}, [px, pk](TensorNodeT<S> &self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (pk->value[i] != S(0)) px->grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// normalizations and reductions
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax(const TensorT<S> &x) {
    const auto [rows, cols] = as_rows(x);
    check(cols >= 1, "op 'softmax': empty last axis");
    std::vector<S> out(x.data().size());
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S *row = xd.data() + r * cols;
        S *orow = out.data() + r * cols;
        S mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += static_cast<double>(orow[c]);
        }
        const S inv = static_cast<S>(1.0 / sum);
        for (int c = 0; c < cols; ++c) orow[c] *= inv;
    }
    auto px = x.node();
    const int64_t rows_c = rows;
    const int cols_c = cols;
    return make_node<S>("softmax", x.shape(), std::move(out), {x},
                        [px, rows_c, cols_c](TensorNodeT<S> &self) {
                            px->ensure_grad();
                            for (int64_t r = 0; r < rows_c; ++r) {
                                const S *y = self.value.data() + r * cols_c;
                                const S *g = self.grad.data() + r * cols_c;
                                double dot = 0.0;
                                for (int c = 0; c < cols_c; ++c)
                                    dot += static_cast<double>(y[c]) * static_cast<double>(g[c]);
                                for (int c = 0; c < cols_c; ++c)
                                    px->grad[static_cast<size_t>(r * cols_c + c)] +=
                                        y[c] * (g[c] - static_cast<S>(dot));
                            }
                        });
}

template <class S>
TensorT<S> log_softmax(const TensorT<S> &x) {
    const auto [rows, cols] = as_rows(x);
    check(cols >= 1, "op 'log_softmax': empty last axis");
    std::vector<S> out(x.data().size());
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S *row = xd.data() + r * cols;
        S *orow = out.data() + r * cols;
        S mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
        const double lse = static_cast<double>(mx) + std::log(sum);
        for (int c = 0; c < cols; ++c) orow[c] = static_cast<S>(static_cast<double>(row[c]) - lse);
    }
    auto px = x.node();
    const int64_t rows_c = rows;
    const int cols_c = cols;
    return make_node<S>("log_softmax", x.shape(), std::move(out), {x},
                        [px, rows_c, cols_c](TensorNodeT<S> &self) {
                            px->ensure_grad();
                            for (int64_t r = 0; r < rows_c; ++r) {
                                const S *y = self.value.data() + r * cols_c;
                                const S *g = self.grad.data() + r * cols_c;
                                double gsum = 0.0;
                                for (int c = 0; c < cols_c; ++c) gsum += static_cast<double>(g[c]);
                                for (int c = 0; c < cols_c; ++c)
                                    px->grad[static_cast<size_t>(r * cols_c + c)] +=
                                        g[c] - static_cast<S>(std::exp(static_cast<double>(y[c])) * gsum);
                            }
                        });
}

template <class S>
TensorT<S> logsumexp(const TensorT<S> &x) {
    const auto [rows, cols] = as_rows(x);
    check(cols >= 1, "op 'logsumexp': empty last axis");
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<S> out(static_cast<size_t>(rows));
    const auto &xd = x.data();
    double cache = std::numeric_limits<double>::quiet_NaN();
    for (int64_t r = 0; r < rows; ++r) {
        const S *row = xd.data() + r * cols;
        S mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
        const double v = static_cast<double>(mx) + std::log(sum);
        out[static_cast<size_t>(r)] = static_cast<S>(v);
        if (rows == 1) cache = v;
    }
    auto px = x.node();
    const int64_t rows_c = rows;
    const int cols_c = cols;
    return make_node<S>(
        "logsumexp", std::move(out_shape), std::move(out), {x},
        [px, rows_c, cols_c](TensorNodeT<S> &self) {
            px->ensure_grad();
            for (int64_t r = 0; r < rows_c; ++r) {
                const S lse = self.value[static_cast<size_t>(r)];
                const S g = self.grad[static_cast<size_t>(r)];
                for (int c = 0; c < cols_c; ++c)
                    px->grad[static_cast<size_t>(r * cols_c + c)] +=
                        g * static_cast<S>(std::exp(
                                static_cast<double>(px->value[static_cast<size_t>(r * cols_c + c)]) -
                                static_cast<double>(lse)));
            }
        },
        cache);
}

template <class S>
TensorT<S> layer_norm(const TensorT<S> &x, const TensorT<S> &gamma, const TensorT<S> &beta,
                      double eps) {
    const auto [rows, cols] = as_rows(x);
    check(gamma.ndim() == 1 && gamma.dim(0) == cols && beta.ndim() == 1 && beta.dim(0) == cols,
          "op 'layer_norm': affine params must be [", cols, "], got ", shape_str(gamma.shape()),
          " and ", shape_str(beta.shape()));
    std::vector<S> out(x.data().size());
    std::vector<S> xhat(x.data().size());
    std::vector<S> inv_std(static_cast<size_t>(rows));
    const auto &xd = x.data();
    const auto &gd = gamma.data();
    const auto &bd = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const S *row = xd.data() + r * cols;
        double mean = 0.0;
        for (int c = 0; c < cols; ++c) mean += static_cast<double>(row[c]);
        mean /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = static_cast<double>(row[c]) - mean;
            var += d * d;
        }
        var /= cols;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = static_cast<S>(istd);
        for (int c = 0; c < cols; ++c) {
            const S xh = static_cast<S>((static_cast<double>(row[c]) - mean) * istd);
            xhat[static_cast<size_t>(r * cols + c)] = xh;
            out[static_cast<size_t>(r * cols + c)] = xh * gd[static_cast<size_t>(c)] + bd[static_cast<size_t>(c)];
        }
    }
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    auto xhat_c = std::make_shared<std::vector<S>>(std::move(xhat));
    auto istd_c = std::make_shared<std::vector<S>>(std::move(inv_std));
    const int64_t rows_c = rows;
    const int cols_c = cols;
    return make_node<S>(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [px, pg, pb, xhat_c, istd_c, rows_c, cols_c](TensorNodeT<S> &self) {
            for (int64_t r = 0; r < rows_c; ++r) {
                const S *g = self.grad.data() + r * cols_c;
                const S *xh = xhat_c->data() + r * cols_c;
                if (pg->requires_grad) {
                    pg->ensure_grad();
                    for (int c = 0; c < cols_c; ++c)
                        pg->grad[static_cast<size_t>(c)] += g[c] * xh[c];
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    for (int c = 0; c < cols_c; ++c) pb->grad[static_cast<size_t>(c)] += g[c];
                }
                if (px->requires_grad) {
                    px->ensure_grad();
                    double m1 = 0.0, m2 = 0.0;
                    for (int c = 0; c < cols_c; ++c) {
                        const double gg = static_cast<double>(g[c]) * static_cast<double>(pg->value[static_cast<size_t>(c)]);
                        m1 += gg;
                        m2 += gg * static_cast<double>(xh[c]);
                    }
                    m1 /= cols_c;
                    m2 /= cols_c;
                    const double istd = static_cast<double>((*istd_c)[static_cast<size_t>(r)]);
                    for (int c = 0; c < cols_c; ++c) {
                        const double gg = static_cast<double>(g[c]) * static_cast<double>(pg->value[static_cast<size_t>(c)]);
                        px->grad[static_cast<size_t>(r * cols_c + c)] += static_cast<S>(
                            (gg - m1 - static_cast<double>(xh[c]) * m2) * istd);
                    }
                }
            }
        });
}

template <class S>
TensorT<S> batch_norm(const TensorT<S> &x, const TensorT<S> &gamma, const TensorT<S> &beta,
                      BatchNormState &state, const std::vector<uint8_t> &row_mask, bool training,
                      double momentum, double eps) {
    check(x.ndim() == 2, "op 'batch_norm': expected [N x C], got ", shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1);
    check(gamma.ndim() == 1 && gamma.dim(0) == c && beta.ndim() == 1 && beta.dim(0) == c,
          "op 'batch_norm': affine params must be [", c, "]");
    check(static_cast<int>(state.running_mean.size()) == c, "op 'batch_norm': state channels ",
          state.running_mean.size(), " != ", c);
    check(row_mask.empty() || static_cast<int>(row_mask.size()) == n,
          "op 'batch_norm': row mask size mismatch");

    std::vector<double> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
    int64_t m = 0;
    if (training) {
        for (int r = 0; r < n; ++r) {
            if (!row_mask.empty() && !row_mask[static_cast<size_t>(r)]) continue;
            ++m;
            for (int ch = 0; ch < c; ++ch)
                mean[static_cast<size_t>(ch)] += static_cast<double>(x.data()[static_cast<size_t>(r) * c + ch]);
        }
        check(m > 0, "op 'batch_norm': no valid rows in batch");
        for (int ch = 0; ch < c; ++ch) mean[static_cast<size_t>(ch)] /= static_cast<double>(m);
        for (int r = 0; r < n; ++r) {
            if (!row_mask.empty() && !row_mask[static_cast<size_t>(r)]) continue;
            for (int ch = 0; ch < c; ++ch) {
                const double d = static_cast<double>(x.data()[static_cast<size_t>(r) * c + ch]) - mean[static_cast<size_t>(ch)];
                var[static_cast<size_t>(ch)] += d * d;
            }
        }
        for (int ch = 0; ch < c; ++ch) var[static_cast<size_t>(ch)] /= static_cast<double>(m);
        for (int ch = 0; ch < c; ++ch) {
            state.running_mean[static_cast<size_t>(ch)] = static_cast<float>(
                (1.0 - momentum) * state.running_mean[static_cast<size_t>(ch)] + momentum * mean[static_cast<size_t>(ch)]);
            state.running_var[static_cast<size_t>(ch)] = static_cast<float>(
                (1.0 - momentum) * state.running_var[static_cast<size_t>(ch)] + momentum * var[static_cast<size_t>(ch)]);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = state.running_mean[static_cast<size_t>(ch)];
            var[static_cast<size_t>(ch)] = state.running_var[static_cast<size_t>(ch)];
        }
        m = n;
    }

    std::vector<S> istd(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch)
        istd[static_cast<size_t>(ch)] = static_cast<S>(1.0 / std::sqrt(var[static_cast<size_t>(ch)] + eps));

    std::vector<S> out(x.data().size());
    std::vector<S> xhat(x.data().size());
    for (int r = 0; r < n; ++r)
        for (int ch = 0; ch < c; ++ch) {
            const size_t i = static_cast<size_t>(r) * c + ch;
            const S xh = static_cast<S>((static_cast<double>(x.data()[i]) - mean[static_cast<size_t>(ch)]) *
                                        static_cast<double>(istd[static_cast<size_t>(ch)]));
            xhat[i] = xh;
            out[i] = xh * gamma.data()[static_cast<size_t>(ch)] + beta.data()[static_cast<size_t>(ch)];
        }

    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    auto xhat_c = std::make_shared<std::vector<S>>(std::move(xhat));
    auto istd_c = std::make_shared<std::vector<S>>(std::move(istd));
    const std::vector<uint8_t> mask_c = row_mask;
    const int64_t m_c = m;
    const bool training_c = training;
    const int n_c = n, c_c = c;
    return make_node<S>(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [px, pg, pb, xhat_c, istd_c, mask_c, m_c, training_c, n_c, c_c](TensorNodeT<S> &self) {
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (int r = 0; r < n_c; ++r)
                    for (int ch = 0; ch < c_c; ++ch)
                        pg->grad[static_cast<size_t>(ch)] +=
                            self.grad[static_cast<size_t>(r) * c_c + ch] * (*xhat_c)[static_cast<size_t>(r) * c_c + ch];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int r = 0; r < n_c; ++r)
                    for (int ch = 0; ch < c_c; ++ch)
                        pb->grad[static_cast<size_t>(ch)] += self.grad[static_cast<size_t>(r) * c_c + ch];
            }
            if (!px->requires_grad) return;
            px->ensure_grad();
            if (!training_c) {
                for (int r = 0; r < n_c; ++r)
                    for (int ch = 0; ch < c_c; ++ch)
                        px->grad[static_cast<size_t>(r) * c_c + ch] +=
                            self.grad[static_cast<size_t>(r) * c_c + ch] *
                            pg->value[static_cast<size_t>(ch)] * (*istd_c)[static_cast<size_t>(ch)];
                return;
            }
            // training mode: batch statistics were computed over the valid rows,
            // every row was normalized with them
            std::vector<double> s1(static_cast<size_t>(c_c)), s2(static_cast<size_t>(c_c));
            for (int r = 0; r < n_c; ++r)
                for (int ch = 0; ch < c_c; ++ch) {
                    const double g = static_cast<double>(self.grad[static_cast<size_t>(r) * c_c + ch]) *
                                     static_cast<double>(pg->value[static_cast<size_t>(ch)]);
                    s1[static_cast<size_t>(ch)] += g;
                    s2[static_cast<size_t>(ch)] += g * static_cast<double>((*xhat_c)[static_cast<size_t>(r) * c_c + ch]);
                }
            for (int r = 0; r < n_c; ++r) {
                const bool valid = mask_c.empty() || mask_c[static_cast<size_t>(r)];
                for (int ch = 0; ch < c_c; ++ch) {
                    const size_t i = static_cast<size_t>(r) * c_c + ch;
                    const double g = static_cast<double>(self.grad[i]) *
                                     static_cast<double>(pg->value[static_cast<size_t>(ch)]);
                    double dx = g;
                    if (valid)
                        dx -= (s1[static_cast<size_t>(ch)] +
                               static_cast<double>((*xhat_c)[i]) * s2[static_cast<size_t>(ch)]) /
                              static_cast<double>(m_c);
                    px->grad[i] += static_cast<S>(dx * static_cast<double>((*istd_c)[static_cast<size_t>(ch)]));
                }
            }
        });
}

template <class S>
TensorT<S> mean_axis(const TensorT<S> &x, int axis) {
    const int nd = x.ndim();
    check(axis >= 0 && axis < nd, "op 'mean_axis': bad axis ", axis, " for ", shape_str(x.shape()));
    const int len = x.dim(axis);
    check(len > 0, "op 'mean_axis': empty axis");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
    Shape out_shape;
    for (int i = 0; i < nd; ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape = {1};
    std::vector<S> out(static_cast<size_t>(outer * inner), S(0));
    const auto &xd = x.data();
    double cache = std::numeric_limits<double>::quiet_NaN();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (int l = 0; l < len; ++l)
                acc += static_cast<double>(xd[static_cast<size_t>((o * len + l) * inner + i)]);
            acc /= len;
            out[static_cast<size_t>(o * inner + i)] = static_cast<S>(acc);
            if (outer * inner == 1) cache = acc;
        }
    auto px = x.node();
    const int64_t outer_c = outer, inner_c = inner;
    const int len_c = len;
    return make_node<S>(
        "mean_axis", std::move(out_shape), std::move(out), {x},
        [px, outer_c, inner_c, len_c](TensorNodeT<S> &self) {
            px->ensure_grad();
            const S inv = S(1) / static_cast<S>(len_c);
            for (int64_t o = 0; o < outer_c; ++o)
                for (int64_t i = 0; i < inner_c; ++i) {
                    const S g = self.grad[static_cast<size_t>(o * inner_c + i)] * inv;
                    for (int l = 0; l < len_c; ++l)
                        px->grad[static_cast<size_t>((o * len_c + l) * inner_c + i)] += g;
                }
        },
        cache);
}

template <class S>
TensorT<S> sum_all(const TensorT<S> &x) {
    double acc = 0.0;
    for (const S v : x.data()) acc += static_cast<double>(v);
    auto px = x.node();
    return make_node<S>(
        "sum_all", {1}, {static_cast<S>(acc)}, {x},
        [px](TensorNodeT<S> &self) {
            px->ensure_grad();
            const S g = self.grad[0];
            for (auto &gv : px->grad) gv += g;
        },
        acc);
}

template <class S>
TensorT<S> masked_mean_time(const TensorT<S> &x, const std::vector<int> &lens) {
    check(x.ndim() == 3, "op 'masked_mean_time': expected [B x T x d], got ", shape_str(x.shape()));
    const int b = x.dim(0), t = x.dim(1), d = x.dim(2);
    check(static_cast<int>(lens.size()) == b, "op 'masked_mean_time': lens size mismatch");
    for (int i = 0; i < b; ++i)
        check(lens[static_cast<size_t>(i)] >= 1 && lens[static_cast<size_t>(i)] <= t,
              "op 'masked_mean_time': valid length ", lens[static_cast<size_t>(i)],
              " out of range [1, ", t, "]");
    std::vector<S> out(static_cast<size_t>(b) * d);
    const auto &xd = x.data();
    for (int bi = 0; bi < b; ++bi)
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int ti = 0; ti < lens[static_cast<size_t>(bi)]; ++ti)
                acc += static_cast<double>(xd[(static_cast<size_t>(bi) * t + ti) * d + c]);
            out[static_cast<size_t>(bi) * d + c] = static_cast<S>(acc / lens[static_cast<size_t>(bi)]);
        }
    auto px = x.node();
    const std::vector<int> lens_c = lens;
    const int t_c = t, d_c = d, b_c = b;
    return make_node<S>("masked_mean_time", {b, d}, std::move(out), {x},
                        [px, lens_c, b_c, t_c, d_c](TensorNodeT<S> &self) {
                            px->ensure_grad();
                            for (int bi = 0; bi < b_c; ++bi) {
                                const S inv = S(1) / static_cast<S>(lens_c[static_cast<size_t>(bi)]);
                                for (int c = 0; c < d_c; ++c) {
                                    const S g = self.grad[static_cast<size_t>(bi) * d_c + c] * inv;
                                    for (int ti = 0; ti < lens_c[static_cast<size_t>(bi)]; ++ti)
                                        px->grad[(static_cast<size_t>(bi) * t_c + ti) * d_c + c] += g;
                                }
                            }
                        });
}

template <class S>
TensorT<S> cross_entropy(const TensorT<S> &logits, const std::vector<int> &targets) {
    check(logits.ndim() == 2, "op 'cross_entropy': expected [N x V], got ",
          shape_str(logits.shape()));
    const int n = logits.dim(0), v = logits.dim(1);
    check(static_cast<int>(targets.size()) == n, "op 'cross_entropy': ", targets.size(),
          " targets for ", n, " rows");
    int valid = 0;
    double loss = 0.0;
    const auto &xd = logits.data();
    for (int r = 0; r < n; ++r) {
        const int y = targets[static_cast<size_t>(r)];
        if (y < 0) continue;
        check(y < v, "op 'cross_entropy': target ", y, " out of range for ", v, " classes");
        ++valid;
        const S *row = xd.data() + static_cast<int64_t>(r) * v;
        S mx = row[0];
        for (int c = 1; c < v; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int c = 0; c < v; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
        loss += static_cast<double>(mx) + std::log(sum) - static_cast<double>(row[y]);
    }
    check(valid > 0, "op 'cross_entropy': all positions are padding");
    loss /= valid;
    auto px = logits.node();
    const std::vector<int> targets_c = targets;
    const int n_c = n, v_c = v, valid_c = valid;
    return make_node<S>(
        "cross_entropy", {1}, {static_cast<S>(loss)}, {logits},
        [px, targets_c, n_c, v_c, valid_c](TensorNodeT<S> &self) {
            px->ensure_grad();
            const double g = static_cast<double>(self.grad[0]) / valid_c;
            for (int r = 0; r < n_c; ++r) {
                const int y = targets_c[static_cast<size_t>(r)];
                if (y < 0) continue;
                const S *row = px->value.data() + static_cast<int64_t>(r) * v_c;
                S mx = row[0];
                for (int c = 1; c < v_c; ++c) mx = std::max(mx, row[c]);
                double sum = 0.0;
                for (int c = 0; c < v_c; ++c) sum += std::exp(static_cast<double>(row[c] - mx));
                for (int c = 0; c < v_c; ++c) {
                    double p = std::exp(static_cast<double>(row[c] - mx)) / sum;
                    if (c == y) p -= 1.0;
                    px->grad[static_cast<size_t>(static_cast<int64_t>(r) * v_c + c)] +=
                        static_cast<S>(g * p);
                }
            }
        },
        loss);
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S> &a, const TensorT<S> &b) {
    check(a.ndim() == 2 && b.ndim() == 2, "op 'matmul': expected 2-D inputs, got ",
          shape_str(a.shape()), " and ", shape_str(b.shape()));
    check(a.dim(1) == b.dim(0), "op 'matmul': inner dims differ, ", shape_str(a.shape()), " vs ",
          shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(static_cast<size_t>(m) * n);
    kernels::matmul_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_node<S>("matmul", {m, n}, std::move(out), {a, b},
                        [pa, pb, m, k, n](TensorNodeT<S> &self) {
                            if (pa->requires_grad) {
                                pa->ensure_grad();
                                // dA = G . B^T
                                kernels::matmul_nt(self.grad.data(), pb->value.data(),
                                                   pa->grad.data(), m, n, k, true);
                            }
                            if (pb->requires_grad) {
                                pb->ensure_grad();
                                // dB = A^T . G
                                kernels::matmul_tn(pa->value.data(), self.grad.data(),
                                                   pb->grad.data(), k, m, n, true);
                            }
                        });
}

template <class S>
TensorT<S> bmm(const TensorT<S> &a, const TensorT<S> &b) {
    check(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "op 'bmm': shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<S> out(static_cast<size_t>(bs) * m * n);
    for (int i = 0; i < bs; ++i)
        kernels::matmul_nn(a.data().data() + static_cast<int64_t>(i) * m * k,
                           b.data().data() + static_cast<int64_t>(i) * k * n,
                           out.data() + static_cast<int64_t>(i) * m * n, m, k, n);
    auto pa = a.node(), pb = b.node();
    return make_node<S>("bmm", {bs, m, n}, std::move(out), {a, b},
                        [pa, pb, bs, m, k, n](TensorNodeT<S> &self) {
                            for (int i = 0; i < bs; ++i) {
                                const S *g = self.grad.data() + static_cast<int64_t>(i) * m * n;
                                if (pa->requires_grad) {
                                    pa->ensure_grad();
                                    kernels::matmul_nt(g, pb->value.data() + static_cast<int64_t>(i) * k * n,
                                                       pa->grad.data() + static_cast<int64_t>(i) * m * k,
                                                       m, n, k, true);
                                }
                                if (pb->requires_grad) {
                                    pb->ensure_grad();
                                    kernels::matmul_tn(pa->value.data() + static_cast<int64_t>(i) * m * k, g,
                                                       pb->grad.data() + static_cast<int64_t>(i) * k * n,
                                                       k, m, n, true);
                                }
                            }
                        });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> conv2d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias, int stride) {
    check(x.ndim() == 4 && w.ndim() == 4, "op 'conv2d': expected 4-D input and weight, got ",
          shape_str(x.shape()), " and ", shape_str(w.shape()));
    check(x.dim(1) == w.dim(1), "op 'conv2d': channel mismatch ", shape_str(x.shape()), " vs ",
          shape_str(w.shape()));
    const int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(bias.ndim() == 1 && bias.dim(0) == co, "op 'conv2d': bias must be [", co, "]");
    check(h >= kh && wd >= kw, "op 'conv2d': input ", shape_str(x.shape()),
          " smaller than kernel ", shape_str(w.shape()));
    const int ho = (h - kh) / stride + 1, wo = (wd - kw) / stride + 1;
    std::vector<S> out(static_cast<size_t>(b) * co * ho * wo);
    kernels::conv2d_forward(x.data().data(), w.data().data(), bias.data().data(), out.data(), b,
                            ci, h, wd, co, kh, kw, stride);
    auto px = x.node(), pw = w.node(), pb = bias.node();
    return make_node<S>(
        "conv2d", {b, co, ho, wo}, std::move(out), {x, w, bias},
        [px, pw, pb, b, ci, h, wd, co, kh, kw, stride](TensorNodeT<S> &self) {
            px->ensure_grad();
            pw->ensure_grad();
            pb->ensure_grad();
            kernels::conv2d_backward(px->value.data(), pw->value.data(), self.grad.data(),
                                     px->grad.data(), pw->grad.data(), pb->grad.data(), b, ci, h,
                                     wd, co, kh, kw, stride);
        });
}

template <class S>
TensorT<S> depthwise_conv1d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias) {
    check(x.ndim() == 3, "op 'depthwise_conv1d': expected [B x T x C], got ", shape_str(x.shape()));
    const int b = x.dim(0), t = x.dim(1), c = x.dim(2);
    check(w.ndim() == 2 && w.dim(0) == c, "op 'depthwise_conv1d': weight must be [", c,
          " x k], got ", shape_str(w.shape()));
    const int k = w.dim(1);
    check(k % 2 == 1, "op 'depthwise_conv1d': kernel must be odd, got ", k);
    check(bias.ndim() == 1 && bias.dim(0) == c, "op 'depthwise_conv1d': bias must be [", c, "]");
    std::vector<S> out(x.data().size());
    kernels::dwconv1d_forward(x.data().data(), w.data().data(), bias.data().data(), out.data(), b,
                              t, c, k);
    auto px = x.node(), pw = w.node(), pb = bias.node();
    return make_node<S>("depthwise_conv1d", x.shape(), std::move(out), {x, w, bias},
                        [px, pw, pb, b, t, c, k](TensorNodeT<S> &self) {
                            px->ensure_grad();
                            pw->ensure_grad();
                            pb->ensure_grad();
                            kernels::dwconv1d_backward(px->value.data(), pw->value.data(),
                                                       self.grad.data(), px->grad.data(),
                                                       pw->grad.data(), pb->grad.data(), b, t, c, k);
                        });
}

template <class S>
TensorT<S> pointwise_conv1d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias) {
    check(x.ndim() == 3, "op 'pointwise_conv1d': expected [B x T x C], got ", shape_str(x.shape()));
    const int b = x.dim(0), t = x.dim(1), ci = x.dim(2);
    check(w.ndim() == 2 && w.dim(0) == ci, "op 'pointwise_conv1d': weight must be [", ci,
          " x Cout], got ", shape_str(w.shape()));
    const int co = w.dim(1);
    auto flat = reshape(x, {b * t, ci});
    auto y = add_bias(matmul(flat, w), bias);
    return reshape(y, {b, t, co});
}

// ---------------------------------------------------------------------------
// instantiations
// ---------------------------------------------------------------------------

#define KOEL_INSTANTIATE_TENSOR(S)                                                                  \
    template struct TensorNodeT<S>;                                                                 \
    template class TensorT<S>;                                                                      \
    template TensorT<S> make_node<S>(const char *, Shape, std::vector<S>, std::vector<TensorT<S>>,  \
                                     std::function<void(TensorNodeT<S> &)>, double);                \
    template TensorT<S> matmul<S>(const TensorT<S> &, const TensorT<S> &);                          \
    template TensorT<S> bmm<S>(const TensorT<S> &, const TensorT<S> &);                             \
    template TensorT<S> add<S>(const TensorT<S> &, const TensorT<S> &);                             \
    template TensorT<S> sub<S>(const TensorT<S> &, const TensorT<S> &);                             \
    template TensorT<S> mul<S>(const TensorT<S> &, const TensorT<S> &);                             \
    template TensorT<S> scale<S>(const TensorT<S> &, double);                                       \
    template TensorT<S> add_bias<S>(const TensorT<S> &, const TensorT<S> &);                        \
    template TensorT<S> reshape<S>(const TensorT<S> &, Shape);                                      \
    template TensorT<S> permute<S>(const TensorT<S> &, const std::vector<int> &);                   \
    template TensorT<S> transpose<S>(const TensorT<S> &, int, int);                                 \
    template TensorT<S> concat<S>(const std::vector<TensorT<S>> &, int);                            \
    template TensorT<S> slice<S>(const TensorT<S> &, int, int, int);                                \
    template TensorT<S> embedding<S>(const TensorT<S> &, const std::vector<int> &);                 \
    template TensorT<S> softmax<S>(const TensorT<S> &);                                             \
    template TensorT<S> log_softmax<S>(const TensorT<S> &);                                         \
    template TensorT<S> logsumexp<S>(const TensorT<S> &);                                           \
    template TensorT<S> layer_norm<S>(const TensorT<S> &, const TensorT<S> &, const TensorT<S> &,   \
                                      double);                                                      \
    template TensorT<S> batch_norm<S>(const TensorT<S> &, const TensorT<S> &, const TensorT<S> &,   \
                                      BatchNormState &, const std::vector<uint8_t> &, bool, double, \
                                      double);                                                      \
    template TensorT<S> conv2d<S>(const TensorT<S> &, const TensorT<S> &, const TensorT<S> &, int); \
    template TensorT<S> depthwise_conv1d<S>(const TensorT<S> &, const TensorT<S> &,                 \
                                            const TensorT<S> &);                                    \
    template TensorT<S> pointwise_conv1d<S>(const TensorT<S> &, const TensorT<S> &,                 \
                                            const TensorT<S> &);                                    \
    template TensorT<S> glu<S>(const TensorT<S> &);                                                 \
    template TensorT<S> swish<S>(const TensorT<S> &);                                               \
    template TensorT<S> relu<S>(const TensorT<S> &);                                                \
    template TensorT<S> sigmoid<S>(const TensorT<S> &);                                             \
    template TensorT<S> dropout<S>(const TensorT<S> &, double, Rng &, bool);                        \
    template TensorT<S> masked_fill<S>(const TensorT<S> &, const TensorT<S> &, double);             \
    template TensorT<S> mean_axis<S>(const TensorT<S> &, int);                                      \
    template TensorT<S> sum_all<S>(const TensorT<S> &);                                             \
    template TensorT<S> masked_mean_time<S>(const TensorT<S> &, const std::vector<int> &);          \
    template TensorT<S> cross_entropy<S>(const TensorT<S> &, const std::vector<int> &);

KOEL_INSTANTIATE_TENSOR(float)
KOEL_INSTANTIATE_TENSOR(double)
#undef KOEL_INSTANTIATE_TENSOR

} // namespace koel
