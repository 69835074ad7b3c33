#include "laneshift/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "laneshift/kernels.hpp"

namespace laneshift {

Var make_leaf(Tensor t, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->rg = requires_grad;
    return n;
}

Var make_const(Tensor t) { return make_leaf(std::move(t), false); }

Var make_op(Tensor val, std::vector<Var> parents,
            std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->rg) n->rg = true;
    if (n->rg) n->back = std::move(back);
    return n;
}

void backward(const Var& root) {
    if (root->val.size() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->rg && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        // nodes whose grad was never touched received zero upstream gradient
        if (n->rg && n->back && !n->grad.v.empty()) n->back(*n);
    }
}

void accum_grad(const Var& p, const Tensor& g) {
    p->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

namespace ops {

static void accum(const Var& p, const Tensor& g) { accum_grad(p, g); }

Var conv(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    Tensor y = conv2d(x->val, w->val, b->val, stride, pad);
    return make_op(std::move(y), {x, w, b}, [stride, pad](Node& n) {
        auto& x = n.parents[0];
        auto& w = n.parents[1];
        auto& b = n.parents[2];
        if (x->rg) accum(x, conv2d_grad_input(n.grad, w->val, x->val.shape, stride, pad));
        if (w->rg) accum(w, conv2d_grad_weight(n.grad, x->val, w->val.shape, stride, pad));
        if (b->rg) {
            b->ensure_grad();
            const int Co = n.val.dim(0);
            const int64_t hw = n.val.dim(1) * static_cast<int64_t>(n.val.dim(2));
            for (int co = 0; co < Co; ++co) {
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) acc += n.grad[co * hw + i];
                b->grad[co] += acc;
            }
        }
    });
}

Var relu(const Var& x) {
    Tensor y = x->val;
    for (auto& v : y.v) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(y), {x}, [](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.size(); ++i)
            if (x->val[i] > 0.0) x->grad[i] += n.grad[i];
    });
}

Var add(const Var& a, const Var& b) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument("add: shape mismatch");
    Tensor y = a->val;
    for (int64_t i = 0; i < y.size(); ++i) y[i] += b->val[i];
    return make_op(std::move(y), {a, b}, [](Node& n) {
        for (auto& p : n.parents)
            if (p->rg) accum(p, n.grad);
    });
}

Var scale(const Var& x, double s) {
    Tensor y = x->val;
    for (auto& v : y.v) v *= s;
    return make_op(std::move(y), {x}, [s](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.size(); ++i) x->grad[i] += s * n.grad[i];
    });
}

Var mul_const(const Var& x, const Tensor& c) {
    if (!x->val.same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor y = x->val;
    for (int64_t i = 0; i < y.size(); ++i) y[i] *= c[i];
    return make_op(std::move(y), {x}, [c](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.size(); ++i) x->grad[i] += c[i] * n.grad[i];
    });
}

Var reshape(const Var& x, std::vector<int> shape) {
    if (Tensor::count(shape) != x->val.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor y(shape, x->val.v);
    return make_op(std::move(y), {x}, [](Node& n) {
        accum(n.parents[0], Tensor(n.parents[0]->val.shape, n.grad.v));
    });
}

Var concat_vec(const Var& a, const Var& b) {
    if (a->val.rank() != 1 || b->val.rank() != 1)
        throw std::invalid_argument("concat_vec: rank-1 only");
    Tensor y({a->val.dim(0) + b->val.dim(0)});
    std::copy(a->val.v.begin(), a->val.v.end(), y.v.begin());
    std::copy(b->val.v.begin(), b->val.v.end(), y.v.begin() + a->val.size());
    return make_op(std::move(y), {a, b}, [](Node& n) {
        auto& a = n.parents[0];
        auto& b = n.parents[1];
        const int64_t na = a->val.size();
        if (a->rg) {
            a->ensure_grad();
            for (int64_t i = 0; i < na; ++i) a->grad[i] += n.grad[i];
        }
        if (b->rg) {
            b->ensure_grad();
            for (int64_t i = 0; i < b->val.size(); ++i) b->grad[i] += n.grad[na + i];
        }
    });
}

Var upsample_nearest(const Var& x, int factor) {
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor y({C, H * factor, W * factor});
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < H * factor; ++yy)
            for (int xx = 0; xx < W * factor; ++xx)
                y.at3(c, yy, xx) = x->val.at3(c, yy / factor, xx / factor);
    return make_op(std::move(y), {x}, [factor](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        const int C = n.val.dim(0), Hy = n.val.dim(1), Wy = n.val.dim(2);
        for (int c = 0; c < C; ++c)
            for (int yy = 0; yy < Hy; ++yy)
                for (int xx = 0; xx < Wy; ++xx)
                    x->grad.at3(c, yy / factor, xx / factor) += n.grad.at3(c, yy, xx);
    });
}

Var global_avg_pool(const Var& x) {
    const int C = x->val.dim(0);
    const int64_t hw = x->val.dim(1) * static_cast<int64_t>(x->val.dim(2));
    Tensor y({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += x->val[c * hw + i];
        y[c] = acc / static_cast<double>(hw);
    }
    return make_op(std::move(y), {x}, [hw](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        const int C = n.val.dim(0);
        for (int c = 0; c < C; ++c) {
            const double g = n.grad[c] / static_cast<double>(hw);
            for (int64_t i = 0; i < hw; ++i) x->grad[c * hw + i] += g;
        }
    });
}

Var matvec_op(const Var& A, const Var& x) {
    Tensor y = matvec(A->val, x->val);
    return make_op(std::move(y), {A, x}, [](Node& n) {
        auto& A = n.parents[0];
        auto& x = n.parents[1];
        const int m = A->val.dim(0), k = A->val.dim(1);
        if (A->rg) {
            A->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    A->grad.at2(i, j) += n.grad[i] * x->val[j];
        }
        if (x->rg) accum(x, matvec_t(A->val, n.grad));
    });
}

Var matvec_t_op(const Var& A, const Var& v) {
    Tensor y = matvec_t(A->val, v->val);
    return make_op(std::move(y), {A, v}, [](Node& n) {
        auto& A = n.parents[0];
        auto& v = n.parents[1];
        const int m = A->val.dim(0), k = A->val.dim(1);
        if (A->rg) {
            A->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j)
                    A->grad.at2(i, j) += v->val[i] * n.grad[j];
        }
        if (v->rg) accum(v, matvec(A->val, n.grad));
    });
}

Var linear(const Var& W, const Var& x, const Var& b) {
    Var y = matvec_op(W, x);
    return add(y, b);
}

Var softmax_vec(const Var& x) {
    const int n = x->val.dim(0);
    Tensor y({n});
    double mx = x->val[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x->val[i]);
    double Z = 0.0;
    for (int i = 0; i < n; ++i) {
        y[i] = std::exp(x->val[i] - mx);
        Z += y[i];
    }
    for (int i = 0; i < n; ++i) y[i] /= Z;
    return make_op(std::move(y), {x}, [](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        const int m = n.val.dim(0);
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += n.grad[i] * n.val[i];
        for (int i = 0; i < m; ++i) x->grad[i] += n.val[i] * (n.grad[i] - dot);
    });
}

Var clamp(const Var& x, const Tensor& lo, const Tensor& hi) {
    Tensor y = x->val;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(y[i], lo[i]), hi[i]);
    return make_op(std::move(y), {x}, [lo, hi](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        for (int64_t i = 0; i < n.grad.size(); ++i)
            if (x->val[i] > lo[i] && x->val[i] < hi[i]) x->grad[i] += n.grad[i];
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    const int B = x->val.dim(0), D = x->val.dim(1);
    Tensor y = x->val;
    std::vector<double> norms(B);
    for (int i = 0; i < B; ++i) {
        double s = 0.0;
        for (int j = 0; j < D; ++j) s += x->val.at2(i, j) * x->val.at2(i, j);
        norms[i] = std::sqrt(s) + eps;
        for (int j = 0; j < D; ++j) y.at2(i, j) /= norms[i];
    }
    return make_op(std::move(y), {x}, [norms](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        const int B = n.val.dim(0), D = n.val.dim(1);
        for (int i = 0; i < B; ++i) {
            double dot = 0.0;
            for (int j = 0; j < D; ++j) dot += n.grad.at2(i, j) * n.val.at2(i, j);
            for (int j = 0; j < D; ++j)
                x->grad.at2(i, j) += (n.grad.at2(i, j) - dot * n.val.at2(i, j)) / norms[i];
        }
    });
}

Var bilinear_pool(const Var& x, const std::vector<std::pair<double, double>>& pts_xy) {
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    const int P = static_cast<int>(pts_xy.size());
    // corner coefficients reused in backward
    struct Corner { int y0, x0, y1, x1; double w00, w01, w10, w11; };
    auto corners = std::make_shared<std::vector<Corner>>(P);
    Tensor y({P, C});
    for (int p = 0; p < P; ++p) {
        double px = std::min(std::max(pts_xy[p].first, 0.0), static_cast<double>(W - 1));
        double py = std::min(std::max(pts_xy[p].second, 0.0), static_cast<double>(H - 1));
        int x0 = static_cast<int>(std::floor(px));
        int y0 = static_cast<int>(std::floor(py));
        int x1 = std::min(x0 + 1, W - 1);
        int y1 = std::min(y0 + 1, H - 1);
        double fx = px - x0, fy = py - y0;
        Corner c{y0, x0, y1, x1, (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        (*corners)[p] = c;
        for (int ch = 0; ch < C; ++ch)
            y.at2(p, ch) = c.w00 * x->val.at3(ch, y0, x0) + c.w01 * x->val.at3(ch, y0, x1) +
                           c.w10 * x->val.at3(ch, y1, x0) + c.w11 * x->val.at3(ch, y1, x1);
    }
    return make_op(std::move(y), {x}, [corners](Node& n) {
        auto& x = n.parents[0];
        x->ensure_grad();
        const int P = n.val.dim(0), C = n.val.dim(1);
        for (int p = 0; p < P; ++p) {
            const auto& c = (*corners)[p];
            for (int ch = 0; ch < C; ++ch) {
                const double g = n.grad.at2(p, ch);
                x->grad.at3(ch, c.y0, c.x0) += c.w00 * g;
                x->grad.at3(ch, c.y0, c.x1) += c.w01 * g;
                x->grad.at3(ch, c.y1, c.x0) += c.w10 * g;
                x->grad.at3(ch, c.y1, c.x1) += c.w11 * g;
            }
        }
    });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& w) {
    if (terms.size() != w.size() || terms.empty())
        throw std::invalid_argument("weighted_sum: size mismatch");
    Tensor y({1});
    for (size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->val.size() != 1)
            throw std::invalid_argument("weighted_sum: scalar terms only");
        y[0] += w[i] * terms[i]->val[0];
    }
    return make_op(std::move(y), terms, [w](Node& n) {
        for (size_t i = 0; i < n.parents.size(); ++i) {
            auto& p = n.parents[i];
            if (!p->rg) continue;
            p->ensure_grad();
            p->grad[0] += w[i] * n.grad[0];
        }
    });
}

}  // namespace ops
}  // namespace laneshift
