#pragma once

#include <functional>
#include <memory>

#include "laneshift/tensor.hpp"

namespace laneshift {

/// Node of the dynamically-built computation graph. Graphs are rebuilt per
/// forward pass; backward() runs the tape in reverse topological order.
struct Node {
    Tensor val;
    Tensor grad;  // allocated on demand, same shape as val
    bool rg = false;  // requires grad (propagated from parents)
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> back;  // accumulates into parents' grads

    void ensure_grad() {
        if (grad.v.empty()) grad = Tensor(val.shape);
    }
};

using Var = std::shared_ptr<Node>;

Var make_leaf(Tensor t, bool requires_grad = false);
Var make_const(Tensor t);

/// Builds an op node; `back` reads n.grad and accumulates into the parents.
/// Custom ops (losses, stacking) are built with this directly.
Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> back);

/// Adds g into p's gradient buffer (allocating it if needed).
void accum_grad(const Var& p, const Tensor& g);

/// Runs reverse-mode accumulation from a scalar root. Seeds d(root)/d(root)=1.
void backward(const Var& root);

namespace ops {

Var conv(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var mul_const(const Var& x, const Tensor& c);  // elementwise, c fixed
Var reshape(const Var& x, std::vector<int> shape);
Var concat_vec(const Var& a, const Var& b);        // rank-1 tensors
Var upsample_nearest(const Var& x, int factor);    // [C,H,W]
Var global_avg_pool(const Var& x);                 // [C,H,W] -> [C]
Var linear(const Var& W, const Var& x, const Var& b);  // W:[m,n] x:[n] b:[m]
Var matvec_op(const Var& A, const Var& x);   // [m,k]x[k]->[m]
Var matvec_t_op(const Var& A, const Var& v); // [m,k],[m]->[k]
Var softmax_vec(const Var& x);
Var clamp(const Var& x, const Tensor& lo, const Tensor& hi);  // per-element bounds
Var l2_normalize_rows(const Var& x, double eps = 1e-12);      // [B,D]

/// Bilinear sampling of a [C,H,W] map at fixed (x,y) pixel locations
/// (border-clamped). Gradient flows to the map only; the sample locations
/// are treated as constants.
Var bilinear_pool(const Var& x, const std::vector<std::pair<double, double>>& pts_xy);

/// Weighted sum of scalar nodes.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& w);

}  // namespace ops

}  // namespace laneshift
