#pragma once

#include "laneshift/tensor.hpp"

namespace laneshift {

// The heavy inner loops exist in two forms: a plain serial reference and an
// OpenMP version parallelized over independent output elements. Both compute
// each output with the identical accumulation order, so results are bitwise
// equal regardless of thread count. The dispatch below picks the OpenMP path
// unless parallelism has been turned off.

void set_parallel_enabled(bool on);
bool parallel_enabled();
void set_num_threads(int n);  // 0 = OpenMP default
int effective_threads();

namespace kernels {

// x: [Ci,H,W], w: [Co,Ci,kh,kw], b: [Co] -> y: [Co,Ho,Wo]
Tensor conv2d_serial(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride, int pad);
Tensor conv2d_parallel(const Tensor& x, const Tensor& w, const Tensor& b,
                       int stride, int pad);

// gather-form gradients (deterministic under parallelism)
Tensor conv2d_grad_input_serial(const Tensor& dy, const Tensor& w,
                                const std::vector<int>& x_shape, int stride, int pad);
Tensor conv2d_grad_input_parallel(const Tensor& dy, const Tensor& w,
                                  const std::vector<int>& x_shape, int stride, int pad);
Tensor conv2d_grad_weight_serial(const Tensor& dy, const Tensor& x,
                                 const std::vector<int>& w_shape, int stride, int pad);
Tensor conv2d_grad_weight_parallel(const Tensor& dy, const Tensor& x,
                                   const std::vector<int>& w_shape, int stride, int pad);

// A: [m,k] times v: [k] -> [m]
Tensor matvec_serial(const Tensor& A, const Tensor& v);
Tensor matvec_parallel(const Tensor& A, const Tensor& v);
// A^T times v: A: [m,k], v: [m] -> [k]
Tensor matvec_t_serial(const Tensor& A, const Tensor& v);
Tensor matvec_t_parallel(const Tensor& A, const Tensor& v);

}  // namespace kernels

// dispatched entry points
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv2d_grad_input(const Tensor& dy, const Tensor& w,
                         const std::vector<int>& x_shape, int stride, int pad);
Tensor conv2d_grad_weight(const Tensor& dy, const Tensor& x,
                          const std::vector<int>& w_shape, int stride, int pad);
Tensor matvec(const Tensor& A, const Tensor& v);
Tensor matvec_t(const Tensor& A, const Tensor& v);

}  // namespace laneshift
