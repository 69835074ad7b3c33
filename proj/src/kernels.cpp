#include "laneshift/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace laneshift {

namespace {
std::atomic<bool> g_parallel{true};
std::atomic<int> g_threads{0};
}  // namespace

void set_parallel_enabled(bool on) { g_parallel = on; }
bool parallel_enabled() { return g_parallel; }
void set_num_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}
int effective_threads() {
#ifdef _OPENMP
    return g_parallel ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

namespace kernels {

static void check_conv_shapes(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    if (x.dim(0) != w.dim(1))
        throw std::invalid_argument("conv2d: input channels " + shape_str(x.shape) +
                                    " vs weight " + shape_str(w.shape));
    if (b.dim(0) != w.dim(0)) throw std::invalid_argument("conv2d: bias mismatch");
}

static inline double conv_out_at(const Tensor& x, const Tensor& w, const Tensor& b,
                                 int stride, int pad, int co, int oy, int ox) {
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int kh = w.dim(2), kw = w.dim(3);
    // valid kernel window (same term order as the naive bounds-checked loop)
    const int y_base = oy * stride - pad;
    const int x_base = ox * stride - pad;
    const int ky0 = y_base < 0 ? -y_base : 0;
    const int ky1 = std::min(kh, H - y_base);
    const int kx0 = x_base < 0 ? -x_base : 0;
    const int kx1 = std::min(kw, W - x_base);
    const double* wc = &w.v[static_cast<size_t>(co) * Ci * kh * kw];
    const double* xd = x.v.data();
    double acc = b[co];
    for (int ci = 0; ci < Ci; ++ci) {
        const double* xc = xd + static_cast<size_t>(ci) * H * W;
        const double* wk = wc + static_cast<size_t>(ci) * kh * kw;
        for (int ky = ky0; ky < ky1; ++ky) {
            const double* xrow = xc + static_cast<size_t>(y_base + ky) * W + x_base;
            const double* wrow = wk + static_cast<size_t>(ky) * kw;
            for (int kx = kx0; kx < kx1; ++kx) acc += xrow[kx] * wrow[kx];
        }
    }
    return acc;
}

// One output row. Fast paths for the 3x3 and 1x1 kernels used by the models;
// every path accumulates terms in (ci, ky, kx) order, matching conv_out_at,
// so all variants stay bitwise-identical.
static void conv_row(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                     int pad, int co, int oy, int Wo, double* yrow) {
    const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int kh = w.dim(2), kw = w.dim(3);
    if (kh == 3 && kw == 3) {
        const int y_base = oy * stride - pad;
        const int ky0 = y_base < 0 ? -y_base : 0;
        const int ky1 = std::min(3, H - y_base);
        // interior columns: all three kx taps in bounds
        const int ox_lo = std::min(Wo, pad > 0 ? (pad + stride - 1) / stride : 0);
        const int ox_hi = std::max(ox_lo, std::min(Wo, (W - 3 + pad) / stride + 1));
        for (int ox = 0; ox < ox_lo; ++ox)
            yrow[ox] = conv_out_at(x, w, b, stride, pad, co, oy, ox);
        const double* xd = x.v.data();
        const double* wc = &w.v[static_cast<size_t>(co) * Ci * 9];
        for (int ox = ox_lo; ox < ox_hi; ++ox) {
            const int x_base = ox * stride - pad;
            double acc = b[co];
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xc = xd + static_cast<size_t>(ci) * H * W + x_base;
                const double* wk = wc + static_cast<size_t>(ci) * 9;
                for (int ky = ky0; ky < ky1; ++ky) {
                    const double* xr = xc + static_cast<size_t>(y_base + ky) * W;
                    const double* wr = wk + ky * 3;
                    acc += xr[0] * wr[0];
                    acc += xr[1] * wr[1];
                    acc += xr[2] * wr[2];
                }
            }
            yrow[ox] = acc;
        }
        for (int ox = ox_hi; ox < Wo; ++ox)
            yrow[ox] = conv_out_at(x, w, b, stride, pad, co, oy, ox);
        return;
    }
    if (kh == 1 && kw == 1 && pad == 0) {
        const int iy = oy * stride;
        const double* xd = x.v.data();
        const double* wc = &w.v[static_cast<size_t>(co) * Ci];
        for (int ox = 0; ox < Wo; ++ox) yrow[ox] = b[co];
        for (int ci = 0; ci < Ci; ++ci) {
            const double* xr = xd + (static_cast<size_t>(ci) * H + iy) * W;
            const double wv = wc[ci];
            for (int ox = 0; ox < Wo; ++ox) yrow[ox] += wv * xr[ox * stride];
        }
        return;
    }
    for (int ox = 0; ox < Wo; ++ox)
        yrow[ox] = conv_out_at(x, w, b, stride, pad, co, oy, ox);
}

Tensor conv2d_serial(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride, int pad) {
    check_conv_shapes(x, w, b);
    const int Co = w.dim(0);
    const int Ho = (x.dim(1) + 2 * pad - w.dim(2)) / stride + 1;
    const int Wo = (x.dim(2) + 2 * pad - w.dim(3)) / stride + 1;
    Tensor y({Co, Ho, Wo});
    for (int co = 0; co < Co; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            conv_row(x, w, b, stride, pad, co, oy, Wo,
                     &y.v[(static_cast<size_t>(co) * Ho + oy) * Wo]);
    return y;
}

Tensor conv2d_parallel(const Tensor& x, const Tensor& w, const Tensor& b,
                       int stride, int pad) {
    check_conv_shapes(x, w, b);
    const int Co = w.dim(0);
    const int Ho = (x.dim(1) + 2 * pad - w.dim(2)) / stride + 1;
    const int Wo = (x.dim(2) + 2 * pad - w.dim(3)) / stride + 1;
    Tensor y({Co, Ho, Wo});
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Co; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            conv_row(x, w, b, stride, pad, co, oy, Wo,
                     &y.v[(static_cast<size_t>(co) * Ho + oy) * Wo]);
    return y;
}

static inline double grad_input_at(const Tensor& dy, const Tensor& w, int stride,
                                   int pad, int ci, int iy, int ix) {
    const int Co = dy.dim(0), Ho = dy.dim(1), Wo = dy.dim(2);
    const int Ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    // enumerate the (ky,kx) taps hitting (iy,ix) once, then sweep channels
    int kys[16], oys[16], nky = 0;
    for (int ky = 0; ky < kh; ++ky) {
        const int num_y = iy + pad - ky;
        if (num_y < 0 || num_y % stride) continue;
        const int oy = num_y / stride;
        if (oy >= Ho) continue;
        kys[nky] = ky;
        oys[nky] = oy;
        ++nky;
    }
    int kxs[16], oxs[16], nkx = 0;
    for (int kx = 0; kx < kw; ++kx) {
        const int num_x = ix + pad - kx;
        if (num_x < 0 || num_x % stride) continue;
        const int ox = num_x / stride;
        if (ox >= Wo) continue;
        kxs[nkx] = kx;
        oxs[nkx] = ox;
        ++nkx;
    }
    const double* dyd = dy.v.data();
    const double* wd = w.v.data();
    double acc = 0.0;
    for (int co = 0; co < Co; ++co) {
        const double* dyc = dyd + static_cast<size_t>(co) * Ho * Wo;
        const double* wc = wd + (static_cast<size_t>(co) * Ci + ci) * kh * kw;
        for (int a = 0; a < nky; ++a) {
            const double* dyrow = dyc + static_cast<size_t>(oys[a]) * Wo;
            const double* wrow = wc + static_cast<size_t>(kys[a]) * kw;
            for (int b = 0; b < nkx; ++b) acc += dyrow[oxs[b]] * wrow[kxs[b]];
        }
    }
    return acc;
}

static void check_grad_input_shapes(const Tensor& w) {
    if (w.dim(2) > 16 || w.dim(3) > 16)
        throw std::invalid_argument("conv2d_grad_input: kernel larger than 16x16");
}

Tensor conv2d_grad_input_serial(const Tensor& dy, const Tensor& w,
                                const std::vector<int>& x_shape, int stride, int pad) {
    check_grad_input_shapes(w);
    Tensor dx(x_shape);
    const int Ci = x_shape[0], H = x_shape[1], W = x_shape[2];
    for (int ci = 0; ci < Ci; ++ci)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix)
                dx.at3(ci, iy, ix) = grad_input_at(dy, w, stride, pad, ci, iy, ix);
    return dx;
}

Tensor conv2d_grad_input_parallel(const Tensor& dy, const Tensor& w,
                                  const std::vector<int>& x_shape, int stride, int pad) {
    check_grad_input_shapes(w);
    Tensor dx(x_shape);
    const int Ci = x_shape[0], H = x_shape[1], W = x_shape[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < Ci; ++ci)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix)
                dx.at3(ci, iy, ix) = grad_input_at(dy, w, stride, pad, ci, iy, ix);
    return dx;
}

static inline double grad_weight_at(const Tensor& dy, const Tensor& x, int stride,
                                    int pad, int co, int ci, int ky, int kx) {
    const int Ho = dy.dim(1), Wo = dy.dim(2);
    const int H = x.dim(1), W = x.dim(2);
    // output range whose input taps stay in bounds (same term order as naive)
    const int dyv = ky - pad;
    const int dxv = kx - pad;
    const int oy0 = dyv < 0 ? (-dyv + stride - 1) / stride : 0;
    const int oy1 = std::min(Ho, dyv < H ? (H - dyv + stride - 1) / stride : 0);
    const int ox0 = dxv < 0 ? (-dxv + stride - 1) / stride : 0;
    const int ox1 = std::min(Wo, dxv < W ? (W - dxv + stride - 1) / stride : 0);
    const double* dyc = dy.v.data() + static_cast<size_t>(co) * Ho * Wo;
    const double* xc = x.v.data() + static_cast<size_t>(ci) * H * W;
    double acc = 0.0;
    for (int oy = oy0; oy < oy1; ++oy) {
        const double* dyrow = dyc + static_cast<size_t>(oy) * Wo;
        const double* xrow = xc + static_cast<size_t>(oy * stride + dyv) * W + dxv;
        for (int ox = ox0; ox < ox1; ++ox) acc += dyrow[ox] * xrow[ox * stride];
    }
    return acc;
}

Tensor conv2d_grad_weight_serial(const Tensor& dy, const Tensor& x,
                                 const std::vector<int>& w_shape, int stride, int pad) {
    Tensor dw(w_shape);
    const int Co = w_shape[0], Ci = w_shape[1], kh = w_shape[2], kw = w_shape[3];
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    dw.v[((static_cast<size_t>(co) * Ci + ci) * kh + ky) * kw + kx] =
                        grad_weight_at(dy, x, stride, pad, co, ci, ky, kx);
    return dw;
}

Tensor conv2d_grad_weight_parallel(const Tensor& dy, const Tensor& x,
                                   const std::vector<int>& w_shape, int stride, int pad) {
    Tensor dw(w_shape);
    const int Co = w_shape[0], Ci = w_shape[1], kh = w_shape[2], kw = w_shape[3];
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    dw.v[((static_cast<size_t>(co) * Ci + ci) * kh + ky) * kw + kx] =
                        grad_weight_at(dy, x, stride, pad, co, ci, ky, kx);
    return dw;
}

Tensor matvec_serial(const Tensor& A, const Tensor& v) {
    if (A.rank() != 2 || v.rank() != 1 || A.dim(1) != v.dim(0))
        throw std::invalid_argument("matvec: shape mismatch");
    const int m = A.dim(0), k = A.dim(1);
    Tensor y({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = &A.v[static_cast<size_t>(i) * k];
        for (int j = 0; j < k; ++j) acc += row[j] * v[j];
        y[i] = acc;
    }
    return y;
}

Tensor matvec_parallel(const Tensor& A, const Tensor& v) {
    if (A.rank() != 2 || v.rank() != 1 || A.dim(1) != v.dim(0))
        throw std::invalid_argument("matvec: shape mismatch");
    const int m = A.dim(0), k = A.dim(1);
    Tensor y({m});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = &A.v[static_cast<size_t>(i) * k];
        for (int j = 0; j < k; ++j) acc += row[j] * v[j];
        y[i] = acc;
    }
    return y;
}

Tensor matvec_t_serial(const Tensor& A, const Tensor& v) {
    if (A.rank() != 2 || v.rank() != 1 || A.dim(0) != v.dim(0))
        throw std::invalid_argument("matvec_t: shape mismatch");
    const int m = A.dim(0), k = A.dim(1);
    Tensor y({k});
    for (int j = 0; j < k; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += A.v[static_cast<size_t>(i) * k + j] * v[i];
        y[j] = acc;
    }
    return y;
}

Tensor matvec_t_parallel(const Tensor& A, const Tensor& v) {
    if (A.rank() != 2 || v.rank() != 1 || A.dim(0) != v.dim(0))
        throw std::invalid_argument("matvec_t: shape mismatch");
    const int m = A.dim(0), k = A.dim(1);
    Tensor y({k});
#pragma omp parallel for schedule(static)
    for (int j = 0; j < k; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += A.v[static_cast<size_t>(i) * k + j] * v[i];
        y[j] = acc;
    }
    return y;
}

}  // namespace kernels

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    return g_parallel ? kernels::conv2d_parallel(x, w, b, stride, pad)
                      : kernels::conv2d_serial(x, w, b, stride, pad);
}
Tensor conv2d_grad_input(const Tensor& dy, const Tensor& w,
                         const std::vector<int>& x_shape, int stride, int pad) {
    return g_parallel ? kernels::conv2d_grad_input_parallel(dy, w, x_shape, stride, pad)
                      : kernels::conv2d_grad_input_serial(dy, w, x_shape, stride, pad);
}
Tensor conv2d_grad_weight(const Tensor& dy, const Tensor& x,
                          const std::vector<int>& w_shape, int stride, int pad) {
    return g_parallel ? kernels::conv2d_grad_weight_parallel(dy, x, w_shape, stride, pad)
                      : kernels::conv2d_grad_weight_serial(dy, x, w_shape, stride, pad);
}
Tensor matvec(const Tensor& A, const Tensor& v) {
    return g_parallel ? kernels::matvec_parallel(A, v) : kernels::matvec_serial(A, v);
}
Tensor matvec_t(const Tensor& A, const Tensor& v) {
    return g_parallel ? kernels::matvec_t_parallel(A, v) : kernels::matvec_t_serial(A, v);
}

}  // namespace laneshift
