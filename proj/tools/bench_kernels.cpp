// Compares the serial reference kernels against the OpenMP versions and
// verifies that both produce bitwise-identical results.
#include <chrono>
#include <cstdio>
#include <random>

#include "laneshift/kernels.hpp"

using namespace laneshift;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    for (auto& v : t.v) v = (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 0.5;
    return t;
}

template <typename F>
double time_ms(F&& f, int reps) {
    // warmup
    f();
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) f();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool bitwise) {
    std::printf("%-22s serial %8.3f ms   openmp %8.3f ms   speedup %5.2fx   %s\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms,
                bitwise ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
    const int reps = 20;
    std::printf("threads: %d\n\n", effective_threads());

    {
        Tensor x = random_tensor({32, 64, 160}, 1);
        Tensor w = random_tensor({64, 32, 3, 3}, 2);
        Tensor b = random_tensor({64}, 3);
        Tensor ys, yp;
        const double ts = time_ms([&] { ys = kernels::conv2d_serial(x, w, b, 2, 1); }, reps);
        const double tp = time_ms([&] { yp = kernels::conv2d_parallel(x, w, b, 2, 1); }, reps);
        report("conv2d", ts, tp, tensor_hash(ys) == tensor_hash(yp));

        Tensor dys, dyp;
        const double gs = time_ms(
            [&] { dys = kernels::conv2d_grad_input_serial(ys, w, x.shape, 2, 1); }, reps);
        const double gp = time_ms(
            [&] { dyp = kernels::conv2d_grad_input_parallel(ys, w, x.shape, 2, 1); }, reps);
        report("conv2d_grad_input", gs, gp, tensor_hash(dys) == tensor_hash(dyp));

        Tensor dws, dwp;
        const double ws_ms = time_ms(
            [&] { dws = kernels::conv2d_grad_weight_serial(ys, x, w.shape, 2, 1); }, reps);
        const double wp_ms = time_ms(
            [&] { dwp = kernels::conv2d_grad_weight_parallel(ys, x, w.shape, 2, 1); }, reps);
        report("conv2d_grad_weight", ws_ms, wp_ms, tensor_hash(dws) == tensor_hash(dwp));
    }

    {
        Tensor A = random_tensor({2048, 2048}, 4);
        Tensor v = random_tensor({2048}, 5);
        Tensor ys, yp;
        const double ts = time_ms([&] { ys = kernels::matvec_serial(A, v); }, reps);
        const double tp = time_ms([&] { yp = kernels::matvec_parallel(A, v); }, reps);
        report("matvec", ts, tp, tensor_hash(ys) == tensor_hash(yp));

        Tensor u = random_tensor({2048}, 6);
        Tensor zs, zp;
        const double ss = time_ms([&] { zs = kernels::matvec_t_serial(A, u); }, reps);
        const double sp = time_ms([&] { zp = kernels::matvec_t_parallel(A, u); }, reps);
        report("matvec_t", ss, sp, tensor_hash(zs) == tensor_hash(zp));
    }
    return 0;
}
