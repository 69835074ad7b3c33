#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace laneshift {

/// Dense row-major double tensor. Rank is dynamic; most of the code uses
/// rank 1 (vectors), 2 (matrices) and 3 (C,H,W feature maps).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(count(shape), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != static_cast<size_t>(count(shape)))
            throw std::invalid_argument("tensor data does not match shape");
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    // (c,h,w) indexing for rank-3 maps
    double& at3(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at3(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double& at2(int r, int c) { return v[static_cast<size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return v[static_cast<size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const;
};

/// FNV-1a over the raw tensor bytes; used for frozen-prefix checksums.
uint64_t tensor_hash(const Tensor& t, uint64_t seed = 1469598103934665603ull);

std::string shape_str(const std::vector<int>& s);

}  // namespace laneshift
