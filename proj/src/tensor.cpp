#include "laneshift/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace laneshift {

bool Tensor::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

uint64_t tensor_hash(const Tensor& t, uint64_t seed) {
    uint64_t h = seed;
    auto mix = [&h](const unsigned char* p, size_t n) {
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (int d : t.shape) {
        uint32_t u = static_cast<uint32_t>(d);
        mix(reinterpret_cast<const unsigned char*>(&u), sizeof(u));
    }
    if (!t.v.empty())
        mix(reinterpret_cast<const unsigned char*>(t.v.data()),
            t.v.size() * sizeof(double));
    return h;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace laneshift
