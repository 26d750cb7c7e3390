#pragma once

#include <cassert>
#include <cstddef>
#include <numeric>
#include <random>
#include <vector>

namespace meds::nn {

// Dense row-major tensor. Shapes follow the (N, C, [D,] H, W) convention.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel(shape), T(0));
    }
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
        v.assign(numel(shape), fill);
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }
    std::size_t numel() const { return v.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

using Rng = std::mt19937_64;

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, T mean, T stddev) {
    std::normal_distribution<double> dist(static_cast<double>(mean),
                                          static_cast<double>(stddev));
    for (auto& x : t.v) x = static_cast<T>(dist(rng));
}

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    for (auto& x : t.v) x = static_cast<T>(dist(rng));
}

} // namespace meds::nn
