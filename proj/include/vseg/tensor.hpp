#pragma once

#include <array>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace vseg {

// Dense 5-axis array, layout (N, C, D, H, W) with W fastest.
template <typename T>
struct Tensor {
    std::array<int, 5> shape{0, 0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n, int c, int d, int h, int w)
        : shape{n, c, d, h, w},
          data(static_cast<std::size_t>(n) * c * d * h * w, T(0)) {}

    static Tensor zeros_like(const Tensor& o) {
        Tensor t;
        t.shape = o.shape;
        t.data.assign(o.data.size(), T(0));
        return t;
    }

    std::size_t size() const { return data.size(); }
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int d() const { return shape[2]; }
    int h() const { return shape[3]; }
    int w() const { return shape[4]; }

    std::size_t index(int n_, int c_, int d_, int h_, int w_) const {
        return (((static_cast<std::size_t>(n_) * shape[1] + c_) * shape[2] + d_) * shape[3] + h_) *
                   shape[4] +
               w_;
    }
    T& at(int n_, int c_, int d_, int h_, int w_) { return data[index(n_, c_, d_, h_, w_)]; }
    const T& at(int n_, int c_, int d_, int h_, int w_) const {
        return data[index(n_, c_, d_, h_, w_)];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }
};

// Learnable parameter with gradient and momentum buffers, all shape-matched.
template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> momentum;

    Param() = default;
    explicit Param(Tensor<T> v)
        : value(std::move(v)), grad(Tensor<T>::zeros_like(value)),
          momentum(Tensor<T>::zeros_like(value)) {}

    void zero_grad() { grad.fill(T(0)); }
    std::size_t size() const { return value.size(); }
};

}  // namespace vseg
