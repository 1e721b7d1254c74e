#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

// SGD with momentum, L2 weight decay and polynomial learning-rate decay.
struct OptimState {
    double base_lr = 0.01;
    double momentum_coef = 0.9;
    double weight_decay = 0.0005;
    double power = 0.9;
    std::int64_t max_iter = 80000;
    std::int64_t iter = 0;
};

// lr(iter) = base_lr * (1 - iter/max_iter)^power; 0 once training is complete.
inline double poly_lr(const OptimState& s) {
    if (s.iter >= s.max_iter) return 0.0;
    return s.base_lr * std::pow(1.0 - static_cast<double>(s.iter) / s.max_iter, s.power);
}

template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, OptimState& opt) {
    const T lr = static_cast<T>(poly_lr(opt));
    const T mu = static_cast<T>(opt.momentum_coef);
    const T wd = static_cast<T>(opt.weight_decay);
    for (Param<T>* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const T g = p->grad.data[i] + wd * p->value.data[i];
            T& v = p->momentum.data[i];
            v = mu * v - lr * g;
            p->value.data[i] += v;
        }
    }
    ++opt.iter;
}

}  // namespace vseg
