#pragma once

#include <cmath>
#include <cstdint>

#include "nn/tensor.hpp"
#include "util/rng.hpp"

namespace dk::nn {

// He / fan-in variance scaling, the standard init for rectifier nets.
template <typename T>
void he_normal_fill(Tensor<T>& t, std::int64_t fan_in, util::Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void constant_fill(Tensor<T>& t, T value) {
    for (auto& v : t.values()) v = value;
}

}  // namespace dk::nn
