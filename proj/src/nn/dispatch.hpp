#pragma once

#include <cstdint>
#include <type_traits>

#include "kernels/kernels.hpp"
#include "kernels/reference.hpp"
#include "util/parallel.hpp"

namespace dk::nn::detail {

// float32 goes through the runtime-dispatched kernel table; float64 (the
// gradient-check mirror) always uses the scalar reference.

template <typename T>
void k_gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
            std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    if constexpr (std::is_same_v<T, float>) {
        kernels::ops().gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    } else {
        kernels::ref::gemm<T>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
    }
}

// GEMM split over output rows. Every element of C is still produced by one
// sequential dot product, so results do not depend on the thread count.
template <typename T>
void pgemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
           std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    const std::int64_t work = m * n * k;
    if constexpr (std::is_same_v<T, float>) {
        if (work >= (std::int64_t{1} << 20) && m >= 2 && util::max_threads() > 1) {
            util::parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
                const T* a_lo = ta ? a + lo : a + lo * lda;
                kernels::ops().gemm(ta, tb, hi - lo, n, k, alpha, a_lo, lda, b, ldb, beta,
                                    c + lo * ldc, ldc);
            });
            return;
        }
    }
    k_gemm<T>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void k_add(const T* a, const T* b, T* out, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().add(a, b, out, n);
    else kernels::ref::add<T>(a, b, out, n);
}

template <typename T>
void k_mul(const T* a, const T* b, T* out, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().mul(a, b, out, n);
    else kernels::ref::mul<T>(a, b, out, n);
}

template <typename T>
void k_axpy(T alpha, const T* x, T* y, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().axpy(alpha, x, y, n);
    else kernels::ref::axpy<T>(alpha, x, y, n);
}

template <typename T>
void k_scale(T alpha, const T* x, T* out, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().scale(alpha, x, out, n);
    else kernels::ref::scale<T>(alpha, x, out, n);
}

template <typename T>
void k_relu(const T* x, T* out, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().relu(x, out, n);
    else kernels::ref::relu<T>(x, out, n);
}

template <typename T>
void k_relu_backward(const T* x, const T* dy, T* dx, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().relu_backward(x, dy, dx, n);
    else kernels::ref::relu_backward<T>(x, dy, dx, n);
}

template <typename T>
double k_sum(const T* x, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) return kernels::ops().sum(x, n);
    else return kernels::ref::sum<T>(x, n);
}

template <typename T>
bool k_all_finite(const T* x, std::int64_t n) {
    if constexpr (std::is_same_v<T, float>) return kernels::ops().all_finite(x, n);
    else return kernels::ref::all_finite<T>(x, n);
}

template <typename T>
void k_affine_channel(const T* x, T* out, std::int64_t b, std::int64_t c, std::int64_t hw,
                      const T* s, const T* t) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().affine_channel(x, out, b, c, hw, s, t);
    else kernels::ref::affine_channel<T>(x, out, b, c, hw, s, t);
}

template <typename T>
void k_channel_sum_sumsq(const T* x, std::int64_t b, std::int64_t c, std::int64_t hw, double* s,
                         double* ss) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().channel_sum_sumsq(x, b, c, hw, s, ss);
    else kernels::ref::channel_sum_sumsq<T>(x, b, c, hw, s, ss);
}

template <typename T>
void k_channel_dot(const T* a, const T* b, std::int64_t bn, std::int64_t c, std::int64_t hw,
                   double* s) {
    if constexpr (std::is_same_v<T, float>) kernels::ops().channel_dot(a, b, bn, c, hw, s);
    else kernels::ref::channel_dot<T>(a, b, bn, c, hw, s);
}

}  // namespace dk::nn::detail
