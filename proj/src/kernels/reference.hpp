#pragma once

#include <cmath>
#include <cstdint>

namespace dk::kernels::ref {

// Scalar reference kernels. These define the semantics every SIMD variant is
// equivalence-tested against, and they double as the float64 path used by the
// gradient-check suite. Keep them boring: plain loops, fixed accumulation
// order, no reassociation.

// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c,
          std::int64_t ldc) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
                const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            T out = alpha * acc;
            if (beta != T(0)) out += beta * c[i * ldc + j];
            c[i * ldc + j] = out;
        }
    }
}

template <typename T>
void add(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <typename T>
void scale(T alpha, const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <typename T>
void relu(const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

// dx += dy where x > 0
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) dx[i] += dy[i];
    }
}

template <typename T>
double sum(const T* x, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
    return acc;
}

template <typename T>
bool all_finite(const T* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

// out = x * scale[c] + shift[c], x laid out as [B, C, HW] contiguous.
template <typename T>
void affine_channel(const T* x, T* out, std::int64_t batch, std::int64_t channels, std::int64_t hw,
                    const T* ch_scale, const T* ch_shift) {
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const T s = ch_scale[c];
            const T t = ch_shift[c];
            const T* src = x + (b * channels + c) * hw;
            T* dst = out + (b * channels + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s + t;
        }
    }
}

// Per-channel sums and sums of squares over batch and spatial dims.
template <typename T>
void channel_sum_sumsq(const T* x, std::int64_t batch, std::int64_t channels, std::int64_t hw,
                       double* sums, double* sumsqs) {
    for (std::int64_t c = 0; c < channels; ++c) {
        sums[c] = 0.0;
        sumsqs[c] = 0.0;
    }
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* src = x + (b * channels + c) * hw;
            double s = 0.0;
            double ss = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double v = static_cast<double>(src[i]);
                s += v;
                ss += v * v;
            }
            sums[c] += s;
            sumsqs[c] += ss;
        }
    }
}

// Per-channel dot products: sums[c] += sum(a*b) over batch/spatial. Used by
// the batchnorm backward reductions.
template <typename T>
void channel_dot(const T* a, const T* b, std::int64_t batch, std::int64_t channels, std::int64_t hw,
                 double* sums) {
    for (std::int64_t c = 0; c < channels; ++c) sums[c] = 0.0;
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* pa = a + (bi * channels + c) * hw;
            const T* pb = b + (bi * channels + c) * hw;
            double s = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) s += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
            sums[c] += s;
        }
    }
}

// Adam update, elementwise. The exact operation sequence matters: the AVX2
// variant mirrors it step for step so both backends produce identical bytes.
template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, std::int64_t n, T lr, T beta1, T beta2, T eps,
               T bias1, T bias2) {
    for (std::int64_t i = 0; i < n; ++i) {
        const T gi = g[i];
        const T mi = beta1 * m[i] + (T(1) - beta1) * gi;
        const T vi = beta2 * v[i] + (T(1) - beta2) * (gi * gi);
        m[i] = mi;
        v[i] = vi;
        const T mhat = mi / bias1;
        const T vhat = vi / bias2;
        p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace dk::kernels::ref
