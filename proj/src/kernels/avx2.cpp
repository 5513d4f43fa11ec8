// AVX2 + FMA variants of the float32 kernels. Compiled with -mavx2 -mfma and
// only ever reached through the dispatch table after a runtime CPU check.
//
// Elementwise kernels (add, mul, axpy, scale, relu, affine_channel, adam_step)
// perform the same per-element operation sequence as the scalar reference and
// therefore match it bit for bit; the project builds with -ffp-contract=off so
// the scalar path cannot silently fuse either. GEMM and the reductions use
// FMA and lane-parallel accumulation, which reassociates: those are held to a
// relative tolerance by the equivalence tests instead.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "kernels/kernels.hpp"

namespace dk::kernels {
namespace {

void gemm_nn_core(std::int64_t m, std::int64_t n, std::int64_t k, float alpha, const float* a,
                  std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
                  std::int64_t ldc) {
    const std::int64_t n8 = n - (n % 8);
    const __m256 valpha = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    // 4x8 blocks: four broadcast rows of A against one 8-wide strip of B.
    for (; i + 4 <= m; i += 4) {
        const float* a0 = a + (i + 0) * lda;
        const float* a1 = a + (i + 1) * lda;
        const float* a2 = a + (i + 2) * lda;
        const float* a3 = a + (i + 3) * lda;
        for (std::int64_t j = 0; j < n8; j += 8) {
            __m256 acc0 = _mm256_setzero_ps();
            __m256 acc1 = _mm256_setzero_ps();
            __m256 acc2 = _mm256_setzero_ps();
            __m256 acc3 = _mm256_setzero_ps();
            const float* bp = b + j;
            for (std::int64_t p = 0; p < k; ++p) {
                const __m256 bv = _mm256_loadu_ps(bp + p * ldb);
                acc0 = _mm256_fmadd_ps(_mm256_set1_ps(a0[p]), bv, acc0);
                acc1 = _mm256_fmadd_ps(_mm256_set1_ps(a1[p]), bv, acc1);
                acc2 = _mm256_fmadd_ps(_mm256_set1_ps(a2[p]), bv, acc2);
                acc3 = _mm256_fmadd_ps(_mm256_set1_ps(a3[p]), bv, acc3);
            }
            float* c0 = c + (i + 0) * ldc + j;
            float* c1 = c + (i + 1) * ldc + j;
            float* c2 = c + (i + 2) * ldc + j;
            float* c3 = c + (i + 3) * ldc + j;
            if (beta == 0.0f) {
                _mm256_storeu_ps(c0, _mm256_mul_ps(valpha, acc0));
                _mm256_storeu_ps(c1, _mm256_mul_ps(valpha, acc1));
                _mm256_storeu_ps(c2, _mm256_mul_ps(valpha, acc2));
                _mm256_storeu_ps(c3, _mm256_mul_ps(valpha, acc3));
            } else {
                const __m256 vbeta = _mm256_set1_ps(beta);
                _mm256_storeu_ps(c0, _mm256_add_ps(_mm256_mul_ps(valpha, acc0), _mm256_mul_ps(vbeta, _mm256_loadu_ps(c0))));
                _mm256_storeu_ps(c1, _mm256_add_ps(_mm256_mul_ps(valpha, acc1), _mm256_mul_ps(vbeta, _mm256_loadu_ps(c1))));
                _mm256_storeu_ps(c2, _mm256_add_ps(_mm256_mul_ps(valpha, acc2), _mm256_mul_ps(vbeta, _mm256_loadu_ps(c2))));
                _mm256_storeu_ps(c3, _mm256_add_ps(_mm256_mul_ps(valpha, acc3), _mm256_mul_ps(vbeta, _mm256_loadu_ps(c3))));
            }
        }
    }
    // Leftover rows, 1x8.
    for (; i < m; ++i) {
        const float* ai = a + i * lda;
        for (std::int64_t j = 0; j < n8; j += 8) {
            __m256 acc = _mm256_setzero_ps();
            const float* bp = b + j;
            for (std::int64_t p = 0; p < k; ++p) {
                acc = _mm256_fmadd_ps(_mm256_set1_ps(ai[p]), _mm256_loadu_ps(bp + p * ldb), acc);
            }
            float* cp = c + i * ldc + j;
            if (beta == 0.0f) {
                _mm256_storeu_ps(cp, _mm256_mul_ps(valpha, acc));
            } else {
                _mm256_storeu_ps(cp, _mm256_add_ps(_mm256_mul_ps(valpha, acc),
                                                   _mm256_mul_ps(_mm256_set1_ps(beta), _mm256_loadu_ps(cp))));
            }
        }
    }
    // Leftover columns, scalar.
    if (n8 < n) {
        for (std::int64_t r = 0; r < m; ++r) {
            const float* ar = a + r * lda;
            for (std::int64_t j = n8; j < n; ++j) {
                float acc = 0.0f;
                for (std::int64_t p = 0; p < k; ++p) acc += ar[p] * b[p * ldb + j];
                float out = alpha * acc;
                if (beta != 0.0f) out += beta * c[r * ldc + j];
                c[r * ldc + j] = out;
            }
        }
    }
}

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
          std::int64_t ldc) {
    // Transposed operands are packed into contiguous row-major scratch so the
    // single NN core serves every flag combination.
    std::vector<float> a_pack;
    std::vector<float> b_pack;
    if (trans_a) {
        a_pack.resize(static_cast<std::size_t>(m * k));
        for (std::int64_t p = 0; p < k; ++p)
            for (std::int64_t i = 0; i < m; ++i) a_pack[static_cast<std::size_t>(i * k + p)] = a[p * lda + i];
        a = a_pack.data();
        lda = k;
    }
    if (trans_b) {
        b_pack.resize(static_cast<std::size_t>(k * n));
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t p = 0; p < k; ++p) b_pack[static_cast<std::size_t>(p * n + j)] = b[j * ldb + p];
        b = b_pack.data();
        ldb = n;
    }
    gemm_nn_core(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void add(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(float alpha, const float* x, float* y, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    // mul + add (not fmadd): keeps results identical to the scalar reference.
    for (; i + 8 <= n; i += 8) {
        const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void scale(float alpha, const float* x, float* out, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

void relu(const float* x, float* out, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* dy, float* dx, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 gated = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gated));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0f) dx[i] += dy[i];
    }
}

double sum(const float* x, std::int64_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
        acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
    }
    const __m256d acc = _mm256_add_pd(acc0, acc1);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < n; ++i) total += static_cast<double>(x[i]);
    return total;
}

bool all_finite(const float* x, std::int64_t n) {
    // A float is non-finite iff its exponent bits are all ones.
    const __m256i exp_mask = _mm256_set1_epi32(0x7f800000);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(x + i));
        const __m256i exp = _mm256_and_si256(bits, exp_mask);
        const __m256i bad = _mm256_cmpeq_epi32(exp, exp_mask);
        if (_mm256_movemask_epi8(bad) != 0) return false;
    }
    for (; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

void affine_channel(const float* x, float* out, std::int64_t batch, std::int64_t channels,
                    std::int64_t hw, const float* ch_scale, const float* ch_shift) {
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const __m256 vs = _mm256_set1_ps(ch_scale[c]);
            const __m256 vt = _mm256_set1_ps(ch_shift[c]);
            const float* src = x + (b * channels + c) * hw;
            float* dst = out + (b * channels + c) * hw;
            std::int64_t i = 0;
            for (; i + 8 <= hw; i += 8) {
                const __m256 prod = _mm256_mul_ps(_mm256_loadu_ps(src + i), vs);
                _mm256_storeu_ps(dst + i, _mm256_add_ps(prod, vt));
            }
            for (; i < hw; ++i) dst[i] = src[i] * ch_scale[c] + ch_shift[c];
        }
    }
}

void channel_sum_sumsq(const float* x, std::int64_t batch, std::int64_t channels, std::int64_t hw,
                       double* sums, double* sumsqs) {
    for (std::int64_t c = 0; c < channels; ++c) {
        sums[c] = 0.0;
        sumsqs[c] = 0.0;
    }
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const float* src = x + (b * channels + c) * hw;
            __m256d s0 = _mm256_setzero_pd();
            __m256d s1 = _mm256_setzero_pd();
            __m256d q0 = _mm256_setzero_pd();
            __m256d q1 = _mm256_setzero_pd();
            std::int64_t i = 0;
            for (; i + 8 <= hw; i += 8) {
                const __m256 v = _mm256_loadu_ps(src + i);
                const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
                const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
                s0 = _mm256_add_pd(s0, lo);
                s1 = _mm256_add_pd(s1, hi);
                q0 = _mm256_fmadd_pd(lo, lo, q0);
                q1 = _mm256_fmadd_pd(hi, hi, q1);
            }
            alignas(32) double ls[4];
            alignas(32) double lq[4];
            _mm256_store_pd(ls, _mm256_add_pd(s0, s1));
            _mm256_store_pd(lq, _mm256_add_pd(q0, q1));
            double s = ls[0] + ls[1] + ls[2] + ls[3];
            double q = lq[0] + lq[1] + lq[2] + lq[3];
            for (; i < hw; ++i) {
                const double v = static_cast<double>(src[i]);
                s += v;
                q += v * v;
            }
            sums[c] += s;
            sumsqs[c] += q;
        }
    }
}

void channel_dot(const float* a, const float* b, std::int64_t batch, std::int64_t channels,
                 std::int64_t hw, double* sums) {
    for (std::int64_t c = 0; c < channels; ++c) sums[c] = 0.0;
    for (std::int64_t bi = 0; bi < batch; ++bi) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const float* pa = a + (bi * channels + c) * hw;
            const float* pb = b + (bi * channels + c) * hw;
            __m256d acc0 = _mm256_setzero_pd();
            __m256d acc1 = _mm256_setzero_pd();
            std::int64_t i = 0;
            for (; i + 8 <= hw; i += 8) {
                const __m256 va = _mm256_loadu_ps(pa + i);
                const __m256 vb = _mm256_loadu_ps(pb + i);
                acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)),
                                       _mm256_cvtps_pd(_mm256_castps256_ps128(vb)), acc0);
                acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)),
                                       _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1)), acc1);
            }
            alignas(32) double lanes[4];
            _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
            double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
            for (; i < hw; ++i) s += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
            sums[c] += s;
        }
    }
}

void adam_step(float* p, const float* g, float* m, float* v, std::int64_t n, float lr, float beta1,
               float beta2, float eps, float bias1, float bias2) {
    const __m256 vb1 = _mm256_set1_ps(beta1);
    const __m256 vb2 = _mm256_set1_ps(beta2);
    const __m256 vc1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 vc2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 vlr = _mm256_set1_ps(lr);
    const __m256 veps = _mm256_set1_ps(eps);
    const __m256 vbias1 = _mm256_set1_ps(bias1);
    const __m256 vbias2 = _mm256_set1_ps(bias2);
    std::int64_t i = 0;
    // Same mul/add sequence as the scalar reference (no fused ops): the two
    // backends produce identical parameter bytes.
    for (; i + 8 <= n; i += 8) {
        const __m256 gi = _mm256_loadu_ps(g + i);
        const __m256 mi = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(vc1, gi));
        const __m256 vi = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                                        _mm256_mul_ps(vc2, _mm256_mul_ps(gi, gi)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        const __m256 mhat = _mm256_div_ps(mi, vbias1);
        const __m256 vhat = _mm256_div_ps(vi, vbias2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
        const __m256 step = _mm256_mul_ps(vlr, _mm256_div_ps(mhat, denom));
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), step));
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        const float mi = beta1 * m[i] + (1.0f - beta1) * gi;
        const float vi = beta2 * v[i] + (1.0f - beta2) * (gi * gi);
        m[i] = mi;
        v[i] = vi;
        const float mhat = mi / bias1;
        const float vhat = vi / bias2;
        p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace

const Ops& avx2_ops() {
    static const Ops table = {
        &gemm, &add, &mul, &axpy, &scale, &relu, &relu_backward, &sum, &all_finite,
        &affine_channel, &channel_sum_sumsq, &channel_dot, &adam_step,
    };
    return table;
}

}  // namespace dk::kernels

#endif  // x86_64
