#pragma once

#include <cstdint>

namespace dk::kernels {

enum class Backend { Scalar, Avx2 };

const char* backend_name(Backend b);

// Dispatch table for the float32 hot loops. Entries are selected once at
// startup (CPU detection, overridable via DEFECTKIT_KERNELS=scalar|avx2) and
// can be forced from tests.
struct Ops {
    void (*gemm)(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
                 float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
                 float beta, float* c, std::int64_t ldc);
    void (*add)(const float* a, const float* b, float* out, std::int64_t n);
    void (*mul)(const float* a, const float* b, float* out, std::int64_t n);
    void (*axpy)(float alpha, const float* x, float* y, std::int64_t n);
    void (*scale)(float alpha, const float* x, float* out, std::int64_t n);
    void (*relu)(const float* x, float* out, std::int64_t n);
    void (*relu_backward)(const float* x, const float* dy, float* dx, std::int64_t n);
    double (*sum)(const float* x, std::int64_t n);
    bool (*all_finite)(const float* x, std::int64_t n);
    void (*affine_channel)(const float* x, float* out, std::int64_t batch, std::int64_t channels,
                           std::int64_t hw, const float* ch_scale, const float* ch_shift);
    void (*channel_sum_sumsq)(const float* x, std::int64_t batch, std::int64_t channels,
                              std::int64_t hw, double* sums, double* sumsqs);
    void (*channel_dot)(const float* a, const float* b, std::int64_t batch, std::int64_t channels,
                        std::int64_t hw, double* sums);
    void (*adam_step)(float* p, const float* g, float* m, float* v, std::int64_t n, float lr,
                      float beta1, float beta2, float eps, float bias1, float bias2);
};

bool cpu_supports_avx2();

// Active table. Stable for the lifetime of the process unless force_backend
// is called (test hook).
const Ops& ops();
Backend active_backend();
void force_backend(Backend b);

const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif

}  // namespace dk::kernels
