#include "kernels/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "kernels/reference.hpp"
#include "util/errors.hpp"

namespace dk::kernels {

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "?";
}

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops& scalar_ops() {
    static const Ops table = {
        &ref::gemm<float>,
        &ref::add<float>,
        &ref::mul<float>,
        &ref::axpy<float>,
        &ref::scale<float>,
        &ref::relu<float>,
        &ref::relu_backward<float>,
        &ref::sum<float>,
        &ref::all_finite<float>,
        &ref::affine_channel<float>,
        &ref::channel_sum_sumsq<float>,
        &ref::channel_dot<float>,
        &ref::adam_step<float>,
    };
    return table;
}

namespace {

Backend resolve_backend() {
    if (const char* env = std::getenv("DEFECTKIT_KERNELS")) {
        const std::string v = env;
        if (v == "scalar") return Backend::Scalar;
        if (v == "avx2") {
            if (!cpu_supports_avx2()) throw ValidationError("DEFECTKIT_KERNELS=avx2 but CPU lacks AVX2/FMA");
            return Backend::Avx2;
        }
        if (v != "auto" && !v.empty()) throw ValidationError("unknown DEFECTKIT_KERNELS value: " + v);
    }
    return cpu_supports_avx2() ? Backend::Avx2 : Backend::Scalar;
}

Backend g_backend = resolve_backend();

const Ops* table_for(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::Avx2) return &avx2_ops();
#endif
    return &scalar_ops();
}

const Ops* g_ops = table_for(g_backend);

}  // namespace

const Ops& ops() { return *g_ops; }

Backend active_backend() { return g_backend; }

void force_backend(Backend b) {
    if (b == Backend::Avx2 && !cpu_supports_avx2()) {
        throw ValidationError("cannot force avx2 backend: CPU lacks AVX2/FMA");
    }
    g_backend = b;
    g_ops = table_for(b);
}

}  // namespace dk::kernels
