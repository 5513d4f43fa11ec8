#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "kernels/kernels.hpp"
#include "kernels/reference.hpp"
#include "util/rng.hpp"

using namespace dk;

namespace {

std::vector<float> random_vec(util::Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(lo + (hi - lo) * rng.uniform());
    return v;
}

// Independent of both backends: plain dot products in double.
void gemm_oracle(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, const float* c_in, float* c_out, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const double av = ta ? a[p * lda + i] : a[i * lda + p];
                const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            double out = alpha * acc;
            if (beta != 0.0f) out += static_cast<double>(beta) * c_in[i * ldc + j];
            c_out[i * ldc + j] = static_cast<float>(out);
        }
    }
}

bool have_avx2() { return kernels::cpu_supports_avx2(); }

struct BackendGuard {
    kernels::Backend saved;
    BackendGuard() : saved(kernels::active_backend()) {}
    ~BackendGuard() { kernels::force_backend(saved); }
};

}  // namespace

TEST_CASE("gemm matches a double-precision oracle for all transpose flags") {
    util::Rng rng(11);
    for (int ta = 0; ta < 2; ++ta) {
        for (int tb = 0; tb < 2; ++tb) {
            for (int iter = 0; iter < 6; ++iter) {
                const int m = 1 + static_cast<int>(rng.bounded(17));
                const int n = 1 + static_cast<int>(rng.bounded(23));
                const int k = 1 + static_cast<int>(rng.bounded(19));
                const int lda = ta ? m : k;
                const int ldb = tb ? k : n;
                auto a = random_vec(rng, static_cast<std::size_t>(ta ? k * lda : m * lda));
                auto b = random_vec(rng, static_cast<std::size_t>(tb ? n * ldb : k * ldb));
                auto c0 = random_vec(rng, static_cast<std::size_t>(m * n));
                const float beta = iter % 2 ? 1.0f : 0.0f;

                std::vector<float> want(static_cast<std::size_t>(m * n));
                gemm_oracle(ta, tb, m, n, k, 1.0f, a.data(), lda, b.data(), ldb, beta, c0.data(),
                            want.data(), n);

                auto check = [&](const kernels::Ops& ops) {
                    std::vector<float> got = c0;
                    ops.gemm(ta, tb, m, n, k, 1.0f, a.data(), lda, b.data(), ldb, beta, got.data(), n);
                    for (std::size_t i = 0; i < got.size(); ++i) {
                        CHECK(std::abs(got[i] - want[i]) <=
                              1e-4f * std::max(1.0f, std::abs(want[i])));
                    }
                };
                check(kernels::scalar_ops());
#if defined(__x86_64__)
                if (have_avx2()) check(kernels::avx2_ops());
#endif
            }
        }
    }
}

#if defined(__x86_64__)
TEST_CASE("avx2 elementwise kernels are bit-identical to scalar") {
    if (!have_avx2()) return;
    util::Rng rng(23);
    const auto& s = kernels::scalar_ops();
    const auto& v = kernels::avx2_ops();
    for (const std::size_t n : {1u, 7u, 8u, 9u, 64u, 1000u, 4096u + 3u}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        std::vector<float> out_s(n), out_v(n);

        s.add(a.data(), b.data(), out_s.data(), static_cast<std::int64_t>(n));
        v.add(a.data(), b.data(), out_v.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(out_s.data(), out_v.data(), n * 4) == 0);

        s.mul(a.data(), b.data(), out_s.data(), static_cast<std::int64_t>(n));
        v.mul(a.data(), b.data(), out_v.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(out_s.data(), out_v.data(), n * 4) == 0);

        s.relu(a.data(), out_s.data(), static_cast<std::int64_t>(n));
        v.relu(a.data(), out_v.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(out_s.data(), out_v.data(), n * 4) == 0);

        std::vector<float> ys = b, yv = b;
        s.axpy(0.37f, a.data(), ys.data(), static_cast<std::int64_t>(n));
        v.axpy(0.37f, a.data(), yv.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(ys.data(), yv.data(), n * 4) == 0);

        s.scale(-1.25f, a.data(), out_s.data(), static_cast<std::int64_t>(n));
        v.scale(-1.25f, a.data(), out_v.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(out_s.data(), out_v.data(), n * 4) == 0);

        std::vector<float> dxs(n, 0.5f), dxv(n, 0.5f);
        s.relu_backward(a.data(), b.data(), dxs.data(), static_cast<std::int64_t>(n));
        v.relu_backward(a.data(), b.data(), dxv.data(), static_cast<std::int64_t>(n));
        CHECK(std::memcmp(dxs.data(), dxv.data(), n * 4) == 0);
    }
}

TEST_CASE("avx2 adam step is bit-identical to scalar") {
    if (!have_avx2()) return;
    util::Rng rng(29);
    const std::size_t n = 1003;
    auto p0 = random_vec(rng, n);
    auto g = random_vec(rng, n);
    auto m0 = random_vec(rng, n, -0.1, 0.1);
    std::vector<float> v0(n);
    for (auto& x : v0) x = static_cast<float>(rng.uniform() * 0.01);

    auto ps = p0, ms = m0, vs = v0;
    auto pv = p0, mv = m0, vv = v0;
    const float bias1 = 1.0f - std::pow(0.9f, 3.0f);
    const float bias2 = 1.0f - std::pow(0.999f, 3.0f);
    kernels::scalar_ops().adam_step(ps.data(), g.data(), ms.data(), vs.data(),
                                    static_cast<std::int64_t>(n), 1e-3f, 0.9f, 0.999f, 1e-8f, bias1, bias2);
    kernels::avx2_ops().adam_step(pv.data(), g.data(), mv.data(), vv.data(),
                                  static_cast<std::int64_t>(n), 1e-3f, 0.9f, 0.999f, 1e-8f, bias1, bias2);
    CHECK(std::memcmp(ps.data(), pv.data(), n * 4) == 0);
    CHECK(std::memcmp(ms.data(), mv.data(), n * 4) == 0);
    CHECK(std::memcmp(vs.data(), vv.data(), n * 4) == 0);
}

TEST_CASE("avx2 affine_channel is bit-identical, reductions agree to tolerance") {
    if (!have_avx2()) return;
    util::Rng rng(31);
    const std::int64_t batch = 3, channels = 5, hw = 41;
    const auto n = static_cast<std::size_t>(batch * channels * hw);
    auto x = random_vec(rng, n);
    auto y = random_vec(rng, n);
    auto sc = random_vec(rng, static_cast<std::size_t>(channels));
    auto sh = random_vec(rng, static_cast<std::size_t>(channels));

    std::vector<float> out_s(n), out_v(n);
    kernels::scalar_ops().affine_channel(x.data(), out_s.data(), batch, channels, hw, sc.data(), sh.data());
    kernels::avx2_ops().affine_channel(x.data(), out_v.data(), batch, channels, hw, sc.data(), sh.data());
    CHECK(std::memcmp(out_s.data(), out_v.data(), n * 4) == 0);

    std::vector<double> s1(5), q1(5), s2(5), q2(5);
    kernels::scalar_ops().channel_sum_sumsq(x.data(), batch, channels, hw, s1.data(), q1.data());
    kernels::avx2_ops().channel_sum_sumsq(x.data(), batch, channels, hw, s2.data(), q2.data());
    for (int c = 0; c < 5; ++c) {
        CHECK(s1[c] == doctest::Approx(s2[c]).epsilon(1e-10));
        CHECK(q1[c] == doctest::Approx(q2[c]).epsilon(1e-10));
    }

    std::vector<double> d1(5), d2(5);
    kernels::scalar_ops().channel_dot(x.data(), y.data(), batch, channels, hw, d1.data());
    kernels::avx2_ops().channel_dot(x.data(), y.data(), batch, channels, hw, d2.data());
    for (int c = 0; c < 5; ++c) CHECK(d1[c] == doctest::Approx(d2[c]).epsilon(1e-10));

    const double sum_s = kernels::scalar_ops().sum(x.data(), static_cast<std::int64_t>(n));
    const double sum_v = kernels::avx2_ops().sum(x.data(), static_cast<std::int64_t>(n));
    CHECK(sum_s == doctest::Approx(sum_v).epsilon(1e-10));
}
#endif  // __x86_64__

TEST_CASE("all_finite flags inf and nan anywhere in the buffer") {
    util::Rng rng(37);
    for (const auto& ops : {&kernels::scalar_ops()
#if defined(__x86_64__)
                            ,
                            have_avx2() ? &kernels::avx2_ops() : &kernels::scalar_ops()
#endif
         }) {
        auto v = random_vec(rng, 100);
        CHECK(ops->all_finite(v.data(), 100));
        for (const std::size_t pos : {0u, 7u, 50u, 99u}) {
            auto bad = v;
            bad[pos] = std::numeric_limits<float>::infinity();
            CHECK_FALSE(ops->all_finite(bad.data(), 100));
            bad[pos] = std::numeric_limits<float>::quiet_NaN();
            CHECK_FALSE(ops->all_finite(bad.data(), 100));
        }
    }
}

TEST_CASE("backend dispatch honors force_backend") {
    BackendGuard guard;
    kernels::force_backend(kernels::Backend::Scalar);
    CHECK(kernels::active_backend() == kernels::Backend::Scalar);
    CHECK(kernels::ops().add == kernels::scalar_ops().add);
#if defined(__x86_64__)
    if (have_avx2()) {
        kernels::force_backend(kernels::Backend::Avx2);
        CHECK(kernels::active_backend() == kernels::Backend::Avx2);
        CHECK(kernels::ops().add != kernels::scalar_ops().add);
    }
#endif
}
