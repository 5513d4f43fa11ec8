#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "nn/conv_arith.hpp"
#include "nn/dispatch.hpp"
#include "nn/tape.hpp"
#include "nn/tensor.hpp"
#include "util/errors.hpp"
#include "util/parallel.hpp"
#include "util/rng.hpp"

namespace dk::nn {

enum class Mode { Train, Eval };

// Per-layer batchnorm state that lives outside the tape: running statistics
// are buffers, not trainable parameters.
template <typename T>
struct BnState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BnState(std::int64_t channels = 0)
        : running_mean(static_cast<std::size_t>(channels), T(0)),
          running_var(static_cast<std::size_t>(channels), T(1)) {}
};

namespace detail {

// Every forward op funnels its result through here. Divergence surfaces as an
// immediate error instead of NaN quietly poisoning a training run.
template <typename T>
void check_finite(const char* op, const Tensor<T>& out) {
    if (!k_all_finite<T>(out.data(), out.size())) {
        throw NumericError(std::string(op) + " produced non-finite values");
    }
}

template <typename T>
bool should_record(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs) {
        if ((*t).tracked()) return true;
    }
    return false;
}

// dst += a * b, elementwise.
template <typename T>
void accumulate_product(T* dst, const T* a, const T* b, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

// Gathers one image's conv patches into a [C*kh*kw, OH*OW] column matrix.
template <typename T>
void im2col(const T* x, std::int64_t channels, std::int64_t in_h, std::int64_t in_w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, const ConvGeom& g, T* col) {
    const std::int64_t out_hw = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        const T* plane = x + c * in_h * in_w;
        for (std::int64_t u = 0; u < kh; ++u) {
            for (std::int64_t v = 0; v < kw; ++v) {
                T* row = col + ((c * kh + u) * kw + v) * out_hw;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const std::int64_t ih = oh * stride - g.pad_top + u;
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= in_h) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const std::int64_t iw = ow * stride - g.pad_left + v;
                        dst[ow] = (iw >= 0 && iw < in_w) ? plane[ih * in_w + iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-adds a column matrix back onto the (gradient of the) input image.
template <typename T>
void col2im_add(const T* col, std::int64_t channels, std::int64_t in_h, std::int64_t in_w,
                std::int64_t kh, std::int64_t kw, std::int64_t stride, const ConvGeom& g, T* dx) {
    const std::int64_t out_hw = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        T* plane = dx + c * in_h * in_w;
        for (std::int64_t u = 0; u < kh; ++u) {
            for (std::int64_t v = 0; v < kw; ++v) {
                const T* row = col + ((c * kh + u) * kw + v) * out_hw;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    const std::int64_t ih = oh * stride - g.pad_top + u;
                    if (ih < 0 || ih >= in_h) continue;
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        const std::int64_t iw = ow * stride - g.pad_left + v;
                        if (iw >= 0 && iw < in_w) plane[ih * in_w + iw] += row[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// -------------------------------------------------------------------------
// Convolutions
// -------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::int64_t stride, Padding pad,
                 Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ValidationError("conv2d input must be 4-D BCHW, got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ValidationError("conv2d kernel must be 4-D [M,C,kh,kw], got " + shape_str(w.shape()));
    if (stride <= 0) throw ValidationError("conv2d stride must be positive");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
    const std::int64_t filters = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != channels) {
        throw ValidationError("conv2d channel mismatch: input has " + std::to_string(channels) +
                              " channels, kernel expects " + std::to_string(w.dim(1)));
    }
    const ConvGeom g = conv_output_geometry(in_h, in_w, kh, kw, stride, pad);
    const std::int64_t out_hw = g.out_h * g.out_w;
    const std::int64_t patch = channels * kh * kw;

    Tensor<T> y({batch, filters, g.out_h, g.out_w});
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1);
    std::vector<T> col;
    if (!pointwise) col.resize(static_cast<std::size_t>(patch * out_hw));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * channels * in_h * in_w;
        T* yb = y.data() + b * filters * out_hw;
        if (pointwise) {
            // 1x1 stride-1: the input plane already is the column matrix.
            detail::pgemm<T>(false, false, filters, out_hw, channels, T(1), w.data(), channels, xb,
                             out_hw, T(0), yb, out_hw);
        } else {
            detail::im2col<T>(xb, channels, in_h, in_w, kh, kw, stride, g, col.data());
            detail::pgemm<T>(false, false, filters, out_hw, patch, T(1), w.data(), patch, col.data(),
                             out_hw, T(0), yb, out_hw);
        }
    }
    detail::check_finite("conv2d", y);

    if (detail::should_record(tape, {&x, &w})) {
        auto xi = x.impl();
        auto wi = w.impl();
        auto yi = y.impl();
        tape->record("conv2d", yi, [xi, wi, yi, stride, g, batch, channels, in_h, in_w, filters, kh,
                                    kw, out_hw, patch, pointwise]() {
            const T* dy = yi->grad.data();
            const bool want_dx = xi->requires_grad || xi->on_tape;
            const bool want_dw = wi->requires_grad || wi->on_tape;
            if (want_dx) xi->ensure_grad();
            if (want_dw) wi->ensure_grad();
            std::vector<T> col_b;
            std::vector<T> dcol;
            if (!pointwise) {
                col_b.resize(static_cast<std::size_t>(patch * out_hw));
                dcol.resize(static_cast<std::size_t>(patch * out_hw));
            }
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* xb = xi->values.data() + b * channels * in_h * in_w;
                const T* dyb = dy + b * filters * out_hw;
                if (pointwise) {
                    if (want_dw) {
                        detail::pgemm<T>(false, true, filters, channels, out_hw, T(1), dyb, out_hw,
                                         xb, out_hw, T(1), wi->grad.data(), channels);
                    }
                    if (want_dx) {
                        detail::pgemm<T>(true, false, channels, out_hw, filters, T(1),
                                         wi->values.data(), channels, dyb, out_hw, T(1),
                                         xi->grad.data() + b * channels * in_h * in_w, out_hw);
                    }
                } else {
                    detail::im2col<T>(xb, channels, in_h, in_w, kh, kw, stride, g, col_b.data());
                    if (want_dw) {
                        detail::pgemm<T>(false, true, filters, patch, out_hw, T(1), dyb, out_hw,
                                         col_b.data(), out_hw, T(1), wi->grad.data(), patch);
                    }
                    if (want_dx) {
                        detail::pgemm<T>(true, false, patch, out_hw, filters, T(1),
                                         wi->values.data(), patch, dyb, out_hw, T(0), dcol.data(),
                                         out_hw);
                        detail::col2im_add<T>(dcol.data(), channels, in_h, in_w, kh, kw, stride, g,
                                              xi->grad.data() + b * channels * in_h * in_w);
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& k, std::int64_t stride, Padding pad,
                           Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ValidationError("depthwise_conv2d input must be 4-D BCHW");
    if (k.rank() != 4 || k.dim(1) != 1) {
        throw ValidationError("depthwise kernel must be [C,1,kh,kw], got " + shape_str(k.shape()));
    }
    if (stride <= 0) throw ValidationError("depthwise_conv2d stride must be positive");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
    const std::int64_t kh = k.dim(2), kw = k.dim(3);
    if (k.dim(0) != channels) {
        throw ValidationError("depthwise_conv2d channel mismatch: input has " +
                              std::to_string(channels) + " channels, kernel has " +
                              std::to_string(k.dim(0)));
    }
    const ConvGeom g = conv_output_geometry(in_h, in_w, kh, kw, stride, pad);
    Tensor<T> y({batch, channels, g.out_h, g.out_w});

    const T* kd = k.data();
    util::parallel_for(channels, [&](std::int64_t c_lo, std::int64_t c_hi) {
        for (std::int64_t c = c_lo; c < c_hi; ++c) {
            const T* kc = kd + c * kh * kw;
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* plane = x.data() + (b * channels + c) * in_h * in_w;
                T* out = y.data() + (b * channels + c) * g.out_h * g.out_w;
                for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                    for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                        T acc = 0;
                        for (std::int64_t u = 0; u < kh; ++u) {
                            const std::int64_t ih = oh * stride - g.pad_top + u;
                            if (ih < 0 || ih >= in_h) continue;
                            for (std::int64_t v = 0; v < kw; ++v) {
                                const std::int64_t iw = ow * stride - g.pad_left + v;
                                if (iw < 0 || iw >= in_w) continue;
                                acc += plane[ih * in_w + iw] * kc[u * kw + v];
                            }
                        }
                        out[oh * g.out_w + ow] = acc;
                    }
                }
            }
        }
    });
    detail::check_finite("depthwise_conv2d", y);

    if (detail::should_record(tape, {&x, &k})) {
        auto xi = x.impl();
        auto ki = k.impl();
        auto yi = y.impl();
        tape->record("depthwise_conv2d", yi,
                     [xi, ki, yi, stride, g, batch, channels, in_h, in_w, kh, kw]() {
            const bool want_dx = xi->requires_grad || xi->on_tape;
            const bool want_dk = ki->requires_grad || ki->on_tape;
            if (want_dx) xi->ensure_grad();
            if (want_dk) ki->ensure_grad();
            // Channel planes are independent; each worker owns a channel range.
            util::parallel_for(channels, [&](std::int64_t c_lo, std::int64_t c_hi) {
                for (std::int64_t c = c_lo; c < c_hi; ++c) {
                    const T* kc = ki->values.data() + c * kh * kw;
                    T* dkc = want_dk ? ki->grad.data() + c * kh * kw : nullptr;
                    for (std::int64_t b = 0; b < batch; ++b) {
                        const T* plane = xi->values.data() + (b * channels + c) * in_h * in_w;
                        const T* dyp = yi->grad.data() + (b * channels + c) * g.out_h * g.out_w;
                        T* dxp = want_dx ? xi->grad.data() + (b * channels + c) * in_h * in_w : nullptr;
                        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                                const T go = dyp[oh * g.out_w + ow];
                                for (std::int64_t u = 0; u < kh; ++u) {
                                    const std::int64_t ih = oh * stride - g.pad_top + u;
                                    if (ih < 0 || ih >= in_h) continue;
                                    for (std::int64_t v = 0; v < kw; ++v) {
                                        const std::int64_t iw = ow * stride - g.pad_left + v;
                                        if (iw < 0 || iw >= in_w) continue;
                                        if (dkc) dkc[u * kw + v] += go * plane[ih * in_w + iw];
                                        if (dxp) dxp[ih * in_w + iw] += go * kc[u * kw + v];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        });
    }
    return y;
}

// Depthwise separable convolution: per-channel spatial filter, then a 1x1
// channel mixer. Two tape nodes; gradient flows through both stages.
template <typename T>
Tensor<T> separable_conv2d(const Tensor<T>& x, const Tensor<T>& depthwise_kernel,
                           const Tensor<T>& pointwise_kernel, std::int64_t stride, Padding pad,
                           Tape<T>* tape = nullptr) {
    if (pointwise_kernel.rank() != 4 || pointwise_kernel.dim(2) != 1 || pointwise_kernel.dim(3) != 1) {
        throw ValidationError("pointwise kernel must be [M,C,1,1], got " +
                              shape_str(pointwise_kernel.shape()));
    }
    if (pointwise_kernel.dim(1) != depthwise_kernel.dim(0)) {
        throw ValidationError("separable_conv2d stage mismatch: depthwise outputs " +
                              std::to_string(depthwise_kernel.dim(0)) + " channels, pointwise expects " +
                              std::to_string(pointwise_kernel.dim(1)));
    }
    const Tensor<T> mid = depthwise_conv2d(x, depthwise_kernel, stride, pad, tape);
    return conv2d(mid, pointwise_kernel, 1, Padding::Same, tape);
}

// -------------------------------------------------------------------------
// Normalization, activations, pooling
// -------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BnState<T>& state, Mode mode, T eps, T momentum, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ValidationError("batchnorm input must be 4-D BCHW");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.size() != channels || beta.size() != channels) {
        throw ValidationError("batchnorm gamma/beta length must equal channel count " +
                              std::to_string(channels));
    }
    if (static_cast<std::int64_t>(state.running_mean.size()) != channels) {
        throw ValidationError("batchnorm running stats length mismatch");
    }
    const std::int64_t per_channel = batch * hw;
    if (mode == Mode::Train && per_channel < 2) {
        throw ValidationError("batchnorm train mode needs at least 2 values per channel");
    }

    std::vector<T> mean(static_cast<std::size_t>(channels));
    std::vector<T> inv_std(static_cast<std::size_t>(channels));
    if (mode == Mode::Train) {
        std::vector<double> sums(static_cast<std::size_t>(channels));
        std::vector<double> sumsqs(static_cast<std::size_t>(channels));
        detail::k_channel_sum_sumsq<T>(x.data(), batch, channels, hw, sums.data(), sumsqs.data());
        for (std::int64_t c = 0; c < channels; ++c) {
            const double m = sums[static_cast<std::size_t>(c)] / static_cast<double>(per_channel);
            double var = sumsqs[static_cast<std::size_t>(c)] / static_cast<double>(per_channel) - m * m;
            if (var < 0.0) var = 0.0;
            mean[static_cast<std::size_t>(c)] = static_cast<T>(m);
            inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            const double unbiased = var * static_cast<double>(per_channel) / static_cast<double>(per_channel - 1);
            auto& rm = state.running_mean[static_cast<std::size_t>(c)];
            auto& rv = state.running_var[static_cast<std::size_t>(c)];
            rm = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rm) +
                                static_cast<double>(momentum) * m);
            rv = static_cast<T>((1.0 - static_cast<double>(momentum)) * static_cast<double>(rv) +
                                static_cast<double>(momentum) * unbiased);
        }
    } else {
        for (std::int64_t c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] = state.running_mean[static_cast<std::size_t>(c)];
            inv_std[static_cast<std::size_t>(c)] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(state.running_var[static_cast<std::size_t>(c)]) +
                                static_cast<double>(eps)));
        }
    }

    std::vector<T> ch_scale(static_cast<std::size_t>(channels));
    std::vector<T> ch_shift(static_cast<std::size_t>(channels));
    for (std::int64_t c = 0; c < channels; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        ch_scale[ci] = gamma.data()[c] * inv_std[ci];
        ch_shift[ci] = beta.data()[c] - mean[ci] * ch_scale[ci];
    }
    Tensor<T> y(x.shape());
    detail::k_affine_channel<T>(x.data(), y.data(), batch, channels, hw, ch_scale.data(), ch_shift.data());
    detail::check_finite("batchnorm", y);

    if (detail::should_record(tape, {&x, &gamma, &beta})) {
        auto xi = x.impl();
        auto gi = gamma.impl();
        auto bi = beta.impl();
        auto yi = y.impl();
        const bool train = mode == Mode::Train;
        tape->record("batchnorm", yi, [xi, gi, bi, yi, mean, inv_std, batch, channels, hw, train]() {
            const std::int64_t n = batch * channels * hw;
            const std::int64_t per_ch = batch * hw;
            const T* dy = yi->grad.data();
            // xhat = (x - mean) * inv_std
            std::vector<T> xhat(static_cast<std::size_t>(n));
            std::vector<T> neg_shift(static_cast<std::size_t>(channels));
            for (std::int64_t c = 0; c < channels; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                neg_shift[ci] = -mean[ci] * inv_std[ci];
            }
            detail::k_affine_channel<T>(xi->values.data(), xhat.data(), batch, channels, hw,
                                        inv_std.data(), neg_shift.data());
            std::vector<double> sum_dy(static_cast<std::size_t>(channels));
            std::vector<double> ignored(static_cast<std::size_t>(channels));
            std::vector<double> sum_dy_xhat(static_cast<std::size_t>(channels));
            detail::k_channel_sum_sumsq<T>(dy, batch, channels, hw, sum_dy.data(), ignored.data());
            detail::k_channel_dot<T>(dy, xhat.data(), batch, channels, hw, sum_dy_xhat.data());

            if (gi->requires_grad || gi->on_tape) {
                gi->ensure_grad();
                for (std::int64_t c = 0; c < channels; ++c)
                    gi->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat[static_cast<std::size_t>(c)]);
            }
            if (bi->requires_grad || bi->on_tape) {
                bi->ensure_grad();
                for (std::int64_t c = 0; c < channels; ++c)
                    bi->grad[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy[static_cast<std::size_t>(c)]);
            }
            if (xi->requires_grad || xi->on_tape) {
                xi->ensure_grad();
                T* dx = xi->grad.data();
                for (std::int64_t b = 0; b < batch; ++b) {
                    for (std::int64_t c = 0; c < channels; ++c) {
                        const auto ci = static_cast<std::size_t>(c);
                        const T g = gi->values[ci];
                        const std::int64_t base = (b * channels + c) * hw;
                        if (train) {
                            // dx = g*istd/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                            const T k1 = g * inv_std[ci];
                            const T k2 = static_cast<T>(sum_dy[ci] / static_cast<double>(per_ch));
                            const T k3 = static_cast<T>(sum_dy_xhat[ci] / static_cast<double>(per_ch));
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t j = base + i;
                                dx[j] += k1 * (dy[j] - k2 - xhat[static_cast<std::size_t>(j)] * k3);
                            }
                        } else {
                            // Running stats are constants in eval mode.
                            const T k1 = g * inv_std[ci];
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const std::int64_t j = base + i;
                                dx[j] += k1 * dy[j];
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> y(x.shape());
    detail::k_relu<T>(x.data(), y.data(), x.size());
    detail::check_finite("relu", y);
    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("relu", yi, [xi, yi]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            detail::k_relu_backward<T>(xi->values.data(), yi->grad.data(), xi->grad.data(), xi->size());
        });
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::int64_t kernel, std::int64_t stride, Padding pad,
                    Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ValidationError("maxpool2d input must be 4-D BCHW");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
    const ConvGeom g = conv_output_geometry(in_h, in_w, kernel, kernel, stride, pad);
    Tensor<T> y({batch, channels, g.out_h, g.out_w});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(y.size()));

    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* plane = x.data() + (b * channels + c) * in_h * in_w;
            T* out = y.data() + (b * channels + c) * g.out_h * g.out_w;
            std::int64_t* am = argmax->data() + (b * channels + c) * g.out_h * g.out_w;
            for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
                for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (std::int64_t u = 0; u < kernel; ++u) {
                        const std::int64_t ih = oh * stride - g.pad_top + u;
                        if (ih < 0 || ih >= in_h) continue;
                        for (std::int64_t v = 0; v < kernel; ++v) {
                            const std::int64_t iw = ow * stride - g.pad_left + v;
                            if (iw < 0 || iw >= in_w) continue;
                            const T val = plane[ih * in_w + iw];
                            if (val > best) {
                                best = val;
                                best_idx = ih * in_w + iw;
                            }
                        }
                    }
                    out[oh * g.out_w + ow] = best;
                    am[oh * g.out_w + ow] = (b * channels + c) * in_h * in_w + best_idx;
                }
            }
        }
    }
    detail::check_finite("maxpool2d", y);

    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("maxpool2d", yi, [xi, yi, argmax]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            const T* dy = yi->grad.data();
            for (std::int64_t i = 0; i < yi->size(); ++i) {
                xi->grad[static_cast<std::size_t>((*argmax)[static_cast<std::size_t>(i)])] += dy[i];
            }
        });
    }
    return y;
}

// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.rank() != 4) throw ValidationError("global_avg_pool input must be 4-D BCHW");
    const std::int64_t batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({batch, channels});
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            y.data()[b * channels + c] = static_cast<T>(
                detail::k_sum<T>(x.data() + (b * channels + c) * hw, hw) / static_cast<double>(hw));
        }
    }
    detail::check_finite("global_avg_pool", y);
    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("global_avg_pool", yi, [xi, yi, batch, channels, hw]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < channels; ++c) {
                    const T go = yi->grad[static_cast<std::size_t>(b * channels + c)] / static_cast<T>(hw);
                    T* dst = xi->grad.data() + (b * channels + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) dst[i] += go;
                }
            }
        });
    }
    return y;
}

// y = x * W^T + bias, with x [B,F], W [O,F], bias [O].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                Tape<T>* tape = nullptr) {
    if (x.rank() != 2) throw ValidationError("dense input must be 2-D (batch, features), got " + shape_str(x.shape()));
    if (w.rank() != 2) throw ValidationError("dense weight must be 2-D (out, in)");
    const std::int64_t batch = x.dim(0), features = x.dim(1), out = w.dim(0);
    if (w.dim(1) != features) {
        throw ValidationError("dense feature mismatch: input has " + std::to_string(features) +
                              ", weight expects " + std::to_string(w.dim(1)));
    }
    if (bias.size() != out) throw ValidationError("dense bias length must equal output units");
    Tensor<T> y({batch, out});
    detail::pgemm<T>(false, true, batch, out, features, T(1), x.data(), features, w.data(), features,
                     T(0), y.data(), out);
    for (std::int64_t b = 0; b < batch; ++b) {
        detail::k_add<T>(y.data() + b * out, bias.data(), y.data() + b * out, out);
    }
    detail::check_finite("dense", y);

    if (detail::should_record(tape, {&x, &w, &bias})) {
        auto xi = x.impl();
        auto wi = w.impl();
        auto bi = bias.impl();
        auto yi = y.impl();
        tape->record("dense", yi, [xi, wi, bi, yi, batch, features, out]() {
            const T* dy = yi->grad.data();
            if (xi->requires_grad || xi->on_tape) {
                xi->ensure_grad();
                detail::pgemm<T>(false, false, batch, features, out, T(1), dy, out,
                                 wi->values.data(), features, T(1), xi->grad.data(), features);
            }
            if (wi->requires_grad || wi->on_tape) {
                wi->ensure_grad();
                detail::pgemm<T>(true, false, out, features, batch, T(1), dy, out,
                                 xi->values.data(), features, T(1), wi->grad.data(), features);
            }
            if (bi->requires_grad || bi->on_tape) {
                bi->ensure_grad();
                for (std::int64_t b = 0; b < batch; ++b) {
                    detail::k_add<T>(bi->grad.data(), dy + b * out, bi->grad.data(), out);
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> y(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
        y.data()[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    }
    detail::check_finite("sigmoid", y);
    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("sigmoid", yi, [xi, yi]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            for (std::int64_t i = 0; i < yi->size(); ++i) {
                const T yv = yi->values[static_cast<std::size_t>(i)];
                xi->grad[static_cast<std::size_t>(i)] += yi->grad[static_cast<std::size_t>(i)] * yv * (T(1) - yv);
            }
        });
    }
    return y;
}

// Inverted dropout: scaling happens at train time so eval is a pure identity
// (the input tensor is returned untouched).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, util::Rng& rng,
                  Tape<T>* tape = nullptr) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ValidationError("dropout rate must be in [0,1), got " + std::to_string(rate));
    }
    if (mode == Mode::Eval || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.size()));
    for (auto& m : *mask) m = rng.uniform() < rate ? T(0) : keep_scale;
    Tensor<T> y(x.shape());
    detail::k_mul<T>(x.data(), mask->data(), y.data(), x.size());
    detail::check_finite("dropout", y);
    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("dropout", yi, [xi, yi, mask]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            detail::accumulate_product<T>(xi->grad.data(), yi->grad.data(), mask->data(), xi->size());
        });
    }
    return y;
}

// -------------------------------------------------------------------------
// Elementwise combinators and losses
// -------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape()) {
        throw ValidationError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> y(a.shape());
    detail::k_add<T>(a.data(), b.data(), y.data(), y.size());
    detail::check_finite("add", y);
    if (detail::should_record(tape, {&a, &b})) {
        auto ai = a.impl();
        auto bi = b.impl();
        auto yi = y.impl();
        tape->record("add", yi, [ai, bi, yi]() {
            if (ai->requires_grad || ai->on_tape) {
                ai->ensure_grad();
                detail::k_axpy<T>(T(1), yi->grad.data(), ai->grad.data(), ai->size());
            }
            if (bi->requires_grad || bi->on_tape) {
                bi->ensure_grad();
                detail::k_axpy<T>(T(1), yi->grad.data(), bi->grad.data(), bi->size());
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.shape() != b.shape()) {
        throw ValidationError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> y(a.shape());
    detail::k_mul<T>(a.data(), b.data(), y.data(), y.size());
    detail::check_finite("mul", y);
    if (detail::should_record(tape, {&a, &b})) {
        auto ai = a.impl();
        auto bi = b.impl();
        auto yi = y.impl();
        tape->record("mul", yi, [ai, bi, yi]() {
            if (ai->requires_grad || ai->on_tape) {
                ai->ensure_grad();
                detail::accumulate_product<T>(ai->grad.data(), yi->grad.data(), bi->values.data(), ai->size());
            }
            if (bi->requires_grad || bi->on_tape) {
                bi->ensure_grad();
                detail::accumulate_product<T>(bi->grad.data(), yi->grad.data(), ai->values.data(), bi->size());
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> y = Tensor<T>::scalar(static_cast<T>(detail::k_sum<T>(x.data(), x.size())));
    detail::check_finite("sum", y);
    if (detail::should_record(tape, {&x})) {
        auto xi = x.impl();
        auto yi = y.impl();
        tape->record("sum", yi, [xi, yi]() {
            if (!(xi->requires_grad || xi->on_tape)) return;
            xi->ensure_grad();
            const T go = yi->grad[0];
            for (auto& g : xi->grad) g += go;
        });
    }
    return y;
}

// Mean binary cross-entropy on sigmoid probabilities. Probabilities are
// clamped away from {0,1}; the gradient is zero where the clamp is active.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prob, const Tensor<T>& target, Tape<T>* tape = nullptr) {
    if (prob.shape() != target.shape()) {
        throw ValidationError("bce_loss shape mismatch: " + shape_str(prob.shape()) + " vs " +
                              shape_str(target.shape()));
    }
    const std::int64_t n = prob.size();
    const T lo = static_cast<T>(1e-7);
    const T hi = T(1) - lo;
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T p = std::clamp(prob.data()[i], lo, hi);
        const double yv = static_cast<double>(target.data()[i]);
        acc += yv * std::log(static_cast<double>(p)) + (1.0 - yv) * std::log(1.0 - static_cast<double>(p));
    }
    Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(-acc / static_cast<double>(n)));
    detail::check_finite("bce_loss", loss);
    if (detail::should_record(tape, {&prob})) {
        auto pi = prob.impl();
        auto ti = target.impl();
        auto li = loss.impl();
        tape->record("bce_loss", li, [pi, ti, li, n, lo, hi]() {
            if (!(pi->requires_grad || pi->on_tape)) return;
            pi->ensure_grad();
            const T go = li->grad[0];
            for (std::int64_t i = 0; i < n; ++i) {
                const T raw = pi->values[static_cast<std::size_t>(i)];
                if (raw < lo || raw > hi) continue;  // clamped: zero local slope
                const T p = raw;
                const T yv = ti->values[static_cast<std::size_t>(i)];
                pi->grad[static_cast<std::size_t>(i)] +=
                    go * (p - yv) / (p * (T(1) - p) * static_cast<T>(n));
            }
        });
    }
    return loss;
}

}  // namespace dk::nn
