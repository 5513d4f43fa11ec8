#pragma once

#include <cstdint>
#include <string>

#include "util/errors.hpp"

namespace dk::nn {

enum class Padding { Same, Valid };

inline const char* padding_name(Padding p) { return p == Padding::Same ? "same" : "valid"; }

struct ConvGeom {
    std::int64_t out_h = 0;
    std::int64_t out_w = 0;
    std::int64_t pad_top = 0;
    std::int64_t pad_left = 0;
};

// Output size and padding for conv/pool windows. Same-padding splits the total
// pad with the smaller half on the leading edge. Shared by the tensor ops and
// the architecture shape inference so both always agree.
inline ConvGeom conv_output_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t kh,
                                     std::int64_t kw, std::int64_t stride, Padding pad) {
    if (stride <= 0) throw ValidationError("stride must be positive, got " + std::to_string(stride));
    if (kh <= 0 || kw <= 0) throw ValidationError("kernel dims must be positive");
    ConvGeom g;
    if (pad == Padding::Same) {
        g.out_h = (in_h + stride - 1) / stride;
        g.out_w = (in_w + stride - 1) / stride;
        const std::int64_t pad_h = std::max<std::int64_t>((g.out_h - 1) * stride + kh - in_h, 0);
        const std::int64_t pad_w = std::max<std::int64_t>((g.out_w - 1) * stride + kw - in_w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (in_h < kh || in_w < kw) {
            throw ValidationError("valid padding: input " + std::to_string(in_h) + "x" +
                                  std::to_string(in_w) + " smaller than kernel " + std::to_string(kh) +
                                  "x" + std::to_string(kw));
        }
        g.out_h = (in_h - kh) / stride + 1;
        g.out_w = (in_w - kw) / stride + 1;
    }
    return g;
}

}  // namespace dk::nn
