#pragma once

// Central finite-difference gradient oracle. Runs every check in the float64
// mirror of the op set so truncation error stays far below the pass
// threshold. Deliberately independent of the backward implementations: it
// only calls forward paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nn/tape.hpp"
#include "nn/tensor.hpp"

namespace dk::testsupport {

using DTensor = nn::Tensor<double>;
using DTape = nn::Tape<double>;

// `make_loss` must rebuild the scalar loss from the current contents of
// `inputs` on every call (with tape == nullptr for probe evaluations).
inline double max_grad_rel_error(std::vector<DTensor>& inputs,
                                 const std::function<DTensor(DTape*)>& make_loss,
                                 double h = 1e-3) {
    DTape tape;
    for (auto& t : inputs) t.set_requires_grad(true);
    DTensor loss = make_loss(&tape);
    tape.backward(loss);

    double worst = 0.0;
    for (auto& t : inputs) {
        REQUIRE(t.has_grad());
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + h;
            const double up = make_loss(nullptr).item();
            t.data()[i] = saved - h;
            const double down = make_loss(nullptr).item();
            t.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = t.grad()[static_cast<std::size_t>(i)];
            const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    for (auto& t : inputs) t.zero_grad();
    return worst;
}

inline DTensor random_dtensor(util::Rng& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

}  // namespace dk::testsupport
