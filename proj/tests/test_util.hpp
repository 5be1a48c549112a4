#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "framecast/autodiff.hpp"
#include "framecast/rng.hpp"

namespace testutil {

using framecast::Param;
using framecast::Rng;
using framecast::Tensor;
namespace ad = framecast::ad;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_image(int h, int w, Rng& rng) {
    Tensor t({h, w});
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

struct GradReport {
    double max_rel = 0.0;
    std::string worst_param;
    int checked = 0;
};

// Central finite differences against tape gradients for every element of the
// given parameters. The relative error uses a small absolute floor so that
// genuinely-zero gradients do not dominate.
inline GradReport check_gradients(std::span<Param* const> params,
                                  const std::function<ad::Var(ad::Tape&)>& build,
                                  double h = 1e-5) {
    GradReport report;
    ad::Tape tape;
    ad::Var loss = build(tape);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(tape.grad_of(*p));

    auto eval = [&]() {
        ad::Tape t;
        return t.value(build(t)).item();
    };
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (size_t i = 0; i < p.value.size(); ++i) {
            const double old = p.value[i];
            p.value[i] = old + h;
            const double up = eval();
            p.value[i] = old - h;
            const double down = eval();
            p.value[i] = old;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max(std::abs(a) + std::abs(numeric), 1e-6);
            ++report.checked;
            if (rel > report.max_rel) {
                report.max_rel = rel;
                report.worst_param = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

}  // namespace testutil
