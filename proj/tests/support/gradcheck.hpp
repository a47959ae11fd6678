// Central finite-difference gradient oracle (test-only).
//
// The oracle never looks at the tape: it re-evaluates a caller-supplied
// forward function under elementwise perturbations of the checked tensors
// and compares (f(x+h) - f(x-h)) / 2h against the autodiff gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "deficit/tensor.hpp"

namespace gradcheck {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct Report {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// `forward` must recompute the scalar loss from the current values of
/// `tensors` (building a fresh graph each call). `ad_grads` are the autodiff
/// gradients captured beforehand, parallel to `tensors`.
inline Report compare(std::vector<deficit::Tensor> tensors,
                      const std::vector<std::vector<double>>& ad_grads,
                      const std::function<double()>& forward, double h = 1e-5) {
    Report report;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        deficit::Tensor& x = tensors[t];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + h;
            const double up = forward();
            x[i] = keep - h;
            const double down = forward();
            x[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            report.max_rel_err = std::max(report.max_rel_err, rel_err(ad_grads[t][i], fd));
            ++report.checked;
        }
    }
    return report;
}

}  // namespace gradcheck
