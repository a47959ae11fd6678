// Adam optimizer over a named, ordered parameter list.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/tensor.hpp"

namespace deficit {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct AdamState {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;                  // t, incremented before each update
    std::vector<std::vector<double>> m;   // first moments, parallel to the param list
    std::vector<std::vector<double>> v;   // second moments
};

/// One Adam update over all parameters. Moments are bias-corrected with the
/// incremented step count; gradients are zeroed after the update.
inline void adam_step(std::vector<NamedParam>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor.size(), 0.0);
            state.v[i].assign(params[i].tensor.size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    for (const auto& p : params) {
        if (!p.tensor.requires_grad() || !p.tensor.has_grad())
            throw std::invalid_argument("adam_step: missing gradient on parameter '" + p.name + "'");
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double corr1 = 1.0 - std::pow(state.beta1, t);
    const double corr2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].tensor;
        if (state.m[i].size() != p.size())
            throw std::invalid_argument("adam_step: parameter '" + params[i].name + "' changed size");
        double* value = p.data();
        double* grad = p.grad();
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        const std::size_t n = p.size();
        for (std::size_t j = 0; j < n; ++j) {
            const double g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[j] / corr1;
            const double v_hat = v[j] / corr2;
            value[j] -= state.alpha * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
        p.zero_grad();
    }
}

}  // namespace deficit
