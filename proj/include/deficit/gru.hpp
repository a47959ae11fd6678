// Gated recurrent unit cell and sequence driver.
//
// Gate equations:
//   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//   c_t = tanh(W_c x_t + U_c (r_t ⊗ h_{t-1}) + b_c)
//   h_t = (1 - z_t) ⊗ h_{t-1} + z_t ⊗ c_t

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deficit/adam.hpp"
#include "deficit/rng.hpp"
#include "deficit/tensor.hpp"

namespace deficit {

inline constexpr double kInitRange = 0.08;

struct GruParams {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;
    Tensor w_reset, u_reset, b_reset;
    Tensor w_update, u_update, b_update;
    Tensor w_cand, u_cand, b_cand;

    /// Weights uniform in (-kInitRange, kInitRange), biases zero.
    static GruParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
        GruParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        auto weight = [&](std::size_t rows, std::size_t cols) {
            Tensor t(Shape{rows, cols}, true);
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = rand_range(rng, -kInitRange, kInitRange);
            return t;
        };
        auto bias = [&](std::size_t n) { return Tensor(Shape{n}, true); };
        p.w_reset = weight(hidden_dim, input_dim);
        p.u_reset = weight(hidden_dim, hidden_dim);
        p.b_reset = bias(hidden_dim);
        p.w_update = weight(hidden_dim, input_dim);
        p.u_update = weight(hidden_dim, hidden_dim);
        p.b_update = bias(hidden_dim);
        p.w_cand = weight(hidden_dim, input_dim);
        p.u_cand = weight(hidden_dim, hidden_dim);
        p.b_cand = bias(hidden_dim);
        return p;
    }

    static GruParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
        GruParams p;
        p.input_dim = input_dim;
        p.hidden_dim = hidden_dim;
        p.w_reset = Tensor(Shape{hidden_dim, input_dim}, true);
        p.u_reset = Tensor(Shape{hidden_dim, hidden_dim}, true);
        p.b_reset = Tensor(Shape{hidden_dim}, true);
        p.w_update = Tensor(Shape{hidden_dim, input_dim}, true);
        p.u_update = Tensor(Shape{hidden_dim, hidden_dim}, true);
        p.b_update = Tensor(Shape{hidden_dim}, true);
        p.w_cand = Tensor(Shape{hidden_dim, input_dim}, true);
        p.u_cand = Tensor(Shape{hidden_dim, hidden_dim}, true);
        p.b_cand = Tensor(Shape{hidden_dim}, true);
        return p;
    }

    void append_parameters(const std::string& prefix, std::vector<NamedParam>& out) const {
        out.push_back({prefix + ".w_reset", w_reset});
        out.push_back({prefix + ".u_reset", u_reset});
        out.push_back({prefix + ".b_reset", b_reset});
        out.push_back({prefix + ".w_update", w_update});
        out.push_back({prefix + ".u_update", u_update});
        out.push_back({prefix + ".b_update", b_update});
        out.push_back({prefix + ".w_cand", w_cand});
        out.push_back({prefix + ".u_cand", u_cand});
        out.push_back({prefix + ".b_cand", b_cand});
    }
};

inline Tensor gru_step(Tape& tape, const GruParams& p, const Tensor& x, const Tensor& h_prev) {
    if (x.size() != p.input_dim)
        throw std::invalid_argument("gru_step: input has size " + std::to_string(x.size()) +
                                    ", expected " + std::to_string(p.input_dim));
    if (h_prev.size() != p.hidden_dim)
        throw std::invalid_argument("gru_step: state has size " + std::to_string(h_prev.size()) +
                                    ", expected " + std::to_string(p.hidden_dim));
    Tensor r = sigmoid(tape, affine2(tape, p.w_reset, x, p.u_reset, h_prev, p.b_reset));
    Tensor z = sigmoid(tape, affine2(tape, p.w_update, x, p.u_update, h_prev, p.b_update));
    Tensor gated = mul(tape, r, h_prev);
    Tensor cand = tanh(tape, affine2(tape, p.w_cand, x, p.u_cand, gated, p.b_cand));
    return lerp(tape, z, h_prev, cand);
}

/// Runs the cell over `inputs` from a given initial state and returns all
/// hidden states h_1..h_T. An empty input sequence yields an empty list.
inline std::vector<Tensor> gru_forward(Tape& tape, const GruParams& p, std::span<const Tensor> inputs,
                                       const Tensor& h0) {
    std::vector<Tensor> states;
    states.reserve(inputs.size());
    Tensor h = h0;
    for (const Tensor& x : inputs) {
        h = gru_step(tape, p, x, h);
        states.push_back(h);
    }
    return states;
}

}  // namespace deficit
