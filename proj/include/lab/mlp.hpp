#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lab/checkpoint.hpp"
#include "lab/tensor.hpp"

namespace lab {

// Feed-forward ReLU network: alternating affine/ReLU on hidden layers, linear
// output layer.
struct MlpConfig {
    std::vector<size_t> layer_widths;  // input width first, output width last

    void validate() const;
    size_t param_count() const;
};

class Mlp {
public:
    // Kaiming-style fan-in init for weights, zero biases.
    Mlp(Tape& tape, MlpConfig config, uint64_t seed);

    // x: [in] or [B,in]; differentiable when recorded on the tape.
    Tensor forward(const Tensor& x) const;

    // Fast forward for frozen evaluation; no tape traffic. Input is a flat
    // row-major batch; returns the flat output batch.
    std::vector<double> forward_raw(const std::vector<double>& x, size_t batch) const;

    // One bit per hidden unit, layer by layer: 1 iff pre-activation > 0.
    std::vector<uint8_t> activation_pattern(const std::vector<double>& x) const;

    size_t hidden_units() const;
    const MlpConfig& config() const { return config_; }
    std::vector<Tensor> params() const;
    std::vector<NamedParam> named_params() const;
    Tape& tape() const { return *tape_; }

private:
    Tape* tape_;
    MlpConfig config_;
    std::vector<Tensor> weights_;  // [out,in] per layer
    std::vector<Tensor> biases_;   // [out] per layer
};

}  // namespace lab
