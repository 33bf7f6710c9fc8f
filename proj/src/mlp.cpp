#include "lab/mlp.hpp"

#include <cmath>

#include "lab/gemm.hpp"

namespace lab {

void MlpConfig::validate() const {
    if (layer_widths.size() < 2)
        fail(ErrKind::input, "MlpConfig: need at least input and output widths");
    for (size_t w : layer_widths)
        if (w == 0) fail(ErrKind::input, "MlpConfig: zero layer width");
}

size_t MlpConfig::param_count() const {
    size_t n = 0;
    for (size_t l = 0; l + 1 < layer_widths.size(); ++l)
        n += layer_widths[l] * layer_widths[l + 1] + layer_widths[l + 1];
    return n;
}

Mlp::Mlp(Tape& tape, MlpConfig config, uint64_t seed) : tape_(&tape), config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const auto& w = config_.layer_widths;
    for (size_t l = 0; l + 1 < w.size(); ++l) {
        size_t fan_in = w[l], fan_out = w[l + 1];
        double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::vector<double> wv(fan_out * fan_in);
        for (auto& x : wv) x = rng.normal(0.0, std);
        weights_.push_back(Tensor::leaf(tape, {fan_out, fan_in}, std::move(wv), true));
        biases_.push_back(Tensor::zeros(tape, {fan_out}, true));
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    size_t in = config_.layer_widths.front();
    if (x.cols() != in)
        fail(ErrKind::dimension, "mlp_forward: input width " + std::to_string(x.cols()) +
                                     " != " + std::to_string(in));
    Tensor h = x;
    for (size_t l = 0; l < weights_.size(); ++l) {
        h = affine(weights_[l], h, biases_[l]);
        if (l + 1 < weights_.size()) h = relu(h);
    }
    return h;
}

std::vector<double> Mlp::forward_raw(const std::vector<double>& x, size_t batch) const {
    size_t in = config_.layer_widths.front();
    if (x.size() != batch * in)
        fail(ErrKind::dimension, "mlp forward_raw: bad input length");
    std::vector<double> cur = x;
    for (size_t l = 0; l < weights_.size(); ++l) {
        size_t out_w = config_.layer_widths[l + 1];
        std::vector<double> next(batch * out_w);
        gemm::nt(batch, out_w, config_.layer_widths[l], cur.data(), weights_[l].values().data(),
                 next.data(), false);
        const auto& bv = biases_[l].values();
        for (size_t r = 0; r < batch; ++r)
            for (size_t c = 0; c < out_w; ++c) next[r * out_w + c] += bv[c];
        if (l + 1 < weights_.size()) {
            for (auto& v : next)
                if (v < 0.0) v = 0.0;
        }
        cur = std::move(next);
    }
    return cur;
}

std::vector<uint8_t> Mlp::activation_pattern(const std::vector<double>& x) const {
    size_t in = config_.layer_widths.front();
    if (x.size() != in) fail(ErrKind::dimension, "activation_pattern: expected a single input row");
    std::vector<uint8_t> bits;
    bits.reserve(hidden_units());
    std::vector<double> cur = x;
    for (size_t l = 0; l + 1 < weights_.size(); ++l) {
        size_t out_w = config_.layer_widths[l + 1];
        std::vector<double> pre(out_w);
        gemm::nt(1, out_w, config_.layer_widths[l], cur.data(), weights_[l].values().data(),
                 pre.data(), false);
        const auto& bv = biases_[l].values();
        for (size_t c = 0; c < out_w; ++c) pre[c] += bv[c];
        for (size_t c = 0; c < out_w; ++c) bits.push_back(pre[c] > 0.0 ? 1 : 0);
        for (auto& v : pre)
            if (v < 0.0) v = 0.0;
        cur = std::move(pre);
    }
    return bits;
}

size_t Mlp::hidden_units() const {
    size_t n = 0;
    for (size_t l = 1; l + 1 < config_.layer_widths.size(); ++l) n += config_.layer_widths[l];
    return n;
}

std::vector<Tensor> Mlp::params() const {
    std::vector<Tensor> ps;
    for (size_t l = 0; l < weights_.size(); ++l) {
        ps.push_back(weights_[l]);
        ps.push_back(biases_[l]);
    }
    return ps;
}

std::vector<NamedParam> Mlp::named_params() const {
    std::vector<NamedParam> ps;
    for (size_t l = 0; l < weights_.size(); ++l) {
        ps.push_back({"layer" + std::to_string(l) + ".weight", weights_[l]});
        ps.push_back({"layer" + std::to_string(l) + ".bias", biases_[l]});
    }
    return ps;
}

}  // namespace lab
