#include "lab/optim.hpp"

#include <cmath>

namespace lab {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        auto& grad = p.data_ptr()->grad;
        if (grad.size() != p.numel())
            fail(ErrKind::contract, "adam_step: parameter " + std::to_string(pi) +
                                        " has no gradient; run backward first");
        auto& val = p.values();
        auto& m = m_[pi];
        auto& v = v_[pi];
        double shrink = 1.0 - cfg_.learning_rate * cfg_.weight_decay;
        for (size_t i = 0; i < val.size(); ++i) {
            if (cfg_.weight_decay != 0.0) val[i] *= shrink;
            double g = grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            val[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p.zero_grad();
    }
}

}  // namespace lab
