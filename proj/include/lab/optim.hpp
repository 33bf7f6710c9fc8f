#pragma once

#include <vector>

#include "lab/tensor.hpp"

namespace lab {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled: params shrink by lr*wd before the Adam delta
};

// Adam with bias correction and decoupled weight decay. Moment buffers are
// keyed by position in the parameter list handed to the constructor.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    // Consumes .grad of every parameter; throws a contract error if a
    // parameter has no gradient buffer. Clears grads afterwards.
    void step();

    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
    double learning_rate() const { return cfg_.learning_rate; }
    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t step_ = 0;
};

}  // namespace lab
