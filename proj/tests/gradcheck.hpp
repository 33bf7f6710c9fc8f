#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lab/tensor.hpp"

// Central finite-difference oracle. Rebuilds the loss from scratch for every
// probe, so it stays independent of the backward implementation it checks.
namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    std::string where;
};

inline Result compare(lab::Tape& tape, std::vector<lab::Tensor> leaves,
                      const std::function<lab::Tensor()>& make_loss, double h = 1e-6) {
    for (auto& p : leaves) p.zero_grad();
    tape.reset();
    lab::Tensor loss = make_loss();
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& p : leaves) analytic.push_back(p.grad());
    tape.reset();

    auto eval = [&]() {
        lab::NoGradGuard ng(tape);
        return make_loss().item();
    };

    Result res;
    for (size_t pi = 0; pi < leaves.size(); ++pi) {
        auto& vals = leaves[pi].values();
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + h;
            double up = eval();
            vals[i] = orig - h;
            double dn = eval();
            vals[i] = orig;
            double fd = (up - dn) / (2.0 * h);
            double an = analytic[pi][i];
            double denom = std::max({std::fabs(an), std::fabs(fd), 1e-4});
            double rel = std::fabs(an - fd) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.where = "leaf " + std::to_string(pi) + " index " + std::to_string(i) +
                            " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
            }
        }
    }
    return res;
}

}  // namespace gradcheck
