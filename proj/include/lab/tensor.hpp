#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lab/common.hpp"

// Reverse-mode autodiff over dense row-major f64 tensors of rank 1 or 2.
// Operations record closures on an explicit Tape; backward() replays the tape
// in reverse. Leaf tensors (parameters, inputs) persist across tape resets.
namespace lab {

class Tape;

struct TensorData {
    std::vector<size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value once touched by backward
    bool requires_grad = false;
    bool is_leaf = true;
    int64_t node_id = -1;  // unique within the owning tape's lifetime
    Tape* tape = nullptr;

    size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Cheap shared handle; copies alias the same storage so gradients written by
// backward() are visible through every handle.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Tape& tape, std::vector<size_t> shape, std::vector<double> values,
                       bool requires_grad);
    static Tensor zeros(Tape& tape, std::vector<size_t> shape, bool requires_grad);
    static Tensor scalar(Tape& tape, double v, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const std::vector<size_t>& shape() const { return d_->shape; }
    size_t numel() const { return d_->value.size(); }
    size_t rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
    size_t cols() const { return d_->shape.back(); }
    bool is_scalar() const { return numel() == 1; }

    std::vector<double>& values() { return d_->value; }
    const std::vector<double>& values() const { return d_->value; }
    double item() const;

    std::vector<double>& grad() { d_->ensure_grad(); return d_->grad; }
    const std::vector<double>& grad_view() const { return d_->grad; }
    void zero_grad() { d_->grad.assign(d_->value.size(), 0.0); }

    bool requires_grad() const { return d_->requires_grad; }
    int64_t node_id() const { return d_->node_id; }
    Tape* tape() const { return d_->tape; }

    std::shared_ptr<TensorData> data_ptr() const { return d_; }

private:
    friend class Tape;
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

class Tape {
public:
    struct Node {
        std::shared_ptr<TensorData> out;
        std::function<void()> backward;
    };

    // Records an op result. Inputs precede outputs by construction, which is
    // the topological order backward() relies on.
    Tensor make_result(std::vector<size_t> shape, bool requires_grad);
    void record(const Tensor& out, std::function<void()> fn);

    int64_t fresh_id() { return next_id_++; }
    size_t size() const { return nodes_.size(); }

    bool grad_enabled() const { return grad_enabled_; }

    // Drops recorded nodes. Leaf tensors (and their gradients) are untouched.
    void reset() { nodes_.clear(); }

    // Accumulates d(loss)/d(leaf) into every reachable leaf's grad buffer.
    // Non-leaf grads are scratch: they are zeroed at the start of each call,
    // so repeated calls without reset add up only in the leaves.
    void backward(const Tensor& loss);

private:
    friend class NoGradGuard;
    std::vector<Node> nodes_;
    int64_t next_id_ = 0;
    bool grad_enabled_ = true;
};

// Scoped gradient switch: results created while active neither require grad
// nor record tape nodes. Frozen-evaluation paths use this to keep forward
// passes free of tape growth.
class NoGradGuard {
public:
    explicit NoGradGuard(Tape& tape) : tape_(&tape), prev_(tape.grad_enabled_) {
        tape_->grad_enabled_ = false;
    }
    ~NoGradGuard() { tape_->grad_enabled_ = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* tape_;
    bool prev_;
};

// --- operations ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);                        // -> scalar
Tensor mean(const Tensor& a);                       // -> scalar
Tensor relu(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k] x [k,n]

// W [out,in]; x [in] or [B,in]; b [out] (pass an undefined Tensor for none)
Tensor affine(const Tensor& W, const Tensor& x, const Tensor& b);

Tensor mse(const Tensor& pred, const Tensor& target);

// Single vector of logits against one target class.
Tensor softmax_cross_entropy(const Tensor& logits, int target_index);
// Batched rows of logits; target -1 means "ignore this row". Mean over counted rows.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Row-wise layer norm with learned gain/bias (both [cols]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// table [V,D], ids in [0,V) -> [ids.size(), D]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// x [B*T, D] += pos_table rows tiled per sequence of length T
Tensor add_positional(const Tensor& x, const Tensor& pos_table, size_t seq_len);

// picks rows of x -> [indices.size(), D]
Tensor select_rows(const Tensor& x, const std::vector<size_t>& indices);

// Fused multi-head self-attention. q,k,v are [B*T, D] with B sequences of
// length T laid out contiguously; D split into n_heads. Scores scaled by
// 1/sqrt(head_dim); optional causal mask.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           size_t n_heads, size_t seq_len, bool causal);

void backward(const Tensor& loss);  // convenience: loss.tape()->backward(loss)

std::string shape_str(const std::vector<size_t>& s);

}  // namespace lab
