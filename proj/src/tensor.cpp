#include "lab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "lab/gemm.hpp"

namespace lab {

std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) fail(ErrKind::dimension, "zero extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tape& tape_of(const Tensor& a) {
    if (!a.defined() || a.tape() == nullptr) fail(ErrKind::contract, "tensor has no tape");
    return *a.tape();
}

void check_same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape() != b.tape()) fail(ErrKind::contract, "tensors belong to different tapes");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(ErrKind::dimension, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                     " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::leaf(Tape& tape, std::vector<size_t> shape, std::vector<double> values,
                    bool requires_grad) {
    size_t n = shape_numel(shape);
    if (values.size() != n)
        fail(ErrKind::dimension, "leaf: " + std::to_string(values.size()) +
                                     " values for shape " + shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->value = std::move(values);
    d->requires_grad = requires_grad;
    d->is_leaf = true;
    d->node_id = tape.fresh_id();
    d->tape = &tape;
    return Tensor(std::move(d));
}

Tensor Tensor::zeros(Tape& tape, std::vector<size_t> shape, bool requires_grad) {
    size_t n = shape_numel(shape);
    return leaf(tape, std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(Tape& tape, double v, bool requires_grad) {
    return leaf(tape, {1}, {v}, requires_grad);
}

double Tensor::item() const {
    if (!is_scalar()) fail(ErrKind::contract, "item() on non-scalar tensor " + shape_str(shape()));
    return d_->value[0];
}

Tensor Tape::make_result(std::vector<size_t> shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    size_t n = shape_numel(shape);
    d->shape = std::move(shape);
    d->value.assign(n, 0.0);
    d->requires_grad = requires_grad && grad_enabled_;
    d->is_leaf = false;
    d->node_id = fresh_id();
    d->tape = this;
    return Tensor(std::move(d));
}

void Tape::record(const Tensor& out, std::function<void()> fn) {
    if (!grad_enabled_) return;
    nodes_.push_back(Node{out.data_ptr(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_scalar())
        fail(ErrKind::contract, "backward: loss must be scalar, got " + shape_str(loss.shape()));
    // Non-leaf grads are scratch buffers for this pass only; leaf grads keep
    // accumulating across calls.
    for (auto& node : nodes_) {
        node.out->grad.assign(node.out->value.size(), 0.0);
    }
    auto ld = loss.data_ptr();
    ld->ensure_grad();
    ld->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward) it->backward();
    }
}

void backward(const Tensor& loss) { tape_of(loss).backward(loss); }

// --- elementwise -------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_tape(a, b);
    check_same_shape(a, b, name);
    Tape& t = tape_of(a);
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = t.make_result(a.shape(), rg);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    if (rg) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        t.record(out, [ad, bd, od, bwd]() {
            ad->ensure_grad();
            bd->ensure_grad();
            for (size_t i = 0; i < od->value.size(); ++i) {
                bwd(od->grad[i], ad->value[i], bd->value[i], ad->grad[i], bd->grad[i],
                    ad->requires_grad, bd->requires_grad);
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double& ga, double& gb, bool ra, bool rb) {
            if (ra) ga += g;
            if (rb) gb += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double& ga, double& gb, bool ra, bool rb) {
            if (ra) ga += g;
            if (rb) gb -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double x, double y, double& ga, double& gb, bool ra, bool rb) {
            if (ra) ga += g * y;
            if (rb) gb += g * x;
        });
}

Tensor scale(const Tensor& a, double c) {
    Tape& t = tape_of(a);
    Tensor out = t.make_result(a.shape(), a.requires_grad());
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
    if (a.requires_grad()) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        t.record(out, [ad, od, c]() {
            ad->ensure_grad();
            for (size_t i = 0; i < od->value.size(); ++i) ad->grad[i] += c * od->grad[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    Tape& t = tape_of(a);
    Tensor out = t.make_result({1}, a.requires_grad());
    out.values()[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    if (a.requires_grad()) {
        auto ad = a.data_ptr(), od = out.data_ptr();
        t.record(out, [ad, od]() {
            ad->ensure_grad();
            double g = od->grad[0];
            for (auto& gi : ad->grad) gi += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& x) {
    Tape& t = tape_of(x);
    Tensor out = t.make_result(x.shape(), x.requires_grad());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (x.requires_grad()) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        // subgradient at 0 fixed to 0: gradient flows only where input > 0
        t.record(out, [xd, od]() {
            xd->ensure_grad();
            for (size_t i = 0; i < od->value.size(); ++i) {
                if (xd->value[i] > 0.0) xd->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b);
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        fail(ErrKind::dimension,
             "matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tape& t = tape_of(a);
    bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = t.make_result({m, n}, rg);
    gemm::nn(m, n, k, a.values().data(), b.values().data(), out.values().data(), false);
    if (rg) {
        auto ad = a.data_ptr(), bd = b.data_ptr(), od = out.data_ptr();
        t.record(out, [ad, bd, od, m, n, k]() {
            if (ad->requires_grad) {
                ad->ensure_grad();
                // dA += dC * B^T
                gemm::nt(m, k, n, od->grad.data(), bd->value.data(), ad->grad.data(), true);
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                // dB += A^T * dC
                gemm::tn_acc(k, n, m, ad->value.data(), od->grad.data(), bd->grad.data());
            }
        });
    }
    return out;
}

Tensor affine(const Tensor& W, const Tensor& x, const Tensor& b) {
    check_same_tape(W, x);
    if (W.shape().size() != 2)
        fail(ErrKind::dimension, "affine: W must be rank 2, got " + shape_str(W.shape()));
    size_t out_dim = W.shape()[0], in_dim = W.shape()[1];
    bool batched = x.shape().size() == 2;
    size_t batch = batched ? x.shape()[0] : 1;
    size_t x_cols = x.shape().back();
    if (x_cols != in_dim)
        fail(ErrKind::dimension, "affine: W " + shape_str(W.shape()) + " incompatible with x " +
                                     shape_str(x.shape()));
    if (b.defined()) {
        check_same_tape(W, b);
        if (b.numel() != out_dim)
            fail(ErrKind::dimension, "affine: bias " + shape_str(b.shape()) +
                                         " does not broadcast over output width " +
                                         std::to_string(out_dim));
    }
    Tape& t = tape_of(W);
    bool rg = W.requires_grad() || x.requires_grad() || (b.defined() && b.requires_grad());
    Tensor out = batched ? t.make_result({batch, out_dim}, rg) : t.make_result({out_dim}, rg);
    gemm::nt(batch, out_dim, in_dim, x.values().data(), W.values().data(), out.values().data(),
             false);
    if (b.defined()) {
        auto& ov = out.values();
        const auto& bv = b.values();
        for (size_t r = 0; r < batch; ++r)
            for (size_t c = 0; c < out_dim; ++c) ov[r * out_dim + c] += bv[c];
    }
    if (rg) {
        auto wd = W.data_ptr(), xd = x.data_ptr(), od = out.data_ptr();
        auto bd = b.defined() ? b.data_ptr() : nullptr;
        t.record(out, [wd, xd, bd, od, batch, out_dim, in_dim]() {
            if (xd->requires_grad) {
                xd->ensure_grad();
                // dx += dy * W
                gemm::nn(batch, in_dim, out_dim, od->grad.data(), wd->value.data(),
                         xd->grad.data(), true);
            }
            if (wd->requires_grad) {
                wd->ensure_grad();
                // dW += dy^T * x
                gemm::tn_acc(out_dim, in_dim, batch, od->grad.data(), xd->value.data(),
                             wd->grad.data());
            }
            if (bd && bd->requires_grad) {
                bd->ensure_grad();
                for (size_t r = 0; r < batch; ++r)
                    for (size_t c = 0; c < out_dim; ++c) bd->grad[c] += od->grad[r * out_dim + c];
            }
        });
    }
    return out;
}

// --- losses ------------------------------------------------------------------

Tensor mse(const Tensor& pred, const Tensor& target) {
    check_same_tape(pred, target);
    check_same_shape(pred, target, "mse");
    Tape& t = tape_of(pred);
    bool rg = pred.requires_grad() || target.requires_grad();
    Tensor out = t.make_result({1}, rg);
    const auto& pv = pred.values();
    const auto& tv = target.values();
    double acc = 0.0;
    for (size_t i = 0; i < pv.size(); ++i) {
        double d = pv[i] - tv[i];
        acc += d * d;
    }
    double n = static_cast<double>(pv.size());
    out.values()[0] = acc / n;
    if (rg) {
        auto pd = pred.data_ptr(), td = target.data_ptr(), od = out.data_ptr();
        t.record(out, [pd, td, od, n]() {
            double g = od->grad[0] * 2.0 / n;
            if (pd->requires_grad) {
                pd->ensure_grad();
                for (size_t i = 0; i < pd->value.size(); ++i)
                    pd->grad[i] += g * (pd->value[i] - td->value[i]);
            }
            if (td->requires_grad) {
                td->ensure_grad();
                for (size_t i = 0; i < td->value.size(); ++i)
                    td->grad[i] -= g * (pd->value[i] - td->value[i]);
            }
        });
    }
    return out;
}

namespace {

// softmax of one row with max-subtraction; returns log-sum-exp offset pieces
void softmax_row(const double* logits, size_t n, double* probs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (size_t i = 0; i < n; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        z += probs[i];
    }
    double inv = 1.0 / z;
    for (size_t i = 0; i < n; ++i) probs[i] *= inv;
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, int target_index) {
    if (logits.shape().size() != 1)
        fail(ErrKind::dimension,
             "softmax_cross_entropy: expected logit vector, got " + shape_str(logits.shape()));
    std::vector<int> t{target_index};
    return softmax_cross_entropy(logits, t);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    size_t rows = logits.rows(), cols = logits.cols();
    if (targets.size() != rows)
        fail(ErrKind::dimension, "softmax_cross_entropy: " + std::to_string(targets.size()) +
                                     " targets for " + std::to_string(rows) + " rows");
    for (int tv : targets) {
        if (tv != -1 && (tv < 0 || static_cast<size_t>(tv) >= cols))
            fail(ErrKind::index, "softmax_cross_entropy: target " + std::to_string(tv) +
                                     " out of range [0," + std::to_string(cols) + ")");
    }
    Tape& t = tape_of(logits);
    Tensor out = t.make_result({1}, logits.requires_grad());
    auto probs = std::make_shared<std::vector<double>>(rows * cols);
    const auto& lv = logits.values();
    double loss = 0.0;
    size_t counted = 0;
    for (size_t r = 0; r < rows; ++r) {
        softmax_row(lv.data() + r * cols, cols, probs->data() + r * cols);
        if (targets[r] == -1) continue;
        ++counted;
        double p = (*probs)[r * cols + static_cast<size_t>(targets[r])];
        loss -= std::log(std::max(p, 1e-300));
    }
    if (counted == 0) fail(ErrKind::contract, "softmax_cross_entropy: no counted rows");
    out.values()[0] = loss / static_cast<double>(counted);
    if (logits.requires_grad()) {
        auto ld = logits.data_ptr(), od = out.data_ptr();
        auto tgt = std::make_shared<std::vector<int>>(targets);
        t.record(out, [ld, od, probs, tgt, rows, cols, counted]() {
            ld->ensure_grad();
            double g = od->grad[0] / static_cast<double>(counted);
            for (size_t r = 0; r < rows; ++r) {
                int tv = (*tgt)[r];
                if (tv == -1) continue;
                const double* pr = probs->data() + r * cols;
                double* gr = ld->grad.data() + r * cols;
                for (size_t c = 0; c < cols; ++c) gr[c] += g * pr[c];
                gr[static_cast<size_t>(tv)] -= g;
            }
        });
    }
    return out;
}

// --- normalization -----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    size_t rows = x.rows(), cols = x.cols();
    if (gamma.numel() != cols || beta.numel() != cols)
        fail(ErrKind::dimension, "layer_norm: gain/bias must have width " + std::to_string(cols));
    Tape& t = tape_of(x);
    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor out = t.make_result(x.shape(), rg);
    auto xhat = std::make_shared<std::vector<double>>(rows * cols);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.values();
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * cols;
        double mu = 0.0;
        for (size_t c = 0; c < cols; ++c) mu += xr[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            double d = xr[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        double* hr = xhat->data() + r * cols;
        double* orow = ov.data() + r * cols;
        for (size_t c = 0; c < cols; ++c) {
            hr[c] = (xr[c] - mu) * inv;
            orow[c] = hr[c] * gv[c] + bv[c];
        }
    }
    if (rg) {
        auto xd = x.data_ptr(), gd = gamma.data_ptr(), bd = beta.data_ptr(), od = out.data_ptr();
        t.record(out, [xd, gd, bd, od, xhat, inv_std, rows, cols]() {
            double n = static_cast<double>(cols);
            for (size_t r = 0; r < rows; ++r) {
                const double* gr = od->grad.data() + r * cols;
                const double* hr = xhat->data() + r * cols;
                if (gd->requires_grad) {
                    gd->ensure_grad();
                    for (size_t c = 0; c < cols; ++c) gd->grad[c] += gr[c] * hr[c];
                }
                if (bd->requires_grad) {
                    bd->ensure_grad();
                    for (size_t c = 0; c < cols; ++c) bd->grad[c] += gr[c];
                }
                if (xd->requires_grad) {
                    xd->ensure_grad();
                    double sum_dy = 0.0, sum_dyh = 0.0;
                    for (size_t c = 0; c < cols; ++c) {
                        double dyg = gr[c] * gd->value[c];
                        sum_dy += dyg;
                        sum_dyh += dyg * hr[c];
                    }
                    double inv = (*inv_std)[r];
                    double* xg = xd->grad.data() + r * cols;
                    for (size_t c = 0; c < cols; ++c) {
                        double dyg = gr[c] * gd->value[c];
                        xg[c] += inv * (dyg - sum_dy / n - hr[c] * sum_dyh / n);
                    }
                }
            }
        });
    }
    return out;
}

// --- gather / scatter ----------------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2)
        fail(ErrKind::dimension, "embedding: table must be rank 2");
    size_t vocab = table.shape()[0], dim = table.shape()[1];
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab)
            fail(ErrKind::input, "embedding: token id " + std::to_string(id) +
                                     " out of range [0," + std::to_string(vocab) + ")");
    }
    Tape& t = tape_of(table);
    Tensor out = t.make_result({ids.size(), dim}, table.requires_grad());
    const auto& tv = table.values();
    auto& ov = out.values();
    for (size_t r = 0; r < ids.size(); ++r) {
        std::memcpy(ov.data() + r * dim, tv.data() + static_cast<size_t>(ids[r]) * dim,
                    dim * sizeof(double));
    }
    if (table.requires_grad()) {
        auto td = table.data_ptr(), od = out.data_ptr();
        auto idc = std::make_shared<std::vector<int>>(ids);
        t.record(out, [td, od, idc, dim]() {
            td->ensure_grad();
            for (size_t r = 0; r < idc->size(); ++r) {
                const double* g = od->grad.data() + r * dim;
                double* tg = td->grad.data() + static_cast<size_t>((*idc)[r]) * dim;
                for (size_t c = 0; c < dim; ++c) tg[c] += g[c];
            }
        });
    }
    return out;
}

Tensor add_positional(const Tensor& x, const Tensor& pos_table, size_t seq_len) {
    check_same_tape(x, pos_table);
    size_t rows = x.rows(), dim = x.cols();
    if (seq_len == 0 || rows % seq_len != 0)
        fail(ErrKind::dimension, "add_positional: rows not divisible by sequence length");
    if (pos_table.shape().size() != 2 || pos_table.shape()[0] < seq_len ||
        pos_table.shape()[1] != dim)
        fail(ErrKind::dimension, "add_positional: table " + shape_str(pos_table.shape()) +
                                     " too small for T=" + std::to_string(seq_len));
    Tape& t = tape_of(x);
    bool rg = x.requires_grad() || pos_table.requires_grad();
    Tensor out = t.make_result(x.shape(), rg);
    const auto& xv = x.values();
    const auto& pv = pos_table.values();
    auto& ov = out.values();
    for (size_t r = 0; r < rows; ++r) {
        size_t p = r % seq_len;
        for (size_t c = 0; c < dim; ++c) ov[r * dim + c] = xv[r * dim + c] + pv[p * dim + c];
    }
    if (rg) {
        auto xd = x.data_ptr(), pd = pos_table.data_ptr(), od = out.data_ptr();
        t.record(out, [xd, pd, od, rows, dim, seq_len]() {
            if (xd->requires_grad) {
                xd->ensure_grad();
                for (size_t i = 0; i < rows * dim; ++i) xd->grad[i] += od->grad[i];
            }
            if (pd->requires_grad) {
                pd->ensure_grad();
                for (size_t r = 0; r < rows; ++r) {
                    size_t p = r % seq_len;
                    for (size_t c = 0; c < dim; ++c)
                        pd->grad[p * dim + c] += od->grad[r * dim + c];
                }
            }
        });
    }
    return out;
}

Tensor select_rows(const Tensor& x, const std::vector<size_t>& indices) {
    size_t rows = x.rows(), dim = x.cols();
    for (size_t i : indices) {
        if (i >= rows)
            fail(ErrKind::index, "select_rows: row " + std::to_string(i) + " out of range");
    }
    Tape& t = tape_of(x);
    Tensor out = t.make_result({indices.size(), dim}, x.requires_grad());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (size_t r = 0; r < indices.size(); ++r)
        std::memcpy(ov.data() + r * dim, xv.data() + indices[r] * dim, dim * sizeof(double));
    if (x.requires_grad()) {
        auto xd = x.data_ptr(), od = out.data_ptr();
        auto idx = std::make_shared<std::vector<size_t>>(indices);
        t.record(out, [xd, od, idx, dim]() {
            xd->ensure_grad();
            for (size_t r = 0; r < idx->size(); ++r) {
                const double* g = od->grad.data() + r * dim;
                double* xg = xd->grad.data() + (*idx)[r] * dim;
                for (size_t c = 0; c < dim; ++c) xg[c] += g[c];
            }
        });
    }
    return out;
}

// --- attention -----------------------------------------------------------------

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t n_heads,
                           size_t seq_len, bool causal) {
    check_same_tape(q, k);
    check_same_tape(q, v);
    check_same_shape(q, k, "attention");
    check_same_shape(q, v, "attention");
    size_t rows = q.rows(), dim = q.cols();
    if (n_heads == 0 || dim % n_heads != 0)
        fail(ErrKind::dimension, "attention: width " + std::to_string(dim) +
                                     " not divisible by " + std::to_string(n_heads) + " heads");
    if (seq_len == 0 || rows % seq_len != 0)
        fail(ErrKind::dimension, "attention: rows not divisible by sequence length");
    size_t n_seq = rows / seq_len;
    size_t hd = dim / n_heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(hd));

    Tape& t = tape_of(q);
    bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
    Tensor out = t.make_result(q.shape(), rg);
    // saved softmax weights, laid out [seq][head][T,T]
    auto attn = std::make_shared<std::vector<double>>(n_seq * n_heads * seq_len * seq_len);

    const auto& qv = q.values();
    const auto& kv = k.values();
    const auto& vv = v.values();
    auto& ov = out.values();

    std::vector<double> Qh(seq_len * hd), Kh(seq_len * hd), Vh(seq_len * hd), Oh(seq_len * hd);
    std::vector<double> scores(seq_len * seq_len);
    for (size_t s = 0; s < n_seq; ++s) {
        size_t base = s * seq_len;
        for (size_t h = 0; h < n_heads; ++h) {
            size_t off = h * hd;
            for (size_t i = 0; i < seq_len; ++i) {
                std::memcpy(Qh.data() + i * hd, qv.data() + (base + i) * dim + off,
                            hd * sizeof(double));
                std::memcpy(Kh.data() + i * hd, kv.data() + (base + i) * dim + off,
                            hd * sizeof(double));
                std::memcpy(Vh.data() + i * hd, vv.data() + (base + i) * dim + off,
                            hd * sizeof(double));
            }
            gemm::nt(seq_len, seq_len, hd, Qh.data(), Kh.data(), scores.data(), false);
            double* A = attn->data() + (s * n_heads + h) * seq_len * seq_len;
            for (size_t i = 0; i < seq_len; ++i) {
                double* row = scores.data() + i * seq_len;
                size_t limit = causal ? i + 1 : seq_len;
                for (size_t j = 0; j < limit; ++j) row[j] *= scl;
                for (size_t j = limit; j < seq_len; ++j) row[j] = -std::numeric_limits<double>::infinity();
                softmax_row(row, seq_len, A + i * seq_len);
            }
            gemm::nn(seq_len, hd, seq_len, A, Vh.data(), Oh.data(), false);
            for (size_t i = 0; i < seq_len; ++i)
                std::memcpy(ov.data() + (base + i) * dim + off, Oh.data() + i * hd,
                            hd * sizeof(double));
        }
    }

    if (rg) {
        auto qd = q.data_ptr(), kd = k.data_ptr(), vd = v.data_ptr(), od = out.data_ptr();
        t.record(out, [qd, kd, vd, od, attn, n_seq, n_heads, seq_len, hd, scl]() {
            size_t dim = n_heads * hd;
            qd->ensure_grad();
            kd->ensure_grad();
            vd->ensure_grad();
            std::vector<double> Qh(seq_len * hd), Kh(seq_len * hd), Vh(seq_len * hd);
            std::vector<double> dOh(seq_len * hd), dQh(seq_len * hd), dKh(seq_len * hd),
                dVh(seq_len * hd);
            std::vector<double> dP(seq_len * seq_len), dS(seq_len * seq_len);
            for (size_t s = 0; s < n_seq; ++s) {
                size_t base = s * seq_len;
                for (size_t h = 0; h < n_heads; ++h) {
                    size_t off = h * hd;
                    const double* A = attn->data() + (s * n_heads + h) * seq_len * seq_len;
                    for (size_t i = 0; i < seq_len; ++i) {
                        std::memcpy(Qh.data() + i * hd, qd->value.data() + (base + i) * dim + off,
                                    hd * sizeof(double));
                        std::memcpy(Kh.data() + i * hd, kd->value.data() + (base + i) * dim + off,
                                    hd * sizeof(double));
                        std::memcpy(Vh.data() + i * hd, vd->value.data() + (base + i) * dim + off,
                                    hd * sizeof(double));
                        std::memcpy(dOh.data() + i * hd, od->grad.data() + (base + i) * dim + off,
                                    hd * sizeof(double));
                    }
                    // dV = P^T dO ; dP = dO V^T
                    std::fill(dVh.begin(), dVh.end(), 0.0);
                    gemm::tn_acc(seq_len, hd, seq_len, A, dOh.data(), dVh.data());
                    gemm::nt(seq_len, seq_len, hd, dOh.data(), Vh.data(), dP.data(), false);
                    // dS = P o (dP - rowsum(dP o P)), then scale
                    for (size_t i = 0; i < seq_len; ++i) {
                        const double* Pi = A + i * seq_len;
                        const double* dPi = dP.data() + i * seq_len;
                        double rs = 0.0;
                        for (size_t j = 0; j < seq_len; ++j) rs += dPi[j] * Pi[j];
                        double* dSi = dS.data() + i * seq_len;
                        for (size_t j = 0; j < seq_len; ++j)
                            dSi[j] = Pi[j] * (dPi[j] - rs) * scl;
                    }
                    gemm::nn(seq_len, hd, seq_len, dS.data(), Kh.data(), dQh.data(), false);
                    std::fill(dKh.begin(), dKh.end(), 0.0);
                    gemm::tn_acc(seq_len, hd, seq_len, dS.data(), Qh.data(), dKh.data());
                    for (size_t i = 0; i < seq_len; ++i) {
                        double* qg = qd->grad.data() + (base + i) * dim + off;
                        double* kg = kd->grad.data() + (base + i) * dim + off;
                        double* vg = vd->grad.data() + (base + i) * dim + off;
                        for (size_t c = 0; c < hd; ++c) {
                            qg[c] += dQh[i * hd + c];
                            kg[c] += dKh[i * hd + c];
                            vg[c] += dVh[i * hd + c];
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace lab
