#include "lab/transformer.hpp"

#include <cstring>

namespace lab {

void TransformerConfig::validate() const {
    if (vocab_size == 0 || context_length == 0 || embed_dim == 0 || n_layers == 0 ||
        n_heads == 0 || ff_dim == 0)
        fail(ErrKind::input, "TransformerConfig: all extents must be positive");
    if (embed_dim % n_heads != 0)
        fail(ErrKind::input, "TransformerConfig: embed_dim must be divisible by n_heads");
    if (readout_position >= context_length)
        fail(ErrKind::input, "TransformerConfig: readout_position out of context");
}

size_t TransformerConfig::param_count() const {
    size_t d = embed_dim, f = ff_dim, v = vocab_size;
    size_t per_block = 2 * d                 // ln1
                       + 4 * (d * d + d)     // q,k,v,o projections
                       + 2 * d               // ln2
                       + (f * d + f)         // ff in
                       + (d * f + d);        // ff out
    return v * d + context_length * d + n_layers * per_block + 2 * d + (v * d + v);
}

const std::vector<double>& ActivationTrace::at(size_t layer, size_t position) const {
    auto it = vectors.find({layer, position});
    if (it == vectors.end())
        fail(ErrKind::index, "ActivationTrace: no vector for layer " + std::to_string(layer) +
                                 ", position " + std::to_string(position));
    return it->second;
}

namespace {

Tensor normal_leaf(Tape& tape, std::vector<size_t> shape, Rng& rng, double std) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::leaf(tape, std::move(shape), std::move(v), true);
}

Tensor ones_leaf(Tape& tape, size_t n) {
    return Tensor::leaf(tape, {n}, std::vector<double>(n, 1.0), true);
}

}  // namespace

Transformer::Transformer(Tape& tape, TransformerConfig config, uint64_t seed)
    : tape_(&tape), config_(config) {
    config_.validate();
    Rng rng(seed);
    const double std = 0.02;
    size_t d = config_.embed_dim, f = config_.ff_dim, v = config_.vocab_size;
    tok_emb_ = normal_leaf(tape, {v, d}, rng, std);
    pos_emb_ = normal_leaf(tape, {config_.context_length, d}, rng, std);
    for (size_t l = 0; l < config_.n_layers; ++l) {
        Block b;
        b.ln1_g = ones_leaf(tape, d);
        b.ln1_b = Tensor::zeros(tape, {d}, true);
        b.wq = normal_leaf(tape, {d, d}, rng, std);
        b.bq = Tensor::zeros(tape, {d}, true);
        b.wk = normal_leaf(tape, {d, d}, rng, std);
        b.bk = Tensor::zeros(tape, {d}, true);
        b.wv = normal_leaf(tape, {d, d}, rng, std);
        b.bv = Tensor::zeros(tape, {d}, true);
        b.wo = normal_leaf(tape, {d, d}, rng, std);
        b.bo = Tensor::zeros(tape, {d}, true);
        b.ln2_g = ones_leaf(tape, d);
        b.ln2_b = Tensor::zeros(tape, {d}, true);
        b.ff1_w = normal_leaf(tape, {f, d}, rng, std);
        b.ff1_b = Tensor::zeros(tape, {f}, true);
        b.ff2_w = normal_leaf(tape, {d, f}, rng, std);
        b.ff2_b = Tensor::zeros(tape, {d}, true);
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = ones_leaf(tape, d);
    lnf_b_ = Tensor::zeros(tape, {d}, true);
    readout_w_ = normal_leaf(tape, {v, d}, rng, std);
    readout_b_ = Tensor::zeros(tape, {v}, true);
}

Tensor Transformer::forward_impl(const std::vector<int>& tokens, size_t seq_len,
                                 bool all_positions, const std::set<size_t>* capture_layers,
                                 ActivationTrace* trace, const ResidualEdit* edit) const {
    if (seq_len == 0 || tokens.size() % seq_len != 0)
        fail(ErrKind::input, "transformer_forward: token count not divisible by sequence length");
    if (seq_len > config_.context_length)
        fail(ErrKind::input, "transformer_forward: sequence length " + std::to_string(seq_len) +
                                 " exceeds context " + std::to_string(config_.context_length));
    size_t n_seq = tokens.size() / seq_len;
    size_t d = config_.embed_dim;

    Tensor h = embedding(tok_emb_, tokens);  // validates token range
    h = add_positional(h, pos_emb_, seq_len);
    for (size_t l = 0; l < config_.n_layers; ++l) {
        const Block& b = blocks_[l];
        Tensor n1 = layer_norm(h, b.ln1_g, b.ln1_b);
        Tensor q = affine(b.wq, n1, b.bq);
        Tensor k = affine(b.wk, n1, b.bk);
        Tensor v = affine(b.wv, n1, b.bv);
        Tensor att = multihead_attention(q, k, v, config_.n_heads, seq_len, config_.causal);
        h = add(h, affine(b.wo, att, b.bo));
        Tensor n2 = layer_norm(h, b.ln2_g, b.ln2_b);
        Tensor ff = affine(b.ff2_w, relu(affine(b.ff1_w, n2, b.ff1_b)), b.ff2_b);
        h = add(h, ff);
        if (edit && edit->layer == l) {
            if (edit->position >= tokens.size())
                fail(ErrKind::index, "edit position out of range");
            if (edit->value.size() != d) fail(ErrKind::dimension, "edit vector width mismatch");
            std::memcpy(h.values().data() + edit->position * d, edit->value.data(),
                        d * sizeof(double));
        }
        if (capture_layers && trace && capture_layers->count(l)) {
            for (size_t r = 0; r < tokens.size(); ++r) {
                std::vector<double> vec(h.values().begin() + r * d,
                                        h.values().begin() + (r + 1) * d);
                trace->vectors[{l, r}] = std::move(vec);
            }
        }
    }
    Tensor nf = layer_norm(h, lnf_g_, lnf_b_);
    if (all_positions) return affine(readout_w_, nf, readout_b_);
    std::vector<size_t> rows(n_seq);
    for (size_t s = 0; s < n_seq; ++s) rows[s] = s * seq_len + config_.readout_position;
    if (config_.readout_position >= seq_len)
        fail(ErrKind::input, "transformer_forward: readout position beyond sequence length");
    return affine(readout_w_, select_rows(nf, rows), readout_b_);
}

Tensor Transformer::forward_all_positions(const std::vector<int>& tokens, size_t seq_len) const {
    return forward_impl(tokens, seq_len, true, nullptr, nullptr, nullptr);
}

Tensor Transformer::forward_readout(const std::vector<int>& tokens, size_t seq_len) const {
    return forward_impl(tokens, seq_len, false, nullptr, nullptr, nullptr);
}

std::vector<double> Transformer::logits_all_positions(const std::vector<int>& tokens,
                                                      size_t seq_len) const {
    NoGradGuard ng(*tape_);
    return forward_impl(tokens, seq_len, true, nullptr, nullptr, nullptr).values();
}

std::vector<double> Transformer::logits_readout(const std::vector<int>& tokens,
                                                size_t seq_len) const {
    NoGradGuard ng(*tape_);
    return forward_impl(tokens, seq_len, false, nullptr, nullptr, nullptr).values();
}

std::vector<double> Transformer::residual_at_layer(const std::vector<int>& tokens, size_t seq_len,
                                                   size_t layer) const {
    if (layer >= config_.n_layers)
        fail(ErrKind::input, "residual_at_layer: layer " + std::to_string(layer) +
                                 " out of range [0," + std::to_string(config_.n_layers) + ")");
    NoGradGuard ng(*tape_);
    std::vector<double> out(tokens.size() * config_.embed_dim);
    Tensor h = embedding(tok_emb_, tokens);
    h = add_positional(h, pos_emb_, seq_len);
    for (size_t l = 0; l <= layer; ++l) {
        const Block& b = blocks_[l];
        Tensor n1 = layer_norm(h, b.ln1_g, b.ln1_b);
        Tensor q = affine(b.wq, n1, b.bq);
        Tensor k = affine(b.wk, n1, b.bk);
        Tensor v = affine(b.wv, n1, b.bv);
        Tensor att = multihead_attention(q, k, v, config_.n_heads, seq_len, config_.causal);
        h = add(h, affine(b.wo, att, b.bo));
        Tensor n2 = layer_norm(h, b.ln2_g, b.ln2_b);
        Tensor ff = affine(b.ff2_w, relu(affine(b.ff1_w, n2, b.ff1_b)), b.ff2_b);
        h = add(h, ff);
    }
    std::memcpy(out.data(), h.values().data(), out.size() * sizeof(double));
    return out;
}

ActivationTrace Transformer::capture_activations(const std::vector<int>& tokens, size_t seq_len,
                                                 const std::set<size_t>& layer_set) const {
    for (size_t l : layer_set) {
        if (l >= config_.n_layers)
            fail(ErrKind::input, "capture_activations: layer " + std::to_string(l) +
                                     " out of range [0," + std::to_string(config_.n_layers) + ")");
    }
    if (tokens.size() != seq_len)
        fail(ErrKind::input, "capture_activations: expects a single sequence");
    NoGradGuard ng(*tape_);
    ActivationTrace trace;
    trace.embed_dim = config_.embed_dim;
    trace.seq_len = seq_len;
    forward_impl(tokens, seq_len, true, &layer_set, &trace, nullptr);
    return trace;
}

std::vector<double> Transformer::logits_with_edit(const std::vector<int>& tokens, size_t seq_len,
                                                  const ResidualEdit& edit) const {
    if (edit.layer >= config_.n_layers)
        fail(ErrKind::contract, "logits_with_edit: layer out of range");
    NoGradGuard ng(*tape_);
    return forward_impl(tokens, seq_len, true, nullptr, nullptr, &edit).values();
}

std::vector<Tensor> Transformer::params() const {
    std::vector<Tensor> ps;
    for (const auto& np : named_params()) ps.push_back(np.tensor);
    return ps;
}

std::vector<NamedParam> Transformer::named_params() const {
    std::vector<NamedParam> ps;
    ps.push_back({"tok_emb", tok_emb_});
    ps.push_back({"pos_emb", pos_emb_});
    for (size_t l = 0; l < blocks_.size(); ++l) {
        const Block& b = blocks_[l];
        std::string p = "block" + std::to_string(l) + ".";
        ps.push_back({p + "ln1.gain", b.ln1_g});
        ps.push_back({p + "ln1.bias", b.ln1_b});
        ps.push_back({p + "attn.wq", b.wq});
        ps.push_back({p + "attn.bq", b.bq});
        ps.push_back({p + "attn.wk", b.wk});
        ps.push_back({p + "attn.bk", b.bk});
        ps.push_back({p + "attn.wv", b.wv});
        ps.push_back({p + "attn.bv", b.bv});
        ps.push_back({p + "attn.wo", b.wo});
        ps.push_back({p + "attn.bo", b.bo});
        ps.push_back({p + "ln2.gain", b.ln2_g});
        ps.push_back({p + "ln2.bias", b.ln2_b});
        ps.push_back({p + "ff.w1", b.ff1_w});
        ps.push_back({p + "ff.b1", b.ff1_b});
        ps.push_back({p + "ff.w2", b.ff2_w});
        ps.push_back({p + "ff.b2", b.ff2_b});
    }
    ps.push_back({"ln_final.gain", lnf_g_});
    ps.push_back({"ln_final.bias", lnf_b_});
    ps.push_back({"readout.weight", readout_w_});
    ps.push_back({"readout.bias", readout_b_});
    return ps;
}

}  // namespace lab
