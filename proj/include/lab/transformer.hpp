#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lab/checkpoint.hpp"
#include "lab/tensor.hpp"

namespace lab {

struct TransformerConfig {
    size_t vocab_size = 0;
    size_t context_length = 0;
    size_t embed_dim = 0;
    size_t n_layers = 0;
    size_t n_heads = 0;
    size_t ff_dim = 0;
    // token position whose representation produces logits in readout mode
    size_t readout_position = 0;
    // off: encoder-style, logits at readout_position only (modular addition);
    // on: causal mask, logits at every position (game transcripts)
    bool causal = false;

    void validate() const;
    size_t param_count() const;
};

// Post-block residual-stream vectors keyed by (layer index, sequence position).
struct ActivationTrace {
    size_t embed_dim = 0;
    size_t seq_len = 0;
    std::map<std::pair<size_t, size_t>, std::vector<double>> vectors;

    bool empty() const { return vectors.empty(); }
    const std::vector<double>& at(size_t layer, size_t position) const;
};

// Replace the residual stream at one (layer, position) and resume the forward
// pass from there; the mechanism behind counterfactual interventions.
struct ResidualEdit {
    size_t layer = 0;
    size_t position = 0;
    std::vector<double> value;
};

// Pre-norm transformer: learned token + positional embeddings, n_layers blocks
// of multi-head self-attention and a ReLU feed-forward sublayer with residual
// connections and layer norm, a final layer norm, then an affine readout.
class Transformer {
public:
    Transformer(Tape& tape, TransformerConfig config, uint64_t seed);

    // Differentiable paths (tokens laid out as B contiguous sequences of
    // seq_len; pad with any valid id and mask via loss targets).
    Tensor forward_all_positions(const std::vector<int>& tokens, size_t seq_len) const;
    Tensor forward_readout(const std::vector<int>& tokens, size_t seq_len) const;

    // Frozen-evaluation paths (no tape growth, no gradients).
    std::vector<double> logits_all_positions(const std::vector<int>& tokens, size_t seq_len) const;
    std::vector<double> logits_readout(const std::vector<int>& tokens, size_t seq_len) const;

    // Post-block residual stream for one layer over a whole batch: [B*T, D].
    std::vector<double> residual_at_layer(const std::vector<int>& tokens, size_t seq_len,
                                          size_t layer) const;

    ActivationTrace capture_activations(const std::vector<int>& tokens, size_t seq_len,
                                        const std::set<size_t>& layer_set) const;

    // Frozen forward with one residual-stream row replaced; returns logits at
    // every position ([B*T, V]).
    std::vector<double> logits_with_edit(const std::vector<int>& tokens, size_t seq_len,
                                         const ResidualEdit& edit) const;

    const TransformerConfig& config() const { return config_; }
    std::vector<Tensor> params() const;
    std::vector<NamedParam> named_params() const;
    Tape& tape() const { return *tape_; }

private:
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b;
        Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    };

    Tensor forward_impl(const std::vector<int>& tokens, size_t seq_len, bool all_positions,
                        const std::set<size_t>* capture_layers, ActivationTrace* trace,
                        const ResidualEdit* edit) const;

    Tape* tape_;
    TransformerConfig config_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Block> blocks_;
    Tensor lnf_g_, lnf_b_;
    Tensor readout_w_, readout_b_;
};

}  // namespace lab
