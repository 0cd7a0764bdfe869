#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cgm/tensor.hpp"

namespace cgm {

// Boolean attention mask; allowed(q, k) means query row q may attend key k.
// Factories cover the two patterns the model uses: causal self-attention
// (k <= q, minus padded key columns) and strict-prefix cross-attention.
struct AttnMask {
    int query_count = 0;
    int key_count = 0;
    std::vector<std::uint8_t> allowed;  // row-major [query_count x key_count]

    static AttnMask causal(int len, int valid_len = -1);
    // Query k attends keys {0} u {1..prefix_len[k]}, key 0 being the start row.
    static AttnMask prefix(const std::vector<int>& prefix_len, int key_count);

    bool is_allowed(int q, int k) const { return allowed[static_cast<std::size_t>(q) * key_count + k] != 0; }
    // Additive mask tensor: 0 where allowed, -inf elsewhere.
    Tensor additive() const;
};

// Per-head Q/K/V projections plus the output projection. d_k = d_v = h / n_heads.
struct AttentionWeights {
    int n_heads = 0;
    int d_k = 0;
    std::vector<Tensor> wq;  // per head [h x d_k]
    std::vector<Tensor> wk;
    std::vector<Tensor> wv;
    Tensor wo;               // [n_heads*d_k x h]

    static AttentionWeights init(int hidden, int n_heads, std::mt19937_64& rng);
    void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;
};

struct TransformerBlockWeights {
    AttentionWeights attn;
    Tensor w1, b1;  // [4h x h], [4h]
    Tensor w2, b2;  // [h x 4h], [h]
    Tensor ln1_gain, ln1_bias;
    Tensor ln2_gain, ln2_bias;

    static TransformerBlockWeights init(int hidden, int n_heads, std::mt19937_64& rng);
    void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;
};

struct TransformerStack {
    std::vector<TransformerBlockWeights> blocks;
    Tensor ln_f_gain, ln_f_bias;

    static TransformerStack init(int hidden, int n_blocks, int n_heads, std::mt19937_64& rng);
    void collect(std::vector<std::pair<std::string, Tensor>>& out) const;
};

// Output head: multi-head cross-attention plus its layer norm.
struct CrossAttentionHead {
    AttentionWeights attn;
    Tensor ln_gain, ln_bias;

    static CrossAttentionHead init(int hidden, int n_heads, std::mt19937_64& rng);
    void collect(std::vector<std::pair<std::string, Tensor>>& out) const;
};

// softmax(Q K^T / sqrt(d_k) + mask) V for a single head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::optional<AttnMask>& mask = std::nullopt);

// Multi-head attention with Q projected from `query_src` and K/V from `kv_src`.
Tensor multi_head_attention(const Tensor& query_src, const Tensor& kv_src,
                            const AttentionWeights& w, const std::optional<AttnMask>& mask);

// Multi-head causal self-attention over the first valid_len rows.
Tensor causal_self_attention(const Tensor& x, const AttentionWeights& w, int valid_len = -1);

// Pre-norm residual stack (x += attn(ln(x)); x += ffwd(ln(x))) with a final
// layer norm. Rows at index >= valid_len are excluded from attention keys and
// returned unchanged.
Tensor causal_transformer(const Tensor& h, const TransformerStack& stack, int valid_len = -1);

// y_k = LayerNorm(x_k + cross-attention over the start row and strictly
// earlier R rows). r_aug row 0 must be the start row; prefix_len[k] gives the
// number of R rows visible to query k.
Tensor cross_attention_head(const Tensor& queries, const Tensor& r_aug,
                            const CrossAttentionHead& head, const std::vector<int>& prefix_len);

}  // namespace cgm
