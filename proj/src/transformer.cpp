#include "cgm/transformer.hpp"

#include <cmath>
#include <limits>

namespace cgm {

namespace {
const double kNegInf = -std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

AttnMask AttnMask::causal(int len, int valid_len) {
    if (len < 1) throw ContractError("causal mask: length must be >= 1");
    if (valid_len < 0) valid_len = len;
    AttnMask m;
    m.query_count = len;
    m.key_count = len;
    m.allowed.assign(static_cast<std::size_t>(len) * len, 0);
    for (int q = 0; q < len; ++q) {
        for (int k = 0; k <= q && k < valid_len; ++k) {
            m.allowed[static_cast<std::size_t>(q) * len + k] = 1;
        }
        // A padded query row would otherwise have no support; it is passed
        // through by the caller, the self key only keeps softmax defined.
        if (q >= valid_len) m.allowed[static_cast<std::size_t>(q) * len + q] = 1;
    }
    return m;
}

AttnMask AttnMask::prefix(const std::vector<int>& prefix_len, int key_count) {
    AttnMask m;
    m.query_count = static_cast<int>(prefix_len.size());
    m.key_count = key_count;
    m.allowed.assign(static_cast<std::size_t>(m.query_count) * key_count, 0);
    for (int q = 0; q < m.query_count; ++q) {
        if (prefix_len[q] < 0 || prefix_len[q] >= key_count) {
            throw ContractError("prefix mask: prefix_len out of range");
        }
        for (int k = 0; k <= prefix_len[q]; ++k) {
            m.allowed[static_cast<std::size_t>(q) * key_count + k] = 1;
        }
    }
    return m;
}

Tensor AttnMask::additive() const {
    Tensor t = Tensor::zeros({query_count, key_count});
    double* p = t.data();
    const std::size_t n = allowed.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!allowed[i]) p[i] = kNegInf;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

AttentionWeights AttentionWeights::init(int hidden, int n_heads, std::mt19937_64& rng) {
    if (n_heads < 1 || hidden % n_heads != 0) {
        throw ContractError("attention: hidden " + std::to_string(hidden) +
                            " not divisible by heads " + std::to_string(n_heads));
    }
    AttentionWeights w;
    w.n_heads = n_heads;
    w.d_k = hidden / n_heads;
    for (int t = 0; t < n_heads; ++t) {
        w.wq.push_back(Tensor::randn({hidden, w.d_k}, rng, kWeightInitStd, true));
        w.wk.push_back(Tensor::randn({hidden, w.d_k}, rng, kWeightInitStd, true));
        w.wv.push_back(Tensor::randn({hidden, w.d_k}, rng, kWeightInitStd, true));
    }
    w.wo = Tensor::randn({n_heads * w.d_k, hidden}, rng, kWeightInitStd, true);
    return w;
}

void AttentionWeights::collect(const std::string& prefix,
                               std::vector<std::pair<std::string, Tensor>>& out) const {
    for (int t = 0; t < n_heads; ++t) {
        out.emplace_back(prefix + ".q" + std::to_string(t), wq[t]);
        out.emplace_back(prefix + ".k" + std::to_string(t), wk[t]);
        out.emplace_back(prefix + ".v" + std::to_string(t), wv[t]);
    }
    out.emplace_back(prefix + ".out", wo);
}

TransformerBlockWeights TransformerBlockWeights::init(int hidden, int n_heads, std::mt19937_64& rng) {
    TransformerBlockWeights b;
    b.attn = AttentionWeights::init(hidden, n_heads, rng);
    b.w1 = Tensor::randn({4 * hidden, hidden}, rng, kWeightInitStd, true);
    b.b1 = Tensor::zeros({4 * hidden}, true);
    b.w2 = Tensor::randn({hidden, 4 * hidden}, rng, kWeightInitStd, true);
    b.b2 = Tensor::zeros({hidden}, true);
    b.ln1_gain = Tensor::full({hidden}, 1.0, true);
    b.ln1_bias = Tensor::zeros({hidden}, true);
    b.ln2_gain = Tensor::full({hidden}, 1.0, true);
    b.ln2_bias = Tensor::zeros({hidden}, true);
    return b;
}

void TransformerBlockWeights::collect(const std::string& prefix,
                                      std::vector<std::pair<std::string, Tensor>>& out) const {
    attn.collect(prefix + ".attn", out);
    out.emplace_back(prefix + ".ffn.w1", w1);
    out.emplace_back(prefix + ".ffn.b1", b1);
    out.emplace_back(prefix + ".ffn.w2", w2);
    out.emplace_back(prefix + ".ffn.b2", b2);
    out.emplace_back(prefix + ".ln1.gain", ln1_gain);
    out.emplace_back(prefix + ".ln1.bias", ln1_bias);
    out.emplace_back(prefix + ".ln2.gain", ln2_gain);
    out.emplace_back(prefix + ".ln2.bias", ln2_bias);
}

TransformerStack TransformerStack::init(int hidden, int n_blocks, int n_heads, std::mt19937_64& rng) {
    TransformerStack s;
    for (int i = 0; i < n_blocks; ++i) {
        s.blocks.push_back(TransformerBlockWeights::init(hidden, n_heads, rng));
    }
    s.ln_f_gain = Tensor::full({hidden}, 1.0, true);
    s.ln_f_bias = Tensor::zeros({hidden}, true);
    return s;
}

void TransformerStack::collect(std::vector<std::pair<std::string, Tensor>>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect("block" + std::to_string(i), out);
    }
    out.emplace_back("ln_f.gain", ln_f_gain);
    out.emplace_back("ln_f.bias", ln_f_bias);
}

CrossAttentionHead CrossAttentionHead::init(int hidden, int n_heads, std::mt19937_64& rng) {
    CrossAttentionHead h;
    h.attn = AttentionWeights::init(hidden, n_heads, rng);
    h.ln_gain = Tensor::full({hidden}, 1.0, true);
    h.ln_bias = Tensor::zeros({hidden}, true);
    return h;
}

void CrossAttentionHead::collect(std::vector<std::pair<std::string, Tensor>>& out) const {
    attn.collect("head.attn", out);
    out.emplace_back("head.ln.gain", ln_gain);
    out.emplace_back("head.ln.bias", ln_bias);
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const std::optional<AttnMask>& mask) {
    if (q.cols() != k.cols()) {
        throw ContractError("attention: d_k mismatch " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    }
    if (k.rows() != v.rows()) {
        throw ContractError("attention: key/value count mismatch");
    }
    if (mask && (mask->query_count != q.rows() || mask->key_count != k.rows())) {
        throw ContractError("attention: mask shape mismatch");
    }
    Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    if (mask) scores = add(scores, mask->additive());
    return matmul(softmax(scores), v);
}

Tensor multi_head_attention(const Tensor& query_src, const Tensor& kv_src,
                            const AttentionWeights& w, const std::optional<AttnMask>& mask) {
    std::vector<Tensor> heads;
    heads.reserve(w.n_heads);
    for (int t = 0; t < w.n_heads; ++t) {
        Tensor q = matmul(query_src, w.wq[t]);
        Tensor k = matmul(kv_src, w.wk[t]);
        Tensor v = matmul(kv_src, w.wv[t]);
        heads.push_back(attention(q, k, v, mask));
    }
    Tensor merged = w.n_heads == 1 ? heads[0] : concat_cols(heads);
    return matmul(merged, w.wo);
}

Tensor causal_self_attention(const Tensor& x, const AttentionWeights& w, int valid_len) {
    return multi_head_attention(x, x, w, AttnMask::causal(x.rows(), valid_len));
}

namespace {

Tensor feedforward(const Tensor& x, const TransformerBlockWeights& b) {
    Tensor hidden = gelu(add_rowvec(matmul_nt(x, b.w1), b.b1));
    return add_rowvec(matmul_nt(hidden, b.w2), b.b2);
}

}  // namespace

Tensor causal_transformer(const Tensor& h, const TransformerStack& stack, int valid_len) {
    const int len = h.rows();
    if (valid_len < 0) valid_len = len;
    if (valid_len < 1 || valid_len > len) {
        throw ContractError("causal_transformer: valid_len out of range");
    }

    // Padded rows pass through unchanged; the valid prefix runs the stack.
    Tensor x = valid_len == len ? h : slice_rows(h, 0, valid_len);
    for (const TransformerBlockWeights& b : stack.blocks) {
        x = add(x, causal_self_attention(layer_norm(x, b.ln1_gain, b.ln1_bias), b.attn));
        x = add(x, feedforward(layer_norm(x, b.ln2_gain, b.ln2_bias), b));
    }
    x = layer_norm(x, stack.ln_f_gain, stack.ln_f_bias);
    if (valid_len == len) return x;
    return concat_rows({x, slice_rows(h, valid_len, len - valid_len)});
}

Tensor cross_attention_head(const Tensor& queries, const Tensor& r_aug,
                            const CrossAttentionHead& head, const std::vector<int>& prefix_len) {
    if (static_cast<int>(prefix_len.size()) != queries.rows()) {
        throw ContractError("cross_attention_head: one prefix length per query required");
    }
    AttnMask mask = AttnMask::prefix(prefix_len, r_aug.rows());
    Tensor attended = multi_head_attention(queries, r_aug, head.attn, mask);
    // Residual from the query keeps the empty-prefix output feature-specific.
    return layer_norm(add(queries, attended), head.ln_gain, head.ln_bias);
}

}  // namespace cgm
