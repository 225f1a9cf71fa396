#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lll/rng.hpp"
#include "lll/tape.hpp"

namespace lll {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int context_len = 128;
    int vocab_size = 0;

    void validate() const {
        detail::require(n_layers > 0 && n_heads > 0 && d_model > 0 && context_len > 0,
                        "model config: all dimensions must be positive");
        detail::require(d_model % n_heads == 0,
                        detail::str("model config: d_model ", d_model, " not divisible by n_heads ",
                                    n_heads));
        detail::require(vocab_size > 0, "model config: vocab_size must be set");
    }
};

/// Decoder-only transformer; pre-layernorm blocks, learned positional
/// embeddings, output head tied to the token embedding. Plays both the
/// lifelong student and the per-task teacher.
struct LanguageModel {
    ModelConfig config;
    Tensor tok_emb;  // [V, d]
    Tensor pos_emb;  // [context_len, d]
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor w_q, b_q, w_k, b_k, w_v, b_v;
        Tensor w_o, b_o;
        Tensor ln2_g, ln2_b;
        Tensor w_fc, b_fc, w_proj, b_proj;
    };
    std::vector<Block> blocks;
    Tensor lnf_g, lnf_b;

    static LanguageModel init(ModelConfig cfg, uint64_t seed) {
        cfg.validate();
        LanguageModel m;
        m.config = cfg;
        Rng rng(derive_seed(seed, "model-init"));
        const int d = cfg.d_model;
        auto weight = [&](Shape s) {
            Tensor t = Tensor::zeros(std::move(s));
            for (auto& v : t.data) v = rng.normal(0.0, 0.02);
            return t;
        };
        m.tok_emb = weight({cfg.vocab_size, d});
        m.pos_emb = weight({cfg.context_len, d});
        m.blocks.resize(static_cast<size_t>(cfg.n_layers));
        for (auto& blk : m.blocks) {
            blk.ln1_g = Tensor::full({d}, 1.0);
            blk.ln1_b = Tensor::zeros({d});
            blk.w_q = weight({d, d});
            blk.b_q = Tensor::zeros({d});
            blk.w_k = weight({d, d});
            blk.b_k = Tensor::zeros({d});
            blk.w_v = weight({d, d});
            blk.b_v = Tensor::zeros({d});
            blk.w_o = weight({d, d});
            blk.b_o = Tensor::zeros({d});
            blk.ln2_g = Tensor::full({d}, 1.0);
            blk.ln2_b = Tensor::zeros({d});
            blk.w_fc = weight({d, 4 * d});
            blk.b_fc = Tensor::zeros({4 * d});
            blk.w_proj = weight({4 * d, d});
            blk.b_proj = Tensor::zeros({d});
        }
        m.lnf_g = Tensor::full({d}, 1.0);
        m.lnf_b = Tensor::zeros({d});
        return m;
    }

    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("tok_emb", &tok_emb);
        out.emplace_back("pos_emb", &pos_emb);
        for (size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            const std::string p = "h" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.g", &b.ln1_g);
            out.emplace_back(p + "ln1.b", &b.ln1_b);
            out.emplace_back(p + "attn.w_q", &b.w_q);
            out.emplace_back(p + "attn.b_q", &b.b_q);
            out.emplace_back(p + "attn.w_k", &b.w_k);
            out.emplace_back(p + "attn.b_k", &b.b_k);
            out.emplace_back(p + "attn.w_v", &b.w_v);
            out.emplace_back(p + "attn.b_v", &b.b_v);
            out.emplace_back(p + "attn.w_o", &b.w_o);
            out.emplace_back(p + "attn.b_o", &b.b_o);
            out.emplace_back(p + "ln2.g", &b.ln2_g);
            out.emplace_back(p + "ln2.b", &b.ln2_b);
            out.emplace_back(p + "mlp.w_fc", &b.w_fc);
            out.emplace_back(p + "mlp.b_fc", &b.b_fc);
            out.emplace_back(p + "mlp.w_proj", &b.w_proj);
            out.emplace_back(p + "mlp.b_proj", &b.b_proj);
        }
        out.emplace_back("lnf.g", &lnf_g);
        out.emplace_back("lnf.b", &lnf_b);
        return out;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    long param_count() const {
        long n = 0;
        for (auto& [name, t] : const_cast<LanguageModel*>(this)->named_params()) n += t->size();
        return n;
    }

    /// FNV-1a over the raw parameter bytes; used to assert frozen teachers.
    uint64_t checksum() const {
        uint64_t h = 1469598103934665603ull;
        auto eat = [&h](const Tensor& t) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(t.data.data());
            for (size_t i = 0; i < t.data.size() * sizeof(double); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ull;
            }
        };
        auto* self = const_cast<LanguageModel*>(this);
        for (auto& [name, t] : self->named_params()) eat(*t);
        return h;
    }

    void zero_grads() {
        for (Tensor* t : params()) t->zero_grad();
    }

    /// Unnormalized next-token scores for the whole prefix; row t scores
    /// token t+1. Convenience wrapper over a scratch tape.
    Tensor forward_logits(std::span<const int> tokens) const;

    /// Last row of forward_logits; the decoding interface.
    std::vector<double> next_logits(std::span<const int> tokens) const;
    int vocab_size() const { return config.vocab_size; }
};

/// A model's parameters registered on one tape, plus the forward builder.
/// Bind trainable for the student (gradients accumulate into the model),
/// frozen for teachers (parameters aliased read-only).
struct ModelGraph {
    const LanguageModel* model = nullptr;
    Tape* tape = nullptr;
    int tok_emb = -1, pos_emb = -1;
    struct BlockIds {
        int ln1_g, ln1_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
        int ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
    };
    std::vector<BlockIds> blocks;
    int lnf_g = -1, lnf_b = -1;

    static ModelGraph bind_trainable(Tape& tape, LanguageModel& m) {
        return bind_impl(tape, m, true);
    }
    static ModelGraph bind_frozen(Tape& tape, const LanguageModel& m) {
        return bind_impl(tape, const_cast<LanguageModel&>(m), false);
    }

    /// Builds the causal forward pass; returns the [L, vocab] logits node.
    int logits(std::span<const int> tokens) const {
        const ModelConfig& cfg = model->config;
        const int len = static_cast<int>(tokens.size());
        detail::require(len >= 1, "forward: empty token sequence");
        detail::require(len <= cfg.context_len,
                        detail::str("forward: sequence length ", len, " exceeds context_len ",
                                    cfg.context_len));
        for (int t : tokens)
            detail::require(t >= 0 && t < cfg.vocab_size,
                            detail::str("forward: token id ", t, " outside vocabulary of size ",
                                        cfg.vocab_size));
        Tape& tp = *tape;
        const int d = cfg.d_model;
        const int heads = cfg.n_heads;
        const int hd = d / heads;

        std::vector<int> positions(static_cast<size_t>(len));
        for (int i = 0; i < len; ++i) positions[static_cast<size_t>(i)] = i;
        int x = add(tp, embedding_gather(tp, tok_emb, {tokens.begin(), tokens.end()}),
                    embedding_gather(tp, pos_emb, positions));

        // Causal mask and scale are shared across layers for this length.
        std::vector<uint8_t> mask(static_cast<size_t>(heads * len * len), 0);
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < len; ++i)
                for (int j = i + 1; j < len; ++j)
                    mask[static_cast<size_t>((h * len + i) * len + j)] = 1;
        const int scale = tp.constant(Tensor::scalar(1.0 / std::sqrt(static_cast<double>(hd))));

        for (const auto& blk : blocks) {
            const int ln1 = layernorm(tp, x, blk.ln1_g, blk.ln1_b);
            auto proj = [&](int w, int b) {
                return add(tp, matmul(tp, ln1, w), broadcast(tp, b, {len, d}));
            };
            auto split_heads = [&](int v) {
                return transpose(tp, reshape(tp, v, {len, heads, hd}), {1, 0, 2});
            };
            const int q = split_heads(proj(blk.w_q, blk.b_q));                    // [H, L, hd]
            const int k = transpose(tp, reshape(tp, proj(blk.w_k, blk.b_k), {len, heads, hd}),
                                    {1, 2, 0});                                   // [H, hd, L]
            const int v = split_heads(proj(blk.w_v, blk.b_v));                    // [H, L, hd]
            int scores = mul(tp, matmul(tp, q, k), broadcast(tp, scale, {heads, len, len}));
            scores = masked_fill(tp, scores, mask, -1e9);
            const int att = matmul(tp, softmax(tp, scores), v);                   // [H, L, hd]
            const int merged = reshape(tp, transpose(tp, att, {1, 0, 2}), {len, d});
            const int attn_out = add(tp, matmul(tp, merged, blk.w_o), broadcast(tp, blk.b_o, {len, d}));
            x = add(tp, x, attn_out);

            const int ln2 = layernorm(tp, x, blk.ln2_g, blk.ln2_b);
            const int fc = gelu(tp, add(tp, matmul(tp, ln2, blk.w_fc), broadcast(tp, blk.b_fc, {len, 4 * d})));
            const int mlp_out = add(tp, matmul(tp, fc, blk.w_proj), broadcast(tp, blk.b_proj, {len, d}));
            x = add(tp, x, mlp_out);
        }
        const int h_final = layernorm(tp, x, lnf_g, lnf_b);
        return matmul(tp, h_final, transpose(tp, tok_emb, {1, 0}));  // tied head
    }

private:
    static ModelGraph bind_impl(Tape& tape, LanguageModel& m, bool trainable) {
        m.config.validate();
        ModelGraph g;
        g.model = &m;
        g.tape = &tape;
        auto bind = [&](Tensor& t) { return trainable ? tape.param(t) : tape.input(t); };
        g.tok_emb = bind(m.tok_emb);
        g.pos_emb = bind(m.pos_emb);
        for (auto& blk : m.blocks) {
            BlockIds ids{};
            ids.ln1_g = bind(blk.ln1_g);
            ids.ln1_b = bind(blk.ln1_b);
            ids.w_q = bind(blk.w_q);
            ids.b_q = bind(blk.b_q);
            ids.w_k = bind(blk.w_k);
            ids.b_k = bind(blk.b_k);
            ids.w_v = bind(blk.w_v);
            ids.b_v = bind(blk.b_v);
            ids.w_o = bind(blk.w_o);
            ids.b_o = bind(blk.b_o);
            ids.ln2_g = bind(blk.ln2_g);
            ids.ln2_b = bind(blk.ln2_b);
            ids.w_fc = bind(blk.w_fc);
            ids.b_fc = bind(blk.b_fc);
            ids.w_proj = bind(blk.w_proj);
            ids.b_proj = bind(blk.b_proj);
            g.blocks.push_back(ids);
        }
        g.lnf_g = bind(m.lnf_g);
        g.lnf_b = bind(m.lnf_b);
        return g;
    }
};

inline Tensor LanguageModel::forward_logits(std::span<const int> tokens) const {
    Tape tape;
    const ModelGraph g = ModelGraph::bind_frozen(tape, *this);
    return tape.value(g.logits(tokens));
}

inline std::vector<double> LanguageModel::next_logits(std::span<const int> tokens) const {
    const Tensor logits = forward_logits(tokens);
    const int v = config.vocab_size;
    const long last = logits.size() - v;
    return {logits.data.begin() + last, logits.data.end()};
}

}  // namespace lll
