#pragma once

// Miniature pre-norm transformer encoder. forward() returns the layer stack
// consumed by the fusion module: the [CLS] state after each of the L blocks,
// followed by the pooled sentence vector, so L+1 entries of shape [B, d].

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "larc/common.hpp"
#include "larc/config.hpp"
#include "larc/ops.hpp"
#include "larc/rng.hpp"
#include "larc/tensor.hpp"

namespace larc {

template <class S>
struct EncoderBlockT {
    TensorT<S> ln1_gain, ln1_bias;
    TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<S> ln2_gain, ln2_bias;
    TensorT<S> w1, b1, w2, b2;
};

template <class S>
class EncoderT {
public:
    EncoderT(const ModelConfig& cfg, RngStream& init)
        : dim_(cfg.hidden_dim), heads_(cfg.num_heads), max_seq_(cfg.max_seq_len),
          tanh_pooler_(cfg.pooler == "tanh") {
        if (cfg.hidden_dim % cfg.num_heads != 0)
            throw ConfigError("encoder: hidden_dim must be divisible by num_heads");
        const S sd = static_cast<S>(0.02);
        token_emb = TensorT<S>::randn({cfg.vocab_size, dim_}, init, sd);
        pos_emb = TensorT<S>::randn({max_seq_, dim_}, init, sd);
        blocks.resize(static_cast<std::size_t>(cfg.num_layers));
        for (auto& b : blocks) {
            b.ln1_gain = TensorT<S>::full({dim_}, static_cast<S>(1));
            b.ln1_bias = TensorT<S>::zeros({dim_});
            b.wq = TensorT<S>::randn({dim_, dim_}, init, sd);
            b.bq = TensorT<S>::zeros({dim_});
            b.wk = TensorT<S>::randn({dim_, dim_}, init, sd);
            b.bk = TensorT<S>::zeros({dim_});
            b.wv = TensorT<S>::randn({dim_, dim_}, init, sd);
            b.bv = TensorT<S>::zeros({dim_});
            b.wo = TensorT<S>::randn({dim_, dim_}, init, sd);
            b.bo = TensorT<S>::zeros({dim_});
            b.ln2_gain = TensorT<S>::full({dim_}, static_cast<S>(1));
            b.ln2_bias = TensorT<S>::zeros({dim_});
            b.w1 = TensorT<S>::randn({cfg.ffn_dim, dim_}, init, sd);
            b.b1 = TensorT<S>::zeros({cfg.ffn_dim});
            b.w2 = TensorT<S>::randn({dim_, cfg.ffn_dim}, init, sd);
            b.b2 = TensorT<S>::zeros({dim_});
        }
        pool_w = TensorT<S>::randn({dim_, dim_}, init, sd);
        pool_b = TensorT<S>::zeros({dim_});
    }

    // ids/mask are row-major [batch * seq]; every sequence starts with [CLS].
    // When attn_probs is given it receives one [B, H, T, T] buffer per block.
    std::vector<TensorT<S>> forward(const std::vector<int>& ids,
                                    const std::vector<std::uint8_t>& mask, int batch,
                                    TapeT<std::type_identity_t<S>>* tape,
                                    std::vector<std::vector<S>>* attn_probs = nullptr) const {
        if (batch <= 0) throw ShapeError("encoder: batch must be positive");
        if (ids.empty() || ids.size() % static_cast<std::size_t>(batch) != 0)
            throw ShapeError("encoder: ids not divisible into batch rows");
        if (mask.size() != ids.size()) throw ShapeError("encoder: mask/ids length mismatch");
        const int seq = static_cast<int>(ids.size()) / batch;
        if (seq > max_seq_)
            throw ConfigError("encoder: sequence length " + std::to_string(seq) +
                              " exceeds max_seq_len " + std::to_string(max_seq_));

        std::vector<int> pos(ids.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i) % seq;
        auto x = ops::add(ops::embedding(token_emb, ids, tape), ops::embedding(pos_emb, pos, tape),
                          tape);

        std::vector<int> cls_rows(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) cls_rows[static_cast<std::size_t>(i)] = i * seq;

        if (attn_probs) {
            attn_probs->clear();
            attn_probs->resize(blocks.size());
        }
        std::vector<TensorT<S>> stack;
        stack.reserve(blocks.size() + 1);
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            const auto& b = blocks[l];
            auto a = ops::layer_norm(x, b.ln1_gain, b.ln1_bias, tape);
            auto att = ops::attention(ops::linear(a, b.wq, b.bq, tape),
                                      ops::linear(a, b.wk, b.bk, tape),
                                      ops::linear(a, b.wv, b.bv, tape), mask, batch, seq, heads_,
                                      tape, attn_probs ? &(*attn_probs)[l] : nullptr);
            x = ops::add(x, ops::linear(att, b.wo, b.bo, tape), tape);
            auto f = ops::layer_norm(x, b.ln2_gain, b.ln2_bias, tape);
            auto h = ops::linear(ops::gelu(ops::linear(f, b.w1, b.b1, tape), tape), b.w2, b.b2,
                                 tape);
            x = ops::add(x, h, tape);
            stack.push_back(ops::gather_rows(x, cls_rows, tape));
        }
        auto cls = stack.back();
        stack.push_back(tanh_pooler_
                            ? ops::tanh_act(ops::linear(cls, pool_w, pool_b, tape), tape)
                            : cls);
        return stack;
    }

    // Visits every tensor in a fixed order; names are stable identifiers used
    // by the optimizer registry and the checkpoint format.
    void visit(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
        fn("encoder.token_emb", token_emb);
        fn("encoder.pos_emb", pos_emb);
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            const std::string p = "encoder.block" + std::to_string(l) + ".";
            fn(p + "ln1.gain", b.ln1_gain);
            fn(p + "ln1.bias", b.ln1_bias);
            fn(p + "attn.wq", b.wq);
            fn(p + "attn.bq", b.bq);
            fn(p + "attn.wk", b.wk);
            fn(p + "attn.bk", b.bk);
            fn(p + "attn.wv", b.wv);
            fn(p + "attn.bv", b.bv);
            fn(p + "attn.wo", b.wo);
            fn(p + "attn.bo", b.bo);
            fn(p + "ln2.gain", b.ln2_gain);
            fn(p + "ln2.bias", b.ln2_bias);
            fn(p + "ffn.w1", b.w1);
            fn(p + "ffn.b1", b.b1);
            fn(p + "ffn.w2", b.w2);
            fn(p + "ffn.b2", b.b2);
        }
        fn("encoder.pooler.w", pool_w);
        fn("encoder.pooler.b", pool_b);
    }

    int dim() const { return dim_; }
    int num_layers() const { return static_cast<int>(blocks.size()); }
    bool tanh_pooler() const { return tanh_pooler_; }

    TensorT<S> token_emb, pos_emb;
    std::vector<EncoderBlockT<S>> blocks;
    TensorT<S> pool_w, pool_b;

private:
    int dim_ = 0;
    int heads_ = 0;
    int max_seq_ = 0;
    bool tanh_pooler_ = true;
};

using Encoder = EncoderT<float>;

} // namespace larc
