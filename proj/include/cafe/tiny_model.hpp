#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cafe/attention.hpp"

namespace cafe {

// Decoder-only transformer, pre-norm, rotary position embedding, f32
// weights, byte-level tokenizer, greedy decoding. Small enough to run whole
// experiments on a laptop CPU while exercising the full capture/bias/mask
// contract.

struct TinyLayerWeights {
    std::vector<float> ln1_g, ln1_b;
    std::vector<float> wq, wk, wv, wo;  // [d_model, d_model], row-major (in, out)
    std::vector<float> ln2_g, ln2_b;
    std::vector<float> w_up;    // [d_model, 4*d_model]
    std::vector<float> w_down;  // [4*d_model, d_model]
};

struct TinyModelWeights {
    ModelConfig cfg;
    std::vector<float> tok_emb;  // [vocab, d_model]
    std::vector<TinyLayerWeights> layers;
    std::vector<float> lnf_g, lnf_b;
    std::vector<float> lm_head;  // [d_model, vocab]
    int d_model() const { return cfg.heads * cfg.head_dim; }
};

// Binary weight file: 8-byte magic "CAFEWT01", u64 little-endian JSON header
// length, JSON header {config, tensors:[{name, shape, dtype:"f32", offset}]},
// then raw little-endian f32 data. Offsets are relative to the data section.
TinyModelWeights load_weights(const std::string& path);
void save_weights(const std::string& path, const TinyModelWeights& w);
TinyModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed);

class TinyModel final : public Backend {
public:
    explicit TinyModel(TinyModelWeights weights);
    static std::unique_ptr<TinyModel> from_file(const std::string& path);

    const ModelConfig& config() const override { return w_.cfg; }
    const Tokenizer& tokenizer() const override { return tokenizer_; }
    std::string identity() const override { return identity_; }
    const TinyModelWeights& weights() const { return w_; }

    AttentionTrace prefill_with_capture(const PromptLayout& layout, const BiasSpec* bias,
                                        const MaskSpec* mask) const override;
    GenerationResult generate(const PromptLayout& layout, const BiasSpec* bias,
                              const MaskSpec* mask, int max_new_tokens) const override;
    GenerationResult prefill_then_generate(const PromptLayout& layout, const MaskSpec* mask,
                                           int max_new_tokens, const SteerFn& steer,
                                           AttentionTrace* trace_out) const override;
    std::vector<HeadTokenMatrix> token_matrices(const PromptLayout& layout, const BiasSpec* bias,
                                                const MaskSpec* mask) const override;

    struct Workspace;  // per-call KV cache and buffers

private:
    TinyModelWeights w_;
    ByteTokenizer tokenizer_;
    std::string identity_;
};

}  // namespace cafe
