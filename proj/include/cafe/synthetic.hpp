#pragma once

#include <set>
#include <string>
#include <vector>

#include "cafe/attention.hpp"

namespace cafe {

// Deterministic attention oracle. Planted heads concentrate question->doc
// attention on evidence documents; every other head draws a seeded
// Dirichlet-like distribution over documents. Evidence documents identify
// themselves through inline markers (see make_marker), so the oracle needs
// no side channel at generation time.
//
// Stage behavior: coarse-planted heads are always active but slightly
// diluted (concentration * coarse_concentration_scale); fine-planted heads
// reach full concentration only in condensed contexts
// (doc count <= fine_context_max_docs) and fall back to a uniform document
// profile otherwise. This gives the two stages genuinely different context
// sensitivity, so per-stage head detection is well-posed.
struct OracleConfig {
    int layers = 4;
    int heads = 8;
    std::vector<HeadId> planted_coarse = {{0, 1}, {1, 3}, {2, 0}, {2, 5}};
    std::vector<HeadId> planted_fine = {{0, 4}, {1, 6}, {3, 2}, {3, 7}};
    double concentration = 0.9;               // fraction of doc mass on gold
    double coarse_concentration_scale = 0.8;  // coarse heads run diluted
    int fine_context_max_docs = 8;
    double template_mass = 0.02;   // question-row mass spent on non-doc tokens
    double locality_lambda = 0.0;  // >0 tilts noise heads toward prompt edges
    std::uint64_t noise_seed = 1;
    double answer_threshold = 0.25;  // min per-doc mean attention share
    std::string fallback_text = "unable to determine";
    int context_limit = 1 << 20;

    void validate() const;
};

std::string oracle_to_json_text(const OracleConfig& cfg);
OracleConfig oracle_from_json_text(const std::string& text);

// Inline evidence marker embedded in generated document bodies:
//   <<answer:payload:part/parts>>
std::string make_marker(const std::string& payload, int part, int parts);

struct EvidenceMarker {
    int doc_id = 0;
    std::string payload;
    int part = 1;
    int parts = 1;
};

// Scans rendered document spans for markers.
std::vector<EvidenceMarker> find_markers(const PromptLayout& layout, const Tokenizer& tok);

// Builds per-head question-row attention through attention_kernel (scale 1)
// and aggregates it. `gold` are the doc ids the planted heads concentrate on.
AttentionTrace synthetic_prefill(const OracleConfig& cfg, const PromptLayout& layout,
                                 const std::set<int>& gold, const BiasSpec* bias,
                                 const MaskSpec* mask);

class SyntheticBackend final : public Backend {
public:
    explicit SyntheticBackend(OracleConfig cfg);

    const ModelConfig& config() const override { return model_config_; }
    const Tokenizer& tokenizer() const override { return tokenizer_; }
    std::string identity() const override { return identity_; }
    const OracleConfig& oracle_config() const { return cfg_; }

    AttentionTrace prefill_with_capture(const PromptLayout& layout, const BiasSpec* bias,
                                        const MaskSpec* mask) const override;
    GenerationResult generate(const PromptLayout& layout, const BiasSpec* bias,
                              const MaskSpec* mask, int max_new_tokens) const override;
    GenerationResult prefill_then_generate(const PromptLayout& layout, const MaskSpec* mask,
                                           int max_new_tokens, const SteerFn& steer,
                                           AttentionTrace* trace_out) const override;
    std::vector<HeadTokenMatrix> token_matrices(const PromptLayout& layout, const BiasSpec* bias,
                                                const MaskSpec* mask) const override;

private:
    std::set<int> gold_from_markers(const PromptLayout& layout) const;
    std::string answer_from_trace(const PromptLayout& layout, const AttentionTrace& trace) const;

    OracleConfig cfg_;
    ModelConfig model_config_;
    ByteTokenizer tokenizer_;
    std::string identity_;
};

}  // namespace cafe
