#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cafe/corpus.hpp"

namespace cafe {

struct HeadId {
    int layer = 0;
    int head = 0;
    auto operator<=>(const HeadId&) const = default;
};

// Small dense row-major matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;
    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
};

// mask value 1 = excluded (attention forced to zero).
struct MaskMat {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> m;
    MaskMat() = default;
    MaskMat(int r, int c) : rows(r), cols(c), m(static_cast<std::size_t>(r) * c, 0) {}
    std::uint8_t& at(int i, int j) { return m[static_cast<std::size_t>(i) * cols + j]; }
    std::uint8_t at(int i, int j) const { return m[static_cast<std::size_t>(i) * cols + j]; }
    const std::uint8_t* row(int i) const { return m.data() + static_cast<std::size_t>(i) * cols; }
};

// Large-negative logit standing in for -inf; exp() of it underflows to 0.
constexpr double kNegInfLogit = -1e30;

// out[j] = softmax_j((logits[j] + bias[j]) / scale) over unmasked j; masked
// entries are exactly 0. bias/mask may be null. Throws DegenerateRowError
// (with `row_index_for_errors`) when every key is masked.
void attention_kernel_row(const double* logits, const double* bias, const std::uint8_t* mask,
                          int n, double scale, double* out, int row_index_for_errors = 0);

// Matrix form of the same kernel; every unmasked row sums to 1 within 1e-6.
Mat attention_kernel(const Mat& logits, const Mat* bias, const MaskMat* mask, double scale);

// Additive attention bias toward candidate key spans. Applied to all heads.
// Rows in query_span are biased; during decoding every generated row is
// treated as part of the query span (the question is steered, and generation
// continues the question's viewpoint). Generated tokens receive no bias as
// keys.
struct BiasSpec {
    double delta = 0.0;                 // natural-log scale, >= 0
    TokenSpan query_span;
    std::vector<TokenSpan> key_spans;
};

// Forces attention to zero between (query_span, key_span) pairs. Pairs whose
// query span intersects the prompt's question span persist through decoding.
struct MaskSpec {
    std::vector<std::pair<TokenSpan, TokenSpan>> pairs;
};

struct ModelConfig {
    int layers = 0;
    int heads = 0;
    int head_dim = 0;     // the sqrt(d) softmax scale comes from here
    int vocab_size = 0;
    int context_limit = 0;
    std::string pos_encoding;  // "rope" | "none"
};

// Per-head question->document attention mass, aggregated over all question
// rows (sum, no length normalization; downstream normalization makes global
// scaling immaterial).
struct AttentionTrace {
    int layers = 0;
    int heads = 0;
    std::vector<int> doc_ids;        // ascending
    std::vector<double> alpha;       // [layer*heads+head][doc index]
    int question_token_count = 0;
    int token_count = 0;
    double prefill_ms = 0.0;
    std::string capture_config = "sum-question-rows/v1";

    int head_count() const { return layers * heads; }
    int doc_index(int doc_id) const;
    double alpha_of(int flat_head, int doc_idx) const {
        return alpha[static_cast<std::size_t>(flat_head) * doc_ids.size() + doc_idx];
    }
    double& alpha_ref(int flat_head, int doc_idx) {
        return alpha[static_cast<std::size_t>(flat_head) * doc_ids.size() + doc_idx];
    }
};

struct GenerationResult {
    std::string text;
    int n_prefills = 0;
    double prefill_ms = 0.0;
    double first_token_ms = 0.0;  // time to first token, includes prefill
    double total_ms = 0.0;
};

// Token-level attention matrix of one head. Row r corresponds to absolute
// query index row_offset + r (backends that only model question rows emit a
// nonzero offset).
struct HeadTokenMatrix {
    HeadId id;
    int row_offset = 0;
    Mat mat;
};

constexpr int kTokenMatrixLimit = 512;

using SteerFn = std::function<std::optional<BiasSpec>(const AttentionTrace&)>;

// Backend contract: attention with capture, additive bias and masking.
// Instances are immutable after construction; concurrent calls are safe
// because each call owns its workspace.
class Backend {
public:
    virtual ~Backend() = default;
    virtual const ModelConfig& config() const = 0;
    virtual const Tokenizer& tokenizer() const = 0;
    virtual std::string identity() const = 0;

    virtual AttentionTrace prefill_with_capture(const PromptLayout& layout, const BiasSpec* bias,
                                                const MaskSpec* mask) const = 0;

    // Greedy decoding; bias/mask are applied at every decoding step against
    // the stored prompt keys.
    virtual GenerationResult generate(const PromptLayout& layout, const BiasSpec* bias,
                                      const MaskSpec* mask, int max_new_tokens) const = 0;

    // One prefill only: capture the trace, let `steer` pick a bias from it,
    // then decode with that bias. Used by the two-prefill pipeline.
    virtual GenerationResult prefill_then_generate(const PromptLayout& layout, const MaskSpec* mask,
                                                   int max_new_tokens, const SteerFn& steer,
                                                   AttentionTrace* trace_out) const = 0;

    // Full token-level matrices; only for prompts <= kTokenMatrixLimit tokens.
    virtual std::vector<HeadTokenMatrix> token_matrices(const PromptLayout& layout,
                                                        const BiasSpec* bias,
                                                        const MaskSpec* mask) const = 0;
};

// Shared helpers for applying specs to one query row.
// `prompt_len` is the rendered prompt length; rows >= prompt_len are decode
// rows. Outputs are resized to n_keys.
void fill_bias_row(const BiasSpec* bias, int query_index, int n_keys, int prompt_len,
                   std::vector<double>& out);
bool fill_mask_row(const MaskSpec* mask, int query_index, int n_keys, int prompt_len,
                   const TokenSpan& question_span, std::vector<std::uint8_t>& out);

// Recomputes trace alphas from token-level matrices (independent aggregation
// path used by tests and the heatmap exporter).
AttentionTrace aggregate_from_matrices(const std::vector<HeadTokenMatrix>& mats,
                                       const PromptLayout& layout, int layers, int heads);

}  // namespace cafe
