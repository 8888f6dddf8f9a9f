#include "cafe/attention.hpp"

#include <algorithm>
#include <cmath>

#include "cafe/errors.hpp"

namespace cafe {

void attention_kernel_row(const double* logits, const double* bias, const std::uint8_t* mask,
                          int n, double scale, double* out, int row_index_for_errors) {
    if (scale <= 0.0) throw ArgumentError("attention scale must be positive");
    double max_z = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
        if (mask && mask[j]) continue;
        double z = (logits[j] + (bias ? bias[j] : 0.0)) / scale;
        max_z = std::max(max_z, z);
    }
    if (max_z == -std::numeric_limits<double>::infinity())
        throw DegenerateRowError(row_index_for_errors);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        if (mask && mask[j]) {
            out[j] = 0.0;
            continue;
        }
        double z = (logits[j] + (bias ? bias[j] : 0.0)) / scale;
        out[j] = std::exp(z - max_z);
        sum += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= sum;
}

Mat attention_kernel(const Mat& logits, const Mat* bias, const MaskMat* mask, double scale) {
    if (bias && (bias->rows != logits.rows || bias->cols != logits.cols))
        throw ArgumentError("bias shape does not match logits");
    if (mask && (mask->rows != logits.rows || mask->cols != logits.cols))
        throw ArgumentError("mask shape does not match logits");
    Mat out(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        attention_kernel_row(logits.row(i), bias ? bias->row(i) : nullptr,
                             mask ? mask->row(i) : nullptr, logits.cols, scale, out.row(i), i);
    }
    return out;
}

void fill_bias_row(const BiasSpec* bias, int query_index, int n_keys, int prompt_len,
                   std::vector<double>& out) {
    out.assign(static_cast<std::size_t>(n_keys), 0.0);
    if (!bias) return;
    bool row_in_scope = bias->query_span.contains(query_index) || query_index >= prompt_len;
    if (!row_in_scope) return;
    for (const TokenSpan& ks : bias->key_spans) {
        int lo = std::max(0, ks.start);
        int hi = std::min(n_keys, std::min(ks.end, prompt_len));  // generated keys get no bias
        for (int j = lo; j < hi; ++j) out[j] = bias->delta;
    }
}

bool fill_mask_row(const MaskSpec* mask, int query_index, int n_keys, int prompt_len,
                   const TokenSpan& question_span, std::vector<std::uint8_t>& out) {
    out.assign(static_cast<std::size_t>(n_keys), 0);
    if (!mask) return false;
    bool any = false;
    for (const auto& [qs, ks] : mask->pairs) {
        bool applies = qs.contains(query_index);
        if (!applies && query_index >= prompt_len) {
            // Question-anchored masks persist through decoding.
            applies = qs.start < question_span.end && question_span.start < qs.end;
        }
        if (!applies) continue;
        int lo = std::max(0, ks.start);
        int hi = std::min(n_keys, ks.end);
        for (int j = lo; j < hi; ++j) out[j] = 1;
        any = any || lo < hi;
    }
    return any;
}

int AttentionTrace::doc_index(int doc_id) const {
    auto it = std::lower_bound(doc_ids.begin(), doc_ids.end(), doc_id);
    if (it == doc_ids.end() || *it != doc_id) return -1;
    return static_cast<int>(it - doc_ids.begin());
}

AttentionTrace aggregate_from_matrices(const std::vector<HeadTokenMatrix>& mats,
                                       const PromptLayout& layout, int layers, int heads) {
    AttentionTrace trace;
    trace.layers = layers;
    trace.heads = heads;
    for (const auto& [doc_id, span] : layout.doc_spans) trace.doc_ids.push_back(doc_id);
    trace.alpha.assign(static_cast<std::size_t>(layers) * heads * trace.doc_ids.size(), 0.0);
    trace.question_token_count = layout.question_span.size();
    trace.token_count = static_cast<int>(layout.tokens.size());
    for (const auto& hm : mats) {
        int flat = hm.id.layer * heads + hm.id.head;
        for (int r = 0; r < hm.mat.rows; ++r) {
            int q = hm.row_offset + r;
            if (!layout.question_span.contains(q)) continue;
            int di = 0;
            for (const auto& [doc_id, span] : layout.doc_spans) {
                double sum = 0.0;
                for (int j = span.start; j < span.end && j < hm.mat.cols; ++j)
                    sum += hm.mat.at(r, j);
                trace.alpha_ref(flat, di) += sum;
                ++di;
            }
        }
    }
    return trace;
}

}  // namespace cafe
