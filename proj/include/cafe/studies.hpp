#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/metrics.hpp"
#include "cafe/pipeline.hpp"

namespace cafe {

struct StudyCell {
    std::string axis;    // e.g. "condition", "doc_count", "position", "m1", ...
    std::string value;
    std::string mode;
    std::string metric;  // "sub_em", "f1", "coarse_recall", ...
    double mean = 0.0;
    int n = 0;           // samples aggregated into this cell
};

struct StudyTable {
    std::string kind;  // masking | gap | position | sweep | latency | selection
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string backend_identity;
    std::string dataset_hash;
    std::string config_snapshot_json;
    std::vector<StudyCell> cells;
};

// CSV: '#' header lines embedding (kind, seed, config hash, backend id),
// then long-format rows axis,value,mode,metric,mean,n.
void write_study_csv(const std::string& path, const StudyTable& table);
void write_study_sidecar(const std::string& path, const StudyTable& table);

struct StudyContext {
    const Backend* backend = nullptr;
    const PromptTemplate* tmpl = nullptr;
    StageConfig stage;
    const HeadSets* head_sets = nullptr;  // required by cafe/coarse_only cells
    std::uint64_t seed = 0;
    int jobs = 1;
    int max_new_tokens = kDefaultMaxNewTokens;
};

enum class MaskCondition {
    none,
    e2_to_e1,
    q_to_e1,
    q_to_e2,
    q_to_gold,
    q_to_irrelevant_1,
    q_to_irrelevant_2,
    closed_book,
};
std::string mask_condition_name(MaskCondition c);
std::vector<MaskCondition> all_mask_conditions();

// Single-prefill answering under each masking condition; cells carry SubEM.
// Samples a condition does not apply to are skipped and the cell count
// reflects it.
StudyTable run_masking_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                             const std::vector<MaskCondition>& conditions);

// Gold docs plus distractors drawn from the other samples' documents,
// shuffled with a fixed seed; metrics per document count for direct and cafe.
StudyTable run_gap_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                         const std::vector<int>& doc_counts);

// Single-gold samples; the gold document is inserted at each position among
// fixed distractors.
StudyTable run_position_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                              const std::vector<int>& positions);

struct SweepGrid {
    std::vector<int> m1s, k1s, m2s, k2s;
    std::vector<double> deltas;
    bool empty() const { return m1s.empty() && k1s.empty() && m2s.empty() && k2s.empty() && deltas.empty(); }
};

// Full Cartesian product over the provided axes (absent axes pin the context
// value). k axes take prefixes of the ordered head sets.
StudyTable run_sweep(const std::vector<QASample>& samples, const StudyContext& ctx,
                     const SweepGrid& grid);

// Aggregates report timings: prefill counts, mean/median prefill, TTFT.
StudyTable measure_latency(const std::vector<PipelineReport>& reports);

// Evidence-selection recall: attention-based coarse filtering vs the BM25
// lexical baseline at the same per-sample budget.
StudyTable run_selection_study(const std::vector<QASample>& samples, const StudyContext& ctx);

}  // namespace cafe
