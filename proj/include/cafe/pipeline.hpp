#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cafe/heads.hpp"

namespace cafe {

constexpr int kReportSchemaVersion = 1;

struct StageConfig {
    int m1 = 4;  // docs kept per coarse head
    int k1 = 4;  // coarse heads
    int m2 = 2;  // docs kept per fine head
    int k2 = 2;  // fine heads
    double delta = 2.302585092994046;  // log 10
    std::string template_id = "default";
};

struct HeadSets {
    RetrievalHeadSet coarse;
    RetrievalHeadSet fine;
};

enum class Mode { cafe, direct, oracle, coarse_only };
std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct CoarseResult {
    std::vector<int> selected;          // D*, ascending doc_id
    std::map<int, double> relevance;    // gamma per selected doc
    std::vector<int> order;             // ascending gamma (most relevant last)
};

struct FineResult {
    std::vector<int> candidates;  // ascending doc_id, subset of coarse order
    BiasSpec bias;
};

struct PipelineReport {
    int schema_version = kReportSchemaVersion;
    std::string sample_id;
    Mode mode = Mode::direct;
    StageConfig config;
    std::vector<HeadId> coarse_heads_used;
    std::vector<HeadId> fine_heads_used;
    std::optional<CoarseResult> coarse;
    std::optional<FineResult> fine;
    std::string answer;
    int prefill_count = 0;
    std::map<std::string, double> timings_ms;  // excluded from determinism payloads
    std::vector<std::string> warnings;
    std::uint64_t seed = 0;
    std::string backend_identity;
    std::string config_hash;
};

// Union of per-head Top-m1 documents (ties: lower doc_id). m1 > n clamps to
// n and records a warning.
std::vector<int> coarse_filter(const RetrievalDocScores& scores, const RetrievalHeadSet& heads,
                               int m1, std::vector<std::string>* warnings = nullptr);

// gamma(d) = sum of beta_h(d) over the coarse head set, for selected docs.
std::map<int, double> relevance_scores(const RetrievalDocScores& scores,
                                       const RetrievalHeadSet& heads,
                                       const std::vector<int>& selected);

// Ascending gamma, ties by original doc_id (stable).
std::vector<int> rerank(const std::vector<int>& selected, const std::map<int, double>& relevance);

// Union of per-head Top-m2 over the stage-2 scores.
std::vector<int> fine_candidates(const RetrievalDocScores& scores2, const RetrievalHeadSet& heads2,
                                 int m2, std::vector<std::string>* warnings = nullptr);

// BiasSpec whose key spans exactly cover the candidate documents' token
// spans in the stage-2 layout. Empty candidate set is a config bug.
BiasSpec build_bias(const PromptLayout& layout2, const std::vector<int>& candidates, double delta);

constexpr int kDefaultMaxNewTokens = 32;

PipelineReport run_cafe(const QASample& sample, const StageConfig& config, const Backend& backend,
                        const HeadSets& head_sets, const PromptTemplate& tmpl,
                        int max_new_tokens = kDefaultMaxNewTokens);

// direct: one prefill over all docs in dataset order; oracle: gold docs only;
// coarse_only: stage 1 then generate on D' with no bias.
PipelineReport run_baseline(const QASample& sample, Mode mode, const StageConfig& config,
                            const Backend& backend, const HeadSets* head_sets,
                            const PromptTemplate& tmpl, int max_new_tokens = kDefaultMaxNewTokens);

// JSON Lines report file, schema versioned. Timings are serialized but
// comparisons for determinism strip them (see report_payload_json).
std::string report_to_json(const PipelineReport& r);
std::string report_payload_json(const PipelineReport& r);  // timings removed
void write_reports(const std::string& path, const std::vector<PipelineReport>& reports);

}  // namespace cafe
