#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/attention.hpp"

namespace cafe {

enum class Stage { coarse, fine };
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Per-head normalized document scores: beta[h][d] = alpha[h][d] / sum_j alpha[h][j].
// Heads whose alphas are all zero get a uniform row and are flagged.
struct RetrievalDocScores {
    int layers = 0;
    int heads = 0;
    std::vector<int> doc_ids;  // ascending
    std::vector<double> beta;  // [layer*heads+head][doc index]
    std::vector<std::uint8_t> zero_flag;

    int head_count() const { return layers * heads; }
    int doc_index(int doc_id) const;
    double beta_of(int flat_head, int doc_idx) const {
        return beta[static_cast<std::size_t>(flat_head) * doc_ids.size() + doc_idx];
    }
};

struct HeadScoreTable {
    int layers = 0;
    int heads = 0;
    std::vector<double> eta;  // [layer*heads+head]
    int n_validation = 0;
    double eta_of(HeadId id) const { return eta[static_cast<std::size_t>(id.layer) * heads + id.head]; }
};

// Heads ordered by (eta desc, layer asc, head asc).
struct RetrievalHeadSet {
    Stage stage = Stage::coarse;
    std::vector<HeadId> heads;
    std::vector<double> etas;  // parallel to heads
    int k = 0;

    RetrievalHeadSet prefix(int new_k) const;  // Top-k' of an ordered set
};

RetrievalDocScores doc_scores(const AttentionTrace& trace);

struct StageConfig;  // pipeline.hpp

// Scores every head on a validation set. For the fine stage the prompt is
// the stage-1 output context (filtered + re-ranked with `coarse_set`), and
// only gold documents that survive stage 1 contribute.
HeadScoreTable head_scores(const std::vector<QASample>& validation, const Backend& backend,
                           Stage stage, const StageConfig& config, const PromptTemplate& tmpl,
                           const RetrievalHeadSet* coarse_set = nullptr, int jobs = 1);

RetrievalHeadSet select_heads(const HeadScoreTable& table, int k, Stage stage);

// Head-set artifact JSON: {schema_version, stage, k, heads:[{layer,head,eta}], ...meta}.
void write_head_set(const std::string& path, const RetrievalHeadSet& set,
                    const std::string& backend_identity, std::uint64_t seed,
                    const std::string& config_hash, int n_validation);
RetrievalHeadSet read_head_set(const std::string& path);
void write_eta_csv(const std::string& path, const HeadScoreTable& table, Stage stage);

}  // namespace cafe
