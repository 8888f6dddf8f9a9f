#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cafe/pipeline.hpp"
#include "cafe/studies.hpp"
#include "cafe/synthetic.hpp"

namespace cafe {

// Experiment configuration: JSON file + command-line overrides, flag > file
// > default. Exactly one backend spec must be present.
struct RunConfig {
    std::string dataset_path;
    std::string backend_kind = "synthetic";  // "synthetic" | "model"
    OracleConfig oracle;
    std::string model_path;
    StageConfig stage;
    std::string coarse_heads_path;
    std::string fine_heads_path;
    bool detect_on_the_fly = false;
    std::uint64_t seed = 42;
    int n_validation = 50;  // samples used for head detection
    std::string out_dir = "out";
    std::string templates_dir;
    int jobs = 1;
    int max_new_tokens = kDefaultMaxNewTokens;

    void validate() const;
};

RunConfig run_config_from_json_file(const std::string& path);
RunConfig run_config_from_json(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);

std::unique_ptr<Backend> make_backend(const RunConfig& cfg);
PromptTemplate resolve_template(const RunConfig& cfg);

// fnv-1a over the canonical config JSON plus backend identity and dataset
// hash; embedded in every output artifact.
std::string config_hash(const RunConfig& cfg, const std::string& backend_identity,
                        const std::string& dataset_hash);
std::string hash_file(const std::string& path);      // hex fnv-1a of the bytes
std::string hash_bytes(const std::string& bytes);

struct DetectHeadsOutput {
    std::string coarse_path;
    std::string fine_path;
    std::string eta_coarse_csv;
    std::string eta_fine_csv;
    HeadSets sets;
};

// Detects coarse heads on full validation prompts, builds stage-1 contexts
// with them, then detects fine heads on those contexts. Writes head-set
// artifacts plus eta dumps under <out>/artifacts.
DetectHeadsOutput cmd_detect_heads(const RunConfig& cfg);

struct RunOutput {
    std::vector<std::string> report_paths;  // one JSONL per mode
    std::string summary_csv;
    std::vector<MetricRow> rows;
};

HeadSets load_or_detect_heads(const RunConfig& cfg);

// Runs the requested modes over the dataset, writes JSONL reports per mode
// and a metric summary CSV. Throws on an empty dataset after writing the
// empty summary (nonzero exit at the CLI).
RunOutput cmd_run(const RunConfig& cfg, const std::vector<Mode>& modes);

struct StudyParams {
    std::vector<int> doc_counts = {2, 6, 10, 14, 20};
    std::vector<int> positions = {0, 4, 9, 14, 19};
    SweepGrid grid;
    std::vector<MaskCondition> conditions = all_mask_conditions();
};

struct StudyOutput {
    std::string csv_path;
    std::string sidecar_path;
    StudyTable table;
};

StudyOutput cmd_study(const RunConfig& cfg, const std::string& kind, const StudyParams& params);

struct HeatmapOptions {
    std::string head_set_path;
    bool token_level = false;
    int sample_index = 0;  // token-level export uses one sample
};

struct HeatmapOutput {
    std::string doc_csv;
    std::vector<std::string> token_csvs;
    std::vector<std::string> warnings;
};

// Doc-level: mean beta per (head, doc position) over the dataset, restricted
// to the head set. Token-level (prompt <= 512 tokens) additionally writes a
// CSV per head; longer prompts degrade to doc-level with a warning.
HeatmapOutput cmd_export_heatmap(const RunConfig& cfg, const HeatmapOptions& opts);

std::string cmd_gen_weights(const std::string& out_path, const ModelConfig& cfg, std::uint64_t seed);
std::string cmd_gen_synthetic(const std::string& out_path, const SyntheticDataSpec& spec);

}  // namespace cafe
