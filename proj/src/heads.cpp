#include "cafe/heads.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "cafe/errors.hpp"
#include "cafe/pipeline.hpp"
#include "parallel.hpp"

namespace cafe {

using nlohmann::json;

std::string stage_name(Stage s) { return s == Stage::coarse ? "coarse" : "fine"; }

Stage stage_from_name(const std::string& name) {
    if (name == "coarse") return Stage::coarse;
    if (name == "fine") return Stage::fine;
    throw ArgumentError("unknown stage: " + name);
}

int RetrievalDocScores::doc_index(int doc_id) const {
    auto it = std::lower_bound(doc_ids.begin(), doc_ids.end(), doc_id);
    if (it == doc_ids.end() || *it != doc_id) return -1;
    return static_cast<int>(it - doc_ids.begin());
}

RetrievalDocScores doc_scores(const AttentionTrace& trace) {
    if (trace.doc_ids.empty()) throw ArgumentError("trace covers no documents");
    RetrievalDocScores out;
    out.layers = trace.layers;
    out.heads = trace.heads;
    out.doc_ids = trace.doc_ids;
    const std::size_t n = out.doc_ids.size();
    out.beta.assign(static_cast<std::size_t>(out.head_count()) * n, 0.0);
    out.zero_flag.assign(static_cast<std::size_t>(out.head_count()), 0);
    for (int h = 0; h < out.head_count(); ++h) {
        double total = 0.0;
        for (std::size_t d = 0; d < n; ++d) total += trace.alpha_of(h, static_cast<int>(d));
        if (total <= 0.0) {
            // Keep eta totals well-defined: uniform row, flagged.
            out.zero_flag[static_cast<std::size_t>(h)] = 1;
            for (std::size_t d = 0; d < n; ++d)
                out.beta[static_cast<std::size_t>(h) * n + d] = 1.0 / static_cast<double>(n);
        } else {
            for (std::size_t d = 0; d < n; ++d)
                out.beta[static_cast<std::size_t>(h) * n + d] =
                    trace.alpha_of(h, static_cast<int>(d)) / total;
        }
    }
    return out;
}

RetrievalHeadSet RetrievalHeadSet::prefix(int new_k) const {
    if (new_k < 1 || new_k > static_cast<int>(heads.size()))
        throw ArgumentError("prefix size out of range");
    RetrievalHeadSet out;
    out.stage = stage;
    out.k = new_k;
    out.heads.assign(heads.begin(), heads.begin() + new_k);
    out.etas.assign(etas.begin(), etas.begin() + new_k);
    return out;
}

HeadScoreTable head_scores(const std::vector<QASample>& validation, const Backend& backend,
                           Stage stage, const StageConfig& config, const PromptTemplate& tmpl,
                           const RetrievalHeadSet* coarse_set, int jobs) {
    if (validation.empty()) throw ArgumentError("head_scores requires a nonempty validation set");
    if (stage == Stage::fine && coarse_set == nullptr)
        throw ArgumentError("fine-stage head scoring needs the coarse head set");
    for (const auto& s : validation) {
        if (s.gold_evidence.empty())
            throw ArgumentError("validation sample " + s.sample_id + " has no gold evidence");
    }

    const ModelConfig& mc = backend.config();
    HeadScoreTable table;
    table.layers = mc.layers;
    table.heads = mc.heads;
    table.eta.assign(static_cast<std::size_t>(mc.layers) * mc.heads, 0.0);
    table.n_validation = static_cast<int>(validation.size());

    // Per-sample contributions land in slots; the reduction below runs in
    // sample order, so the result does not depend on scheduling.
    std::vector<std::vector<double>> contributions(validation.size());
    parallel_for(validation.size(), jobs, [&](std::size_t i) {
        const QASample& sample = validation[i];
        std::vector<int> order;
        std::set<int> gold = sample.gold_evidence;
        if (stage == Stage::coarse) {
            for (const auto& d : sample.documents) order.push_back(d.doc_id);
        } else {
            // Stage-1 context: coarse-filter and rerank with the coarse heads,
            // keep gold docs that survive.
            std::vector<int> full_order;
            for (const auto& d : sample.documents) full_order.push_back(d.doc_id);
            PromptLayout layout1 = build_prompt(sample, full_order, tmpl, backend.tokenizer(),
                                                backend.config().context_limit);
            AttentionTrace trace1 = backend.prefill_with_capture(layout1, nullptr, nullptr);
            RetrievalDocScores scores1 = doc_scores(trace1);
            std::vector<int> selected = coarse_filter(scores1, *coarse_set, config.m1);
            auto gamma = relevance_scores(scores1, *coarse_set, selected);
            order = rerank(selected, gamma);
            std::set<int> surviving;
            for (int g : gold)
                if (std::find(order.begin(), order.end(), g) != order.end()) surviving.insert(g);
            gold = std::move(surviving);
        }
        std::vector<double> contrib(static_cast<std::size_t>(mc.layers) * mc.heads, 0.0);
        if (!order.empty() && !gold.empty()) {
            PromptLayout layout = build_prompt(sample, order, tmpl, backend.tokenizer(),
                                               backend.config().context_limit);
            AttentionTrace trace = backend.prefill_with_capture(layout, nullptr, nullptr);
            RetrievalDocScores scores = doc_scores(trace);
            for (int h = 0; h < scores.head_count(); ++h) {
                double sum = 0.0;
                for (int g : gold) {
                    int di = scores.doc_index(g);
                    if (di >= 0) sum += scores.beta_of(h, di);
                }
                contrib[static_cast<std::size_t>(h)] = sum;
            }
        }
        contributions[i] = std::move(contrib);
    });
    for (const auto& contrib : contributions)
        for (std::size_t h = 0; h < table.eta.size(); ++h) table.eta[h] += contrib[h];
    return table;
}

RetrievalHeadSet select_heads(const HeadScoreTable& table, int k, Stage stage) {
    const int total = table.layers * table.heads;
    if (k < 1) throw ArgumentError("k must be >= 1");
    if (k > total)
        throw ArgumentError("k=" + std::to_string(k) + " exceeds head count " +
                            std::to_string(total));
    std::vector<HeadId> ids;
    ids.reserve(static_cast<std::size_t>(total));
    for (int l = 0; l < table.layers; ++l)
        for (int h = 0; h < table.heads; ++h) ids.push_back({l, h});
    std::stable_sort(ids.begin(), ids.end(), [&](const HeadId& a, const HeadId& b) {
        double ea = table.eta_of(a), eb = table.eta_of(b);
        if (ea != eb) return ea > eb;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.head < b.head;
    });
    RetrievalHeadSet out;
    out.stage = stage;
    out.k = k;
    out.heads.assign(ids.begin(), ids.begin() + k);
    for (const auto& id : out.heads) out.etas.push_back(table.eta_of(id));
    return out;
}

void write_head_set(const std::string& path, const RetrievalHeadSet& set,
                    const std::string& backend_identity, std::uint64_t seed,
                    const std::string& config_hash, int n_validation) {
    json heads = json::array();
    for (std::size_t i = 0; i < set.heads.size(); ++i) {
        heads.push_back({{"layer", set.heads[i].layer},
                         {"head", set.heads[i].head},
                         {"eta", set.etas[i]}});
    }
    json j{{"schema_version", kReportSchemaVersion},
           {"stage", stage_name(set.stage)},
           {"k", set.k},
           {"heads", heads},
           {"n_validation", n_validation},
           {"seed", seed},
           {"config_hash", config_hash},
           {"backend", backend_identity}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write head set: " + path);
    out << j.dump(2) << "\n";
}

RetrievalHeadSet read_head_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open head set: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("bad head-set file " + path + ": " + e.what());
    }
    RetrievalHeadSet set;
    set.stage = stage_from_name(j.at("stage").get<std::string>());
    set.k = j.at("k").get<int>();
    for (const auto& h : j.at("heads")) {
        set.heads.push_back({h.at("layer").get<int>(), h.at("head").get<int>()});
        set.etas.push_back(h.value("eta", 0.0));
    }
    if (static_cast<int>(set.heads.size()) != set.k)
        throw ValidationError("head set " + path + " k does not match list size");
    return set;
}

void write_eta_csv(const std::string& path, const HeadScoreTable& table, Stage stage) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write eta table: " + path);
    out << "stage,layer,head,eta\n";
    char buf[64];
    for (int l = 0; l < table.layers; ++l) {
        for (int h = 0; h < table.heads; ++h) {
            std::snprintf(buf, sizeof(buf), "%.12g",
                          table.eta[static_cast<std::size_t>(l) * table.heads + h]);
            out << stage_name(stage) << "," << l << "," << h << "," << buf << "\n";
        }
    }
}

}  // namespace cafe
