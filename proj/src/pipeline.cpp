#include "cafe/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "cafe/errors.hpp"

namespace cafe {

using nlohmann::json;

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::cafe: return "cafe";
        case Mode::direct: return "direct";
        case Mode::oracle: return "oracle";
        case Mode::coarse_only: return "coarse_only";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    if (name == "cafe") return Mode::cafe;
    if (name == "direct") return Mode::direct;
    if (name == "oracle") return Mode::oracle;
    if (name == "coarse_only") return Mode::coarse_only;
    throw ArgumentError("unknown mode: " + name);
}

namespace {

// Top-m doc ids of one head by (beta desc, doc_id asc).
std::vector<int> top_m_docs(const RetrievalDocScores& scores, int flat_head, int m) {
    std::vector<int> idx(scores.doc_ids.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        double ba = scores.beta_of(flat_head, a), bb = scores.beta_of(flat_head, b);
        if (ba != bb) return ba > bb;
        return scores.doc_ids[static_cast<std::size_t>(a)] < scores.doc_ids[static_cast<std::size_t>(b)];
    });
    std::vector<int> out;
    for (int i = 0; i < m && i < static_cast<int>(idx.size()); ++i)
        out.push_back(scores.doc_ids[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    return out;
}

std::vector<int> union_top_m(const RetrievalDocScores& scores, const RetrievalHeadSet& heads,
                             int m, const char* param_name, std::vector<std::string>* warnings) {
    if (m < 1) throw ArgumentError(std::string(param_name) + " must be >= 1");
    const int n = static_cast<int>(scores.doc_ids.size());
    int eff_m = m;
    if (m > n) {
        eff_m = n;
        if (warnings)
            warnings->push_back(std::string("clamped ") + param_name + " from " +
                                std::to_string(m) + " to " + std::to_string(n));
    }
    std::set<int> selected;
    for (const auto& id : heads.heads) {
        int flat = id.layer * scores.heads + id.head;
        if (flat < 0 || flat >= scores.head_count())
            throw ArgumentError("head set references head outside the score grid");
        for (int d : top_m_docs(scores, flat, eff_m)) selected.insert(d);
    }
    return {selected.begin(), selected.end()};
}

}  // namespace

std::vector<int> coarse_filter(const RetrievalDocScores& scores, const RetrievalHeadSet& heads,
                               int m1, std::vector<std::string>* warnings) {
    if (heads.stage != Stage::coarse)
        throw ArgumentError("coarse_filter needs a coarse-stage head set");
    return union_top_m(scores, heads, m1, "m1", warnings);
}

std::map<int, double> relevance_scores(const RetrievalDocScores& scores,
                                       const RetrievalHeadSet& heads,
                                       const std::vector<int>& selected) {
    if (selected.empty()) throw ArgumentError("relevance_scores needs a nonempty selection");
    std::map<int, double> gamma;
    for (int d : selected) {
        int di = scores.doc_index(d);
        if (di < 0) throw ArgumentError("selected doc " + std::to_string(d) + " not in scores");
        double sum = 0.0;
        for (const auto& id : heads.heads) sum += scores.beta_of(id.layer * scores.heads + id.head, di);
        gamma[d] = sum;
    }
    return gamma;
}

std::vector<int> rerank(const std::vector<int>& selected, const std::map<int, double>& relevance) {
    std::vector<int> order = selected;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double ga = relevance.at(a), gb = relevance.at(b);
        if (ga != gb) return ga < gb;  // higher relevance later in the prompt
        return a < b;
    });
    return order;
}

std::vector<int> fine_candidates(const RetrievalDocScores& scores2, const RetrievalHeadSet& heads2,
                                 int m2, std::vector<std::string>* warnings) {
    if (heads2.stage != Stage::fine)
        throw ArgumentError("fine_candidates needs a fine-stage head set");
    return union_top_m(scores2, heads2, m2, "m2", warnings);
}

BiasSpec build_bias(const PromptLayout& layout2, const std::vector<int>& candidates, double delta) {
    if (candidates.empty())
        throw ArgumentError("build_bias called with no candidate documents (config bug)");
    if (delta < 0.0) throw ArgumentError("delta must be >= 0");
    BiasSpec bias;
    bias.delta = delta;
    bias.query_span = layout2.question_span;
    for (int d : candidates) {
        auto it = layout2.doc_spans.find(d);
        if (it == layout2.doc_spans.end())
            throw ArgumentError("candidate doc " + std::to_string(d) + " missing from layout");
        bias.key_spans.push_back(it->second);
    }
    return bias;
}

namespace {

std::vector<int> dataset_order(const QASample& sample) {
    std::vector<int> order;
    for (const auto& d : sample.documents) order.push_back(d.doc_id);
    return order;
}

}  // namespace

PipelineReport run_cafe(const QASample& sample, const StageConfig& config, const Backend& backend,
                        const HeadSets& head_sets, const PromptTemplate& tmpl,
                        int max_new_tokens) {
    PipelineReport report;
    report.sample_id = sample.sample_id;
    report.mode = Mode::cafe;
    report.config = config;
    report.coarse_heads_used = head_sets.coarse.heads;
    report.fine_heads_used = head_sets.fine.heads;
    report.backend_identity = backend.identity();

    // Stage 1: full prompt, coarse filter, locality re-rank.
    PromptLayout layout1 = build_prompt(sample, dataset_order(sample), tmpl, backend.tokenizer(),
                                        backend.config().context_limit);
    AttentionTrace trace1 = backend.prefill_with_capture(layout1, nullptr, nullptr);
    report.timings_ms["prefill1"] = trace1.prefill_ms;
    RetrievalDocScores scores1 = doc_scores(trace1);
    CoarseResult coarse;
    coarse.selected = coarse_filter(scores1, head_sets.coarse, config.m1, &report.warnings);
    coarse.relevance = relevance_scores(scores1, head_sets.coarse, coarse.selected);
    coarse.order = rerank(coarse.selected, coarse.relevance);
    report.coarse = coarse;

    // Stage 2: rebuild the prompt on D', capture once, steer, decode.
    PromptLayout layout2 = build_prompt(sample, coarse.order, tmpl, backend.tokenizer(),
                                        backend.config().context_limit);
    FineResult fine;
    AttentionTrace trace2;
    GenerationResult gen = backend.prefill_then_generate(
        layout2, nullptr, max_new_tokens,
        [&](const AttentionTrace& t) -> std::optional<BiasSpec> {
            RetrievalDocScores scores2 = doc_scores(t);
            fine.candidates =
                fine_candidates(scores2, head_sets.fine, config.m2, &report.warnings);
            fine.bias = build_bias(layout2, fine.candidates, config.delta);
            return fine.bias;
        },
        &trace2);
    report.fine = fine;
    report.answer = gen.text;
    report.prefill_count = 1 + gen.n_prefills;
    report.timings_ms["stage2_prefill"] = gen.prefill_ms;
    report.timings_ms["ttft"] = trace1.prefill_ms + gen.first_token_ms;
    report.timings_ms["decode"] = gen.total_ms - gen.first_token_ms;
    return report;
}

PipelineReport run_baseline(const QASample& sample, Mode mode, const StageConfig& config,
                            const Backend& backend, const HeadSets* head_sets,
                            const PromptTemplate& tmpl, int max_new_tokens) {
    if (mode == Mode::cafe) {
        if (!head_sets) throw ArgumentError("cafe mode needs head sets");
        return run_cafe(sample, config, backend, *head_sets, tmpl, max_new_tokens);
    }
    PipelineReport report;
    report.sample_id = sample.sample_id;
    report.mode = mode;
    report.config = config;
    report.backend_identity = backend.identity();

    if (mode == Mode::direct || mode == Mode::oracle) {
        std::vector<int> order;
        if (mode == Mode::oracle) {
            if (sample.gold_evidence.empty())
                throw ArgumentError("oracle mode requires gold evidence for " + sample.sample_id);
            for (const auto& d : sample.documents)
                if (sample.gold_evidence.count(d.doc_id)) order.push_back(d.doc_id);
        } else {
            order = dataset_order(sample);
        }
        PromptLayout layout =
            build_prompt(sample, order, tmpl, backend.tokenizer(), backend.config().context_limit);
        GenerationResult gen = backend.generate(layout, nullptr, nullptr, max_new_tokens);
        report.answer = gen.text;
        report.prefill_count = gen.n_prefills;
        report.timings_ms["prefill1"] = gen.prefill_ms;
        report.timings_ms["ttft"] = gen.first_token_ms;
        report.timings_ms["decode"] = gen.total_ms - gen.first_token_ms;
        return report;
    }

    // coarse_only: stage 1, then answer over D' with no steering.
    if (!head_sets) throw ArgumentError("coarse_only mode needs head sets");
    report.coarse_heads_used = head_sets->coarse.heads;
    PromptLayout layout1 = build_prompt(sample, dataset_order(sample), tmpl, backend.tokenizer(),
                                        backend.config().context_limit);
    AttentionTrace trace1 = backend.prefill_with_capture(layout1, nullptr, nullptr);
    report.timings_ms["prefill1"] = trace1.prefill_ms;
    RetrievalDocScores scores1 = doc_scores(trace1);
    CoarseResult coarse;
    coarse.selected = coarse_filter(scores1, head_sets->coarse, config.m1, &report.warnings);
    coarse.relevance = relevance_scores(scores1, head_sets->coarse, coarse.selected);
    coarse.order = rerank(coarse.selected, coarse.relevance);
    report.coarse = coarse;
    PromptLayout layout2 = build_prompt(sample, coarse.order, tmpl, backend.tokenizer(),
                                        backend.config().context_limit);
    GenerationResult gen = backend.generate(layout2, nullptr, nullptr, max_new_tokens);
    report.answer = gen.text;
    report.prefill_count = 1 + gen.n_prefills;
    report.timings_ms["stage2_prefill"] = gen.prefill_ms;
    report.timings_ms["ttft"] = trace1.prefill_ms + gen.first_token_ms;
    report.timings_ms["decode"] = gen.total_ms - gen.first_token_ms;
    return report;
}

namespace {

json span_to_json(const TokenSpan& s) { return json::array({s.start, s.end}); }

json report_to_json_impl(const PipelineReport& r, bool with_timings) {
    json heads_c = json::array(), heads_f = json::array();
    for (const auto& h : r.coarse_heads_used) heads_c.push_back({h.layer, h.head});
    for (const auto& h : r.fine_heads_used) heads_f.push_back({h.layer, h.head});
    json j{{"schema_version", r.schema_version},
           {"sample_id", r.sample_id},
           {"mode", mode_name(r.mode)},
           {"config",
            {{"m1", r.config.m1},
             {"k1", r.config.k1},
             {"m2", r.config.m2},
             {"k2", r.config.k2},
             {"delta", r.config.delta},
             {"template", r.config.template_id}}},
           {"head_sets", {{"coarse", heads_c}, {"fine", heads_f}}},
           {"answer", r.answer},
           {"prefill_count", r.prefill_count},
           {"warnings", r.warnings},
           {"seed", r.seed},
           {"backend", r.backend_identity},
           {"config_hash", r.config_hash}};
    if (r.coarse) {
        json rel = json::object();
        for (const auto& [d, g] : r.coarse->relevance) rel[std::to_string(d)] = g;
        j["coarse"] = {{"selected", r.coarse->selected},
                       {"relevance", rel},
                       {"order", r.coarse->order}};
    }
    if (r.fine) {
        json spans = json::array();
        for (const auto& s : r.fine->bias.key_spans) spans.push_back(span_to_json(s));
        j["fine"] = {{"candidates", r.fine->candidates},
                     {"delta", r.fine->bias.delta},
                     {"query_span", span_to_json(r.fine->bias.query_span)},
                     {"key_spans", spans}};
    }
    if (with_timings) {
        json t = json::object();
        for (const auto& [k, v] : r.timings_ms) t[k] = v;
        j["timings_ms"] = t;
    }
    return j;
}

}  // namespace

std::string report_to_json(const PipelineReport& r) {
    return report_to_json_impl(r, true).dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string report_payload_json(const PipelineReport& r) {
    return report_to_json_impl(r, false).dump(-1, ' ', false, json::error_handler_t::replace);
}

void write_reports(const std::string& path, const std::vector<PipelineReport>& reports) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write reports: " + path);
    for (const auto& r : reports) out << report_to_json(r) << "\n";
}

}  // namespace cafe
