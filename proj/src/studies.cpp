#include "cafe/studies.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include <json.hpp>

#include "cafe/errors.hpp"
#include "cafe/lexical.hpp"
#include "cafe/rng.hpp"
#include "parallel.hpp"

namespace cafe {

using nlohmann::json;

std::string mask_condition_name(MaskCondition c) {
    switch (c) {
        case MaskCondition::none: return "none";
        case MaskCondition::e2_to_e1: return "e2_to_e1";
        case MaskCondition::q_to_e1: return "q_to_e1";
        case MaskCondition::q_to_e2: return "q_to_e2";
        case MaskCondition::q_to_gold: return "q_to_gold";
        case MaskCondition::q_to_irrelevant_1: return "q_to_irrelevant_1";
        case MaskCondition::q_to_irrelevant_2: return "q_to_irrelevant_2";
        case MaskCondition::closed_book: return "closed_book";
    }
    return "?";
}

std::vector<MaskCondition> all_mask_conditions() {
    return {MaskCondition::none,
            MaskCondition::e2_to_e1,
            MaskCondition::q_to_e1,
            MaskCondition::q_to_e2,
            MaskCondition::q_to_gold,
            MaskCondition::q_to_irrelevant_1,
            MaskCondition::q_to_irrelevant_2,
            MaskCondition::closed_book};
}

namespace {

// Deterministic accumulator keyed by (axis, value, mode, metric); emission
// order is the map order, so tables are bit-stable.
class CellAcc {
public:
    void add(const std::string& axis, const std::string& value, const std::string& mode,
             const std::string& metric, double x) {
        auto& a = acc_[{axis, value, mode, metric}];
        a.first += x;
        a.second += 1;
    }
    void count(const std::string& axis, const std::string& value, const std::string& mode,
               const std::string& metric, int k) {
        auto& a = acc_[{axis, value, mode, metric}];
        a.first += k;
        a.second += k;
    }
    std::vector<StudyCell> cells() const {
        std::vector<StudyCell> out;
        for (const auto& [key, a] : acc_) {
            StudyCell c;
            std::tie(c.axis, c.value, c.mode, c.metric) = key;
            c.n = a.second;
            c.mean = a.second > 0 ? a.first / a.second : 0.0;
            if (c.metric == "skipped") c.mean = a.first;  // plain count
            out.push_back(std::move(c));
        }
        return out;
    }

private:
    std::map<std::tuple<std::string, std::string, std::string, std::string>,
             std::pair<double, int>>
        acc_;
};

std::vector<int> full_order(const QASample& s) {
    std::vector<int> order;
    for (const auto& d : s.documents) order.push_back(d.doc_id);
    return order;
}

// Gold doc ids in context order.
std::vector<int> gold_in_order(const QASample& s) {
    std::vector<int> gold;
    for (const auto& d : s.documents)
        if (s.gold_evidence.count(d.doc_id)) gold.push_back(d.doc_id);
    return gold;
}

std::vector<int> irrelevant_in_order(const QASample& s) {
    std::vector<int> out;
    for (const auto& d : s.documents)
        if (!s.gold_evidence.count(d.doc_id)) out.push_back(d.doc_id);
    return out;
}

QASample rebuild_sample(const QASample& base, const std::vector<Document>& docs,
                        const std::set<int>& gold_positions) {
    QASample s;
    s.sample_id = base.sample_id;
    s.question = base.question;
    s.gold_answers = base.gold_answers;
    s.documents = docs;
    for (std::size_t i = 0; i < s.documents.size(); ++i)
        s.documents[i].doc_id = static_cast<int>(i);
    s.gold_evidence = gold_positions;
    return s;
}

struct SampleEval {
    bool skipped = true;
    int sub = 0;
    double f1 = 0.0;
    double coarse_recall = -1.0;  // <0 = absent
};

}  // namespace

StudyTable run_masking_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                             const std::vector<MaskCondition>& conditions) {
    const Backend& backend = *ctx.backend;
    CellAcc acc;
    for (MaskCondition cond : conditions) {
        std::string value = mask_condition_name(cond);
        std::vector<SampleEval> evals(samples.size());
        parallel_for(samples.size(), ctx.jobs, [&](std::size_t i) {
            const QASample& s = samples[i];
            auto gold = gold_in_order(s);
            auto irrelevant = irrelevant_in_order(s);
            bool needs_two_gold = cond == MaskCondition::e2_to_e1 ||
                                  cond == MaskCondition::q_to_e2 ||
                                  cond == MaskCondition::q_to_gold;
            if (gold.empty()) return;
            if (needs_two_gold && gold.size() < 2) return;
            if (cond == MaskCondition::q_to_irrelevant_1 && irrelevant.empty()) return;
            if (cond == MaskCondition::q_to_irrelevant_2 && irrelevant.size() < 2) return;

            GenerationResult gen;
            if (cond == MaskCondition::closed_book) {
                PromptLayout layout = build_prompt(s, {}, *ctx.tmpl, backend.tokenizer(),
                                                   backend.config().context_limit);
                gen = backend.generate(layout, nullptr, nullptr, ctx.max_new_tokens);
            } else {
                PromptLayout layout = build_prompt(s, full_order(s), *ctx.tmpl,
                                                   backend.tokenizer(),
                                                   backend.config().context_limit);
                MaskSpec mask;
                auto q = layout.question_span;
                switch (cond) {
                    case MaskCondition::none:
                        break;
                    case MaskCondition::e2_to_e1:
                        mask.pairs.push_back({layout.doc_spans.at(gold[1]),
                                              layout.doc_spans.at(gold[0])});
                        break;
                    case MaskCondition::q_to_e1:
                        mask.pairs.push_back({q, layout.doc_spans.at(gold[0])});
                        break;
                    case MaskCondition::q_to_e2:
                        mask.pairs.push_back({q, layout.doc_spans.at(gold[1])});
                        break;
                    case MaskCondition::q_to_gold:
                        for (int g : gold) mask.pairs.push_back({q, layout.doc_spans.at(g)});
                        break;
                    case MaskCondition::q_to_irrelevant_1:
                        mask.pairs.push_back({q, layout.doc_spans.at(irrelevant[0])});
                        break;
                    case MaskCondition::q_to_irrelevant_2:
                        mask.pairs.push_back({q, layout.doc_spans.at(irrelevant[0])});
                        mask.pairs.push_back({q, layout.doc_spans.at(irrelevant[1])});
                        break;
                    default:
                        break;
                }
                gen = backend.generate(layout, nullptr, mask.pairs.empty() ? nullptr : &mask,
                                       ctx.max_new_tokens);
            }
            evals[i].skipped = false;
            evals[i].sub = sub_em(gen.text, s.gold_answers);
            evals[i].f1 = token_f1(gen.text, s.gold_answers);
        });
        int skipped = 0;
        for (const auto& e : evals) {
            if (e.skipped) {
                ++skipped;
                continue;
            }
            acc.add("condition", value, "direct", "sub_em", e.sub);
            acc.add("condition", value, "direct", "f1", e.f1);
        }
        if (skipped > 0) acc.count("condition", value, "direct", "skipped", skipped);
    }
    StudyTable table;
    table.kind = "masking";
    table.seed = ctx.seed;
    table.backend_identity = backend.identity();
    table.cells = acc.cells();
    return table;
}

namespace {

void eval_modes_into(const QASample& s, const StudyContext& ctx, const std::string& axis,
                     const std::string& value, std::vector<std::pair<std::string, SampleEval>>& out) {
    PipelineReport direct = run_baseline(s, Mode::direct, ctx.stage, *ctx.backend, ctx.head_sets,
                                         *ctx.tmpl, ctx.max_new_tokens);
    SampleEval de;
    de.skipped = false;
    de.sub = sub_em(direct.answer, s.gold_answers);
    de.f1 = token_f1(direct.answer, s.gold_answers);
    out.push_back({"direct", de});

    PipelineReport cafe_rep =
        run_cafe(s, ctx.stage, *ctx.backend, *ctx.head_sets, *ctx.tmpl, ctx.max_new_tokens);
    SampleEval ce;
    ce.skipped = false;
    ce.sub = sub_em(cafe_rep.answer, s.gold_answers);
    ce.f1 = token_f1(cafe_rep.answer, s.gold_answers);
    if (cafe_rep.coarse && !s.gold_evidence.empty()) {
        std::set<int> sel(cafe_rep.coarse->selected.begin(), cafe_rep.coarse->selected.end());
        ce.coarse_recall = evidence_recall(sel, s.gold_evidence);
    }
    out.push_back({"cafe", ce});
    (void)axis;
    (void)value;
}

}  // namespace

StudyTable run_gap_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                         const std::vector<int>& doc_counts) {
    if (!ctx.head_sets) throw ArgumentError("gap study needs head sets for the cafe mode");
    // Distractor pool: non-gold documents of the other samples.
    std::vector<std::vector<Document>> pools(samples.size());
    {
        std::vector<std::pair<std::size_t, Document>> all;
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (const auto& d : samples[i].documents)
                if (!samples[i].gold_evidence.count(d.doc_id)) all.push_back({i, d});
        for (std::size_t i = 0; i < samples.size(); ++i)
            for (const auto& [owner, doc] : all)
                if (owner != i) pools[i].push_back(doc);
    }

    CellAcc acc;
    for (int c : doc_counts) {
        std::vector<std::vector<std::pair<std::string, SampleEval>>> rows(samples.size());
        parallel_for(samples.size(), ctx.jobs, [&](std::size_t i) {
            const QASample& s = samples[i];
            const auto gold_ids = gold_in_order(s);
            const int need = c - static_cast<int>(gold_ids.size());
            if (need < 0)
                throw ArgumentError("gap study count " + std::to_string(c) +
                                    " is below the gold count of sample " + s.sample_id);
            if (static_cast<int>(pools[i].size()) < need)
                throw ArgumentError("distractor pool too small for count " + std::to_string(c));

            std::vector<Document> docs;
            for (int g : gold_ids) docs.push_back(s.documents[static_cast<std::size_t>(g)]);
            std::uint64_t pick_seed =
                child_seed(ctx.seed, "gap-pick-" + s.sample_id + "-" + std::to_string(c));
            std::vector<int> pool_idx(pools[i].size());
            for (std::size_t p = 0; p < pool_idx.size(); ++p) pool_idx[p] = static_cast<int>(p);
            deterministic_shuffle(pool_idx, pick_seed);
            for (int p = 0; p < need; ++p)
                docs.push_back(pools[i][static_cast<std::size_t>(pool_idx[static_cast<std::size_t>(p)])]);

            std::vector<int> perm(docs.size());
            for (std::size_t p = 0; p < perm.size(); ++p) perm[p] = static_cast<int>(p);
            deterministic_shuffle(perm,
                                  child_seed(ctx.seed, "gap-shuffle-" + s.sample_id + "-" +
                                                           std::to_string(c)));
            std::vector<Document> shuffled;
            std::set<int> gold_positions;
            for (std::size_t p = 0; p < perm.size(); ++p) {
                shuffled.push_back(docs[static_cast<std::size_t>(perm[p])]);
                if (perm[p] < static_cast<int>(gold_ids.size()))
                    gold_positions.insert(static_cast<int>(p));
            }
            QASample rebuilt = rebuild_sample(s, shuffled, gold_positions);
            eval_modes_into(rebuilt, ctx, "doc_count", std::to_string(c), rows[i]);
        });
        for (const auto& row : rows) {
            for (const auto& [mode, e] : row) {
                acc.add("doc_count", std::to_string(c), mode, "sub_em", e.sub);
                acc.add("doc_count", std::to_string(c), mode, "f1", e.f1);
                if (e.coarse_recall >= 0.0)
                    acc.add("doc_count", std::to_string(c), mode, "coarse_recall", e.coarse_recall);
            }
        }
    }
    StudyTable table;
    table.kind = "gap";
    table.seed = ctx.seed;
    table.backend_identity = ctx.backend->identity();
    table.cells = acc.cells();
    return table;
}

StudyTable run_position_study(const std::vector<QASample>& samples, const StudyContext& ctx,
                              const std::vector<int>& positions) {
    if (!ctx.head_sets) throw ArgumentError("position study needs head sets for the cafe mode");
    std::vector<QASample> single_gold;
    for (const auto& s : samples)
        if (s.gold_evidence.size() == 1) single_gold.push_back(s);
    if (single_gold.empty())
        throw ArgumentError("position study requires single-gold samples");

    CellAcc acc;
    for (int pos : positions) {
        std::vector<std::vector<std::pair<std::string, SampleEval>>> rows(single_gold.size());
        parallel_for(single_gold.size(), ctx.jobs, [&](std::size_t i) {
            const QASample& s = single_gold[i];
            const int n = static_cast<int>(s.documents.size());
            if (pos < 0 || pos >= n)
                throw ArgumentError("position " + std::to_string(pos) +
                                    " out of range for sample with " + std::to_string(n) +
                                    " documents");
            int gold_id = *s.gold_evidence.begin();
            std::vector<Document> docs;
            for (const auto& d : s.documents)
                if (d.doc_id != gold_id) docs.push_back(d);
            docs.insert(docs.begin() + pos, s.documents[static_cast<std::size_t>(gold_id)]);
            QASample rebuilt = rebuild_sample(s, docs, {pos});
            eval_modes_into(rebuilt, ctx, "position", std::to_string(pos), rows[i]);
        });
        for (const auto& row : rows) {
            for (const auto& [mode, e] : row) {
                acc.add("position", std::to_string(pos), mode, "sub_em", e.sub);
                acc.add("position", std::to_string(pos), mode, "f1", e.f1);
            }
        }
    }
    StudyTable table;
    table.kind = "position";
    table.seed = ctx.seed;
    table.backend_identity = ctx.backend->identity();
    table.cells = acc.cells();
    return table;
}

StudyTable run_sweep(const std::vector<QASample>& samples, const StudyContext& ctx,
                     const SweepGrid& grid_in) {
    if (!ctx.head_sets) throw ArgumentError("sweep needs head sets");
    SweepGrid grid = grid_in;
    if (grid.m1s.empty()) grid.m1s = {ctx.stage.m1};
    if (grid.k1s.empty()) grid.k1s = {ctx.stage.k1};
    if (grid.m2s.empty()) grid.m2s = {ctx.stage.m2};
    if (grid.k2s.empty()) grid.k2s = {ctx.stage.k2};
    if (grid.deltas.empty()) grid.deltas = {ctx.stage.delta};

    CellAcc acc;
    for (int m1 : grid.m1s)
        for (int k1 : grid.k1s)
            for (int m2 : grid.m2s)
                for (int k2 : grid.k2s)
                    for (double delta : grid.deltas) {
                        StageConfig cfg = ctx.stage;
                        cfg.m1 = m1;
                        cfg.k1 = k1;
                        cfg.m2 = m2;
                        cfg.k2 = k2;
                        cfg.delta = delta;
                        HeadSets sets;
                        sets.coarse = ctx.head_sets->coarse.prefix(
                            std::min<int>(k1, static_cast<int>(ctx.head_sets->coarse.heads.size())));
                        sets.fine = ctx.head_sets->fine.prefix(
                            std::min<int>(k2, static_cast<int>(ctx.head_sets->fine.heads.size())));
                        char vbuf[128];
                        std::snprintf(vbuf, sizeof(vbuf), "m1=%d;k1=%d;m2=%d;k2=%d;delta=%.6g",
                                      m1, k1, m2, k2, delta);
                        std::string value(vbuf);

                        struct Row {
                            int sub = 0;
                            double f1 = 0.0;
                            double coarse_recall = -1.0;
                            double fine_recall = -1.0;
                        };
                        std::vector<Row> rows(samples.size());
                        parallel_for(samples.size(), ctx.jobs, [&](std::size_t i) {
                            const QASample& s = samples[i];
                            PipelineReport rep = run_cafe(s, cfg, *ctx.backend, sets, *ctx.tmpl,
                                                          ctx.max_new_tokens);
                            rows[i].sub = sub_em(rep.answer, s.gold_answers);
                            rows[i].f1 = token_f1(rep.answer, s.gold_answers);
                            if (!s.gold_evidence.empty()) {
                                if (rep.coarse) {
                                    std::set<int> sel(rep.coarse->selected.begin(),
                                                      rep.coarse->selected.end());
                                    rows[i].coarse_recall = evidence_recall(sel, s.gold_evidence);
                                }
                                if (rep.fine) {
                                    std::set<int> cand(rep.fine->candidates.begin(),
                                                       rep.fine->candidates.end());
                                    rows[i].fine_recall = evidence_recall(cand, s.gold_evidence);
                                }
                            }
                        });
                        for (const auto& r : rows) {
                            acc.add("grid", value, "cafe", "sub_em", r.sub);
                            acc.add("grid", value, "cafe", "f1", r.f1);
                            if (r.coarse_recall >= 0.0)
                                acc.add("grid", value, "cafe", "coarse_recall", r.coarse_recall);
                            if (r.fine_recall >= 0.0)
                                acc.add("grid", value, "cafe", "fine_recall", r.fine_recall);
                        }
                    }
    StudyTable table;
    table.kind = "sweep";
    table.seed = ctx.seed;
    table.backend_identity = ctx.backend->identity();
    table.cells = acc.cells();
    return table;
}

StudyTable measure_latency(const std::vector<PipelineReport>& reports) {
    CellAcc acc;
    std::map<std::string, std::vector<double>> prefill_by_mode;
    for (const auto& r : reports) {
        std::string mode = mode_name(r.mode);
        acc.add("mode", mode, mode, "prefill_count", r.prefill_count);
        double prefill_total = 0.0;
        for (const auto& [k, v] : r.timings_ms)
            if (k == "prefill" || k == "prefill1" || k == "stage2_prefill") prefill_total += v;
        prefill_by_mode[mode].push_back(prefill_total);
        acc.add("mode", mode, mode, "prefill_ms_mean", prefill_total);
        auto it = r.timings_ms.find("ttft");
        if (it != r.timings_ms.end()) acc.add("mode", mode, mode, "ttft_ms", it->second);
    }
    StudyTable table;
    table.kind = "latency";
    table.cells = acc.cells();
    for (auto& [mode, v] : prefill_by_mode) {
        std::sort(v.begin(), v.end());
        StudyCell c;
        c.axis = "mode";
        c.value = mode;
        c.mode = mode;
        c.metric = "prefill_ms_median";
        c.n = static_cast<int>(v.size());
        c.mean = v.empty() ? 0.0
                           : (v.size() % 2 ? v[v.size() / 2]
                                           : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]));
        table.cells.push_back(std::move(c));
    }
    std::stable_sort(table.cells.begin(), table.cells.end(), [](const StudyCell& a, const StudyCell& b) {
        return std::tie(a.axis, a.value, a.mode, a.metric) < std::tie(b.axis, b.value, b.mode, b.metric);
    });
    return table;
}

StudyTable run_selection_study(const std::vector<QASample>& samples, const StudyContext& ctx) {
    if (!ctx.head_sets) throw ArgumentError("selection study needs head sets");
    const Backend& backend = *ctx.backend;
    struct Row {
        bool skipped = true;
        double attention = 0.0;
        double lexical = 0.0;
    };
    std::vector<Row> rows(samples.size());
    parallel_for(samples.size(), ctx.jobs, [&](std::size_t i) {
        const QASample& s = samples[i];
        if (s.gold_evidence.empty()) return;
        PromptLayout layout = build_prompt(s, full_order(s), *ctx.tmpl, backend.tokenizer(),
                                           backend.config().context_limit);
        AttentionTrace trace = backend.prefill_with_capture(layout, nullptr, nullptr);
        RetrievalDocScores scores = doc_scores(trace);
        std::vector<int> attn = coarse_filter(scores, ctx.head_sets->coarse, ctx.stage.m1);
        std::vector<int> lex = bm25_top_docs(s, std::max<int>(1, static_cast<int>(attn.size())));
        rows[i].skipped = false;
        rows[i].attention =
            evidence_recall({attn.begin(), attn.end()}, s.gold_evidence);
        rows[i].lexical = evidence_recall({lex.begin(), lex.end()}, s.gold_evidence);
    });
    CellAcc acc;
    for (const auto& r : rows) {
        if (r.skipped) continue;
        acc.add("strategy", "attention", "attention", "recall", r.attention);
        acc.add("strategy", "lexical", "lexical", "recall", r.lexical);
    }
    StudyTable table;
    table.kind = "selection";
    table.seed = ctx.seed;
    table.backend_identity = backend.identity();
    table.cells = acc.cells();
    return table;
}

void write_study_csv(const std::string& path, const StudyTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write study csv: " + path);
    out << "# kind=" << table.kind << "\n";
    out << "# seed=" << table.seed << "\n";
    out << "# config_hash=" << table.config_hash << "\n";
    out << "# backend=" << table.backend_identity << "\n";
    out << "# dataset_hash=" << table.dataset_hash << "\n";
    out << "axis,value,mode,metric,mean,n\n";
    char buf[64];
    for (const auto& c : table.cells) {
        std::snprintf(buf, sizeof(buf), "%.12g", c.mean);
        out << c.axis << "," << c.value << "," << c.mode << "," << c.metric << "," << buf << ","
            << c.n << "\n";
    }
}

void write_study_sidecar(const std::string& path, const StudyTable& table) {
    json j{{"kind", table.kind},
           {"seed", table.seed},
           {"config_hash", table.config_hash},
           {"backend", table.backend_identity},
           {"dataset_hash", table.dataset_hash},
           {"cells", table.cells.size()}};
    if (!table.config_snapshot_json.empty())
        j["config"] = json::parse(table.config_snapshot_json);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write study sidecar: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace cafe
