#include "cafe/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "cafe/errors.hpp"
#include "cafe/rng.hpp"

namespace cafe {

using nlohmann::json;

void OracleConfig::validate() const {
    if (layers < 1 || heads < 1) throw ArgumentError("oracle grid must be positive");
    if (concentration < 0.0 || concentration > 1.0)
        throw ArgumentError("concentration must lie in [0,1]");
    if (coarse_concentration_scale < 0.0 || coarse_concentration_scale > 1.0)
        throw ArgumentError("coarse_concentration_scale must lie in [0,1]");
    if (template_mass < 0.0 || template_mass >= 1.0)
        throw ArgumentError("template_mass must lie in [0,1)");
    if (fine_context_max_docs < 1) throw ArgumentError("fine_context_max_docs must be >= 1");
    if (answer_threshold < 0.0) throw ArgumentError("answer_threshold must be >= 0");
    auto in_grid = [&](const HeadId& h) {
        return h.layer >= 0 && h.layer < layers && h.head >= 0 && h.head < heads;
    };
    for (const auto& h : planted_coarse)
        if (!in_grid(h)) throw ArgumentError("planted coarse head outside grid");
    for (const auto& h : planted_fine)
        if (!in_grid(h)) throw ArgumentError("planted fine head outside grid");
}

std::string make_marker(const std::string& payload, int part, int parts) {
    std::ostringstream os;
    os << "<<answer:" << payload << ":" << part << "/" << parts << ">>";
    return os.str();
}

namespace {

std::string span_text(const PromptLayout& layout, const TokenSpan& span) {
    std::string out;
    out.reserve(static_cast<std::size_t>(span.size()));
    for (int t = span.start; t < span.end; ++t)
        out.push_back(static_cast<char>(static_cast<unsigned char>(layout.tokens[t] & 0xff)));
    return out;
}

const std::regex& marker_regex() {
    static const std::regex re(R"(<<answer:([A-Za-z0-9_\- ]+):(\d+)/(\d+)>>)");
    return re;
}

}  // namespace

std::vector<EvidenceMarker> find_markers(const PromptLayout& layout, const Tokenizer&) {
    std::vector<EvidenceMarker> out;
    for (const auto& [doc_id, span] : layout.doc_spans) {
        std::string body = span_text(layout, span);
        std::smatch m;
        if (std::regex_search(body, m, marker_regex())) {
            EvidenceMarker mk;
            mk.doc_id = doc_id;
            mk.payload = m[1];
            mk.part = std::stoi(m[2]);
            mk.parts = std::stoi(m[3]);
            out.push_back(std::move(mk));
        }
    }
    return out;
}

namespace {

enum class HeadKind { coarse_planted, fine_planted, noise };

HeadKind head_kind(const OracleConfig& cfg, HeadId h) {
    if (std::find(cfg.planted_coarse.begin(), cfg.planted_coarse.end(), h) !=
        cfg.planted_coarse.end())
        return HeadKind::coarse_planted;
    if (std::find(cfg.planted_fine.begin(), cfg.planted_fine.end(), h) != cfg.planted_fine.end())
        return HeadKind::fine_planted;
    return HeadKind::noise;
}

// Seeded positive weight per (noise head, document body). Keyed by content so
// the draw is stable across prompt subsets and orderings; adding documents
// can only dilute existing shares.
double noise_weight(const OracleConfig& cfg, const PromptLayout& layout, HeadId h,
                    const TokenSpan& span) {
    std::uint64_t doc_key = fnv1a64(span_text(layout, span));
    std::uint64_t flat = static_cast<std::uint64_t>(h.layer) * cfg.heads + h.head;
    return exp_draw(mix(cfg.noise_seed, mix(doc_key, flat)));
}

double locality_tilt(const OracleConfig& cfg, int position, int n_docs) {
    if (cfg.locality_lambda <= 0.0 || n_docs <= 1) return 1.0;
    double r = static_cast<double>(position) / static_cast<double>(n_docs - 1);
    // Peaked at both prompt edges, lowest mid-context.
    return std::exp(cfg.locality_lambda * std::abs(2.0 * r - 1.0));
}

// Target document-mass distribution of one head, indexed like trace.doc_ids
// (ascending doc_id).
std::vector<double> head_doc_masses(const OracleConfig& cfg, const PromptLayout& layout,
                                    const std::set<int>& gold, HeadId h) {
    const int n = layout.doc_count();
    std::vector<int> doc_ids;
    doc_ids.reserve(n);
    for (const auto& [doc_id, _] : layout.doc_spans) doc_ids.push_back(doc_id);

    std::vector<int> position(n, 0);  // render position per doc index
    for (int i = 0; i < n; ++i) {
        auto it = std::find(layout.doc_order.begin(), layout.doc_order.end(), doc_ids[i]);
        position[i] = static_cast<int>(it - layout.doc_order.begin());
    }

    std::vector<std::uint8_t> is_gold(n, 0);
    int gold_count = 0;
    for (int i = 0; i < n; ++i) {
        if (gold.count(doc_ids[i])) {
            is_gold[i] = 1;
            ++gold_count;
        }
    }

    HeadKind kind = head_kind(cfg, h);
    std::vector<double> w(n, 0.0);
    if (kind == HeadKind::fine_planted && n > cfg.fine_context_max_docs) {
        // Fine heads are condensed-context specialists; elsewhere they spread
        // evenly over documents.
        std::fill(w.begin(), w.end(), 1.0 / n);
        return w;
    }
    if (kind != HeadKind::noise && gold_count > 0) {
        double conc = cfg.concentration;
        if (kind == HeadKind::coarse_planted) conc *= cfg.coarse_concentration_scale;
        int others = n - gold_count;
        double gold_mass = others == 0 ? 1.0 : conc;
        for (int i = 0; i < n; ++i)
            w[i] = is_gold[i] ? gold_mass / gold_count
                              : (others == 0 ? 0.0 : (1.0 - conc) / others);
        return w;
    }
    // Noise profile (also planted heads when no evidence is present).
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        w[i] = noise_weight(cfg, layout, h, layout.doc_spans.at(doc_ids[i])) *
               locality_tilt(cfg, position[i], n);
        sum += w[i];
    }
    for (int i = 0; i < n; ++i) w[i] /= sum;
    return w;
}

struct RowLayout {
    std::vector<int> doc_of_key;  // doc index per key, -1 for non-doc tokens
};

RowLayout make_row_layout(const PromptLayout& layout) {
    RowLayout rl;
    rl.doc_of_key.assign(layout.tokens.size(), -1);
    int di = 0;
    for (const auto& [doc_id, span] : layout.doc_spans) {
        for (int t = span.start; t < span.end; ++t) rl.doc_of_key[t] = di;
        ++di;
    }
    return rl;
}

}  // namespace

AttentionTrace synthetic_prefill(const OracleConfig& cfg, const PromptLayout& layout,
                                 const std::set<int>& gold, const BiasSpec* bias,
                                 const MaskSpec* mask) {
    cfg.validate();
    const int total = static_cast<int>(layout.tokens.size());
    if (total > cfg.context_limit) throw OverflowError(total, cfg.context_limit);
    auto t0 = std::chrono::steady_clock::now();

    AttentionTrace trace;
    trace.layers = cfg.layers;
    trace.heads = cfg.heads;
    for (const auto& [doc_id, _] : layout.doc_spans) trace.doc_ids.push_back(doc_id);
    const int n_docs = static_cast<int>(trace.doc_ids.size());
    trace.alpha.assign(static_cast<std::size_t>(cfg.layers) * cfg.heads * n_docs, 0.0);
    trace.question_token_count = layout.question_span.size();
    trace.token_count = total;

    std::set<int> gold_present;
    for (int g : gold)
        if (layout.doc_spans.count(g)) gold_present.insert(g);

    RowLayout rl = make_row_layout(layout);
    std::vector<int> doc_len(n_docs, 0);
    {
        int di = 0;
        for (const auto& [_, span] : layout.doc_spans) doc_len[di++] = span.size();
    }

    const double eps = layout.question_span.size() > 0 && n_docs > 0 ? cfg.template_mass : 1.0;
    std::vector<double> logits, bias_row, probs;
    std::vector<std::uint8_t> mask_row;

    for (int layer = 0; layer < cfg.layers; ++layer) {
        for (int head = 0; head < cfg.heads; ++head) {
            HeadId hid{layer, head};
            int flat = layer * cfg.heads + head;
            std::vector<double> w = n_docs > 0
                                        ? head_doc_masses(cfg, layout, gold_present, hid)
                                        : std::vector<double>{};
            for (int q = layout.question_span.start; q < layout.question_span.end; ++q) {
                int visible = q + 1;
                int non_doc_visible = 0;
                for (int j = 0; j < visible; ++j)
                    if (rl.doc_of_key[j] < 0) ++non_doc_visible;
                logits.assign(visible, kNegInfLogit);
                for (int j = 0; j < visible; ++j) {
                    int di = rl.doc_of_key[j];
                    double p;
                    if (di >= 0) {
                        p = w[di] * (1.0 - eps) / doc_len[di];
                    } else {
                        p = non_doc_visible > 0 ? eps / non_doc_visible : 0.0;
                    }
                    if (p > 0.0) logits[j] = std::log(p);
                }
                fill_bias_row(bias, q, visible, total, bias_row);
                bool any_mask =
                    fill_mask_row(mask, q, visible, total, layout.question_span, mask_row);
                probs.assign(visible, 0.0);
                attention_kernel_row(logits.data(), bias_row.data(),
                                     any_mask ? mask_row.data() : nullptr, visible, 1.0,
                                     probs.data(), q);
                for (int j = 0; j < visible; ++j) {
                    int di = rl.doc_of_key[j];
                    if (di >= 0) trace.alpha_ref(flat, di) += probs[j];
                }
            }
        }
    }
    trace.prefill_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

SyntheticBackend::SyntheticBackend(OracleConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    model_config_.layers = cfg_.layers;
    model_config_.heads = cfg_.heads;
    model_config_.head_dim = 16;
    model_config_.vocab_size = tokenizer_.vocab_size();
    model_config_.context_limit = cfg_.context_limit;
    model_config_.pos_encoding = "none";
    identity_ = "synthetic:" + std::to_string(fnv1a64(oracle_to_json_text(cfg_)));
}

std::set<int> SyntheticBackend::gold_from_markers(const PromptLayout& layout) const {
    std::set<int> gold;
    for (const auto& m : find_markers(layout, tokenizer_)) gold.insert(m.doc_id);
    return gold;
}

AttentionTrace SyntheticBackend::prefill_with_capture(const PromptLayout& layout,
                                                      const BiasSpec* bias,
                                                      const MaskSpec* mask) const {
    return synthetic_prefill(cfg_, layout, gold_from_markers(layout), bias, mask);
}

std::string SyntheticBackend::answer_from_trace(const PromptLayout& layout,
                                                const AttentionTrace& trace) const {
    auto markers = find_markers(layout, tokenizer_);
    if (markers.empty()) return cfg_.fallback_text;
    const std::string payload = markers.front().payload;
    const int parts = markers.front().parts;
    std::set<int> seen_parts;
    for (const auto& m : markers) {
        if (m.payload != payload || m.parts != parts) return cfg_.fallback_text;
        seen_parts.insert(m.part);
    }
    if (static_cast<int>(seen_parts.size()) != parts) return cfg_.fallback_text;

    // Mean over heads of the per-question-token attention share of each
    // evidence document must clear the threshold.
    const double denom = static_cast<double>(trace.head_count()) *
                         std::max(1, trace.question_token_count);
    for (const auto& m : markers) {
        int di = trace.doc_index(m.doc_id);
        if (di < 0) return cfg_.fallback_text;
        double mass = 0.0;
        for (int h = 0; h < trace.head_count(); ++h) mass += trace.alpha_of(h, di);
        if (mass / denom < cfg_.answer_threshold) return cfg_.fallback_text;
    }
    return payload;
}

GenerationResult SyntheticBackend::generate(const PromptLayout& layout, const BiasSpec* bias,
                                            const MaskSpec* mask, int max_new_tokens) const {
    auto t0 = std::chrono::steady_clock::now();
    GenerationResult res;
    AttentionTrace trace = prefill_with_capture(layout, bias, mask);
    res.prefill_ms = trace.prefill_ms;
    res.n_prefills = 1;
    std::string answer = answer_from_trace(layout, trace);
    if (static_cast<int>(answer.size()) > max_new_tokens)
        answer.resize(static_cast<std::size_t>(std::max(0, max_new_tokens)));
    res.text = answer;
    res.first_token_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.total_ms = res.first_token_ms;
    return res;
}

GenerationResult SyntheticBackend::prefill_then_generate(const PromptLayout& layout,
                                                         const MaskSpec* mask, int max_new_tokens,
                                                         const SteerFn& steer,
                                                         AttentionTrace* trace_out) const {
    auto t0 = std::chrono::steady_clock::now();
    GenerationResult res;
    AttentionTrace trace = prefill_with_capture(layout, nullptr, mask);
    res.prefill_ms = trace.prefill_ms;
    res.n_prefills = 1;
    std::optional<BiasSpec> bias = steer(trace);
    // Post-bias shares decide the answer; the captured trace stays unbiased.
    AttentionTrace steered =
        bias ? synthetic_prefill(cfg_, layout, gold_from_markers(layout), &*bias, mask) : trace;
    std::string answer = answer_from_trace(layout, steered);
    if (static_cast<int>(answer.size()) > max_new_tokens)
        answer.resize(static_cast<std::size_t>(std::max(0, max_new_tokens)));
    res.text = answer;
    if (trace_out) *trace_out = trace;
    res.first_token_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.total_ms = res.first_token_ms;
    return res;
}

std::vector<HeadTokenMatrix> SyntheticBackend::token_matrices(const PromptLayout& layout,
                                                              const BiasSpec* bias,
                                                              const MaskSpec* mask) const {
    const int total = static_cast<int>(layout.tokens.size());
    if (total > kTokenMatrixLimit)
        throw OverflowError(total, kTokenMatrixLimit);
    std::set<int> gold = gold_from_markers(layout);
    RowLayout rl = make_row_layout(layout);
    std::vector<int> doc_ids;
    for (const auto& [doc_id, _] : layout.doc_spans) doc_ids.push_back(doc_id);
    const int n_docs = static_cast<int>(doc_ids.size());
    std::vector<int> doc_len(n_docs, 0);
    {
        int di = 0;
        for (const auto& [_, span] : layout.doc_spans) doc_len[di++] = span.size();
    }
    const double eps =
        layout.question_span.size() > 0 && n_docs > 0 ? cfg_.template_mass : 1.0;

    std::vector<HeadTokenMatrix> out;
    std::vector<double> logits, bias_row;
    std::vector<std::uint8_t> mask_row;
    for (int layer = 0; layer < cfg_.layers; ++layer) {
        for (int head = 0; head < cfg_.heads; ++head) {
            HeadId hid{layer, head};
            std::vector<double> w =
                n_docs > 0 ? head_doc_masses(cfg_, layout, gold, hid) : std::vector<double>{};
            HeadTokenMatrix hm;
            hm.id = hid;
            hm.row_offset = layout.question_span.start;
            hm.mat = Mat(layout.question_span.size(), total);
            for (int q = layout.question_span.start; q < layout.question_span.end; ++q) {
                int visible = q + 1;
                int non_doc_visible = 0;
                for (int j = 0; j < visible; ++j)
                    if (rl.doc_of_key[j] < 0) ++non_doc_visible;
                logits.assign(visible, kNegInfLogit);
                for (int j = 0; j < visible; ++j) {
                    int di = rl.doc_of_key[j];
                    double p = di >= 0 ? w[di] * (1.0 - eps) / doc_len[di]
                                       : (non_doc_visible > 0 ? eps / non_doc_visible : 0.0);
                    if (p > 0.0) logits[j] = std::log(p);
                }
                fill_bias_row(bias, q, visible, total, bias_row);
                bool any_mask =
                    fill_mask_row(mask, q, visible, total, layout.question_span, mask_row);
                std::vector<double> probs(visible, 0.0);
                attention_kernel_row(logits.data(), bias_row.data(),
                                     any_mask ? mask_row.data() : nullptr, visible, 1.0,
                                     probs.data(), q);
                int r = q - layout.question_span.start;
                for (int j = 0; j < visible; ++j) hm.mat.at(r, j) = probs[j];
            }
            out.push_back(std::move(hm));
        }
    }
    return out;
}

std::string oracle_to_json_text(const OracleConfig& cfg) {
    json heads_c = json::array(), heads_f = json::array();
    for (const auto& h : cfg.planted_coarse) heads_c.push_back({h.layer, h.head});
    for (const auto& h : cfg.planted_fine) heads_f.push_back({h.layer, h.head});
    json j{{"layers", cfg.layers},
           {"heads", cfg.heads},
           {"planted_coarse", heads_c},
           {"planted_fine", heads_f},
           {"concentration", cfg.concentration},
           {"coarse_concentration_scale", cfg.coarse_concentration_scale},
           {"fine_context_max_docs", cfg.fine_context_max_docs},
           {"template_mass", cfg.template_mass},
           {"locality_lambda", cfg.locality_lambda},
           {"noise_seed", cfg.noise_seed},
           {"answer_threshold", cfg.answer_threshold},
           {"fallback_text", cfg.fallback_text},
           {"context_limit", cfg.context_limit}};
    return j.dump();
}

OracleConfig oracle_from_json_text(const std::string& text) {
    json j = json::parse(text);
    OracleConfig cfg;
    cfg.layers = j.value("layers", cfg.layers);
    cfg.heads = j.value("heads", cfg.heads);
    auto parse_heads = [&](const char* key, std::vector<HeadId>& out) {
        if (!j.contains(key)) return;
        out.clear();
        for (const auto& h : j.at(key)) out.push_back({h.at(0).get<int>(), h.at(1).get<int>()});
    };
    parse_heads("planted_coarse", cfg.planted_coarse);
    parse_heads("planted_fine", cfg.planted_fine);
    cfg.concentration = j.value("concentration", cfg.concentration);
    cfg.coarse_concentration_scale =
        j.value("coarse_concentration_scale", cfg.coarse_concentration_scale);
    cfg.fine_context_max_docs = j.value("fine_context_max_docs", cfg.fine_context_max_docs);
    cfg.template_mass = j.value("template_mass", cfg.template_mass);
    cfg.locality_lambda = j.value("locality_lambda", cfg.locality_lambda);
    cfg.noise_seed = j.value("noise_seed", cfg.noise_seed);
    cfg.answer_threshold = j.value("answer_threshold", cfg.answer_threshold);
    cfg.fallback_text = j.value("fallback_text", cfg.fallback_text);
    cfg.context_limit = j.value("context_limit", cfg.context_limit);
    cfg.validate();
    return cfg;
}

}  // namespace cafe
