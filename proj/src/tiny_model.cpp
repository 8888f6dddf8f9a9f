#include "cafe/tiny_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cafe/errors.hpp"
#include "cafe/rng.hpp"

namespace cafe {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'A', 'F', 'E', 'W', 'T', '0', '1'};
constexpr double kRopeBase = 10000.0;
constexpr float kLnEps = 1e-5f;

struct TensorRef {
    std::string name;
    std::vector<std::size_t> shape;
    const std::vector<float>* data;
};

std::vector<TensorRef> manifest(const TinyModelWeights& w) {
    const std::size_t D = static_cast<std::size_t>(w.d_model());
    const std::size_t V = static_cast<std::size_t>(w.cfg.vocab_size);
    std::vector<TensorRef> t;
    t.push_back({"tok_emb", {V, D}, &w.tok_emb});
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        const auto& L = w.layers[i];
        std::string p = "layers." + std::to_string(i) + ".";
        t.push_back({p + "ln1_g", {D}, &L.ln1_g});
        t.push_back({p + "ln1_b", {D}, &L.ln1_b});
        t.push_back({p + "wq", {D, D}, &L.wq});
        t.push_back({p + "wk", {D, D}, &L.wk});
        t.push_back({p + "wv", {D, D}, &L.wv});
        t.push_back({p + "wo", {D, D}, &L.wo});
        t.push_back({p + "ln2_g", {D}, &L.ln2_g});
        t.push_back({p + "ln2_b", {D}, &L.ln2_b});
        t.push_back({p + "w_up", {D, 4 * D}, &L.w_up});
        t.push_back({p + "w_down", {4 * D, D}, &L.w_down});
    }
    t.push_back({"lnf_g", {D}, &w.lnf_g});
    t.push_back({"lnf_b", {D}, &w.lnf_b});
    t.push_back({"lm_head", {D, V}, &w.lm_head});
    return t;
}

std::string weights_to_bytes(const TinyModelWeights& w) {
    auto tensors = manifest(w);
    json jt = json::array();
    std::size_t offset = 0;
    for (const auto& t : tensors) {
        std::size_t count = 1;
        for (auto s : t.shape) count *= s;
        if (t.data->size() != count)
            throw FormatError("tensor " + t.name + " has inconsistent element count");
        jt.push_back({{"name", t.name},
                      {"shape", t.shape},
                      {"dtype", "f32"},
                      {"offset", offset}});
        offset += count * sizeof(float);
    }
    json header{{"config",
                 {{"layers", w.cfg.layers},
                  {"heads", w.cfg.heads},
                  {"head_dim", w.cfg.head_dim},
                  {"vocab_size", w.cfg.vocab_size},
                  {"context_limit", w.cfg.context_limit},
                  {"pos_encoding", w.cfg.pos_encoding}}},
                {"tensors", jt}};
    std::string hbytes = header.dump();

    std::string out;
    out.reserve(16 + hbytes.size() + offset);
    out.append(kMagic, sizeof(kMagic));
    std::uint64_t hlen = hbytes.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((hlen >> (8 * i)) & 0xff));
    out += hbytes;
    for (const auto& t : tensors) {
        const char* raw = reinterpret_cast<const char*>(t.data->data());
        out.append(raw, t.data->size() * sizeof(float));  // little-endian host assumed
    }
    return out;
}

}  // namespace

void save_weights(const std::string& path, const TinyModelWeights& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write weights: " + path);
    std::string bytes = weights_to_bytes(w);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

TinyModelWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("weight file magic mismatch: " + path);
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    if (16 + hlen > bytes.size()) throw FormatError("weight header truncated: " + path);
    json header;
    try {
        header = json::parse(bytes.substr(16, hlen));
    } catch (const json::exception& e) {
        throw FormatError(std::string("weight header is not valid JSON: ") + e.what());
    }

    TinyModelWeights w;
    const json& jc = header.at("config");
    w.cfg.layers = jc.at("layers").get<int>();
    w.cfg.heads = jc.at("heads").get<int>();
    w.cfg.head_dim = jc.at("head_dim").get<int>();
    w.cfg.vocab_size = jc.at("vocab_size").get<int>();
    w.cfg.context_limit = jc.at("context_limit").get<int>();
    w.cfg.pos_encoding = jc.value("pos_encoding", "rope");
    if (w.cfg.layers < 1 || w.cfg.heads < 1 || w.cfg.head_dim < 2 || w.cfg.vocab_size < 1)
        throw FormatError("weight header declares a degenerate config");
    w.layers.resize(static_cast<std::size_t>(w.cfg.layers));

    const char* data = bytes.data() + 16 + hlen;
    const std::size_t data_size = bytes.size() - 16 - hlen;

    auto targets = manifest(w);
    std::size_t idx = 0;
    for (const auto& jt : header.at("tensors")) {
        if (idx >= targets.size()) throw FormatError("weight header lists unexpected extra tensors");
        auto& target = targets[idx++];
        std::string name = jt.at("name").get<std::string>();
        if (name != target.name)
            throw FormatError("unexpected tensor order: got " + name + ", want " + target.name);
        if (jt.at("dtype").get<std::string>() != "f32")
            throw FormatError("tensor " + name + " has unsupported dtype");
        std::size_t count = 1;
        for (const auto& s : jt.at("shape")) count *= s.get<std::size_t>();
        std::size_t expect = 1;
        for (auto s : target.shape) expect *= s;
        if (count != expect)
            throw FormatError("tensor " + name + " shape mismatch against header config");
        std::size_t offset = jt.at("offset").get<std::size_t>();
        if (offset + count * sizeof(float) > data_size)
            throw FormatError("tensor " + name + " extends past end of file (size mismatch)");
        auto* dst = const_cast<std::vector<float>*>(target.data);
        dst->resize(count);
        std::memcpy(dst->data(), data + offset, count * sizeof(float));
    }
    if (idx != targets.size())
        throw FormatError("weight file is missing tensor " + targets[idx].name);
    return w;
}

TinyModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed) {
    TinyModelWeights w;
    w.cfg = cfg;
    w.cfg.pos_encoding = "rope";
    const std::size_t D = static_cast<std::size_t>(w.d_model());
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    std::uint64_t counter = child_seed(seed, "tiny-weights");
    auto fill_gauss = [&](std::vector<float>& v, std::size_t n, double scale) {
        v.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = static_cast<float>(scale * gauss_draw(mix(counter, i)));
        counter = splitmix64(counter);
    };
    auto fill_const = [&](std::vector<float>& v, std::size_t n, float value) {
        v.assign(n, value);
    };
    fill_gauss(w.tok_emb, V * D, 0.02);
    w.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& L : w.layers) {
        fill_const(L.ln1_g, D, 1.0f);
        fill_const(L.ln1_b, D, 0.0f);
        fill_gauss(L.wq, D * D, 0.02);
        fill_gauss(L.wk, D * D, 0.02);
        fill_gauss(L.wv, D * D, 0.02);
        fill_gauss(L.wo, D * D, 0.02);
        fill_const(L.ln2_g, D, 1.0f);
        fill_const(L.ln2_b, D, 0.0f);
        fill_gauss(L.w_up, D * 4 * D, 0.02);
        fill_gauss(L.w_down, 4 * D * D, 0.02);
    }
    fill_const(w.lnf_g, D, 1.0f);
    fill_const(w.lnf_b, D, 0.0f);
    fill_gauss(w.lm_head, D * V, 0.02);
    return w;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

void layer_norm(const float* x, const float* g, const float* b, int d, float* out) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double c = x[i] - mean;
        var += c * c;
    }
    var /= d;
    float inv = 1.0f / std::sqrt(static_cast<float>(var) + kLnEps);
    for (int i = 0; i < d; ++i)
        out[i] = (static_cast<float>(x[i] - mean)) * inv * g[i] + b[i];
}

// y[o] = sum_i x[i] * W[i][o], W row-major [din][dout]
void matvec(const float* x, const std::vector<float>& W, int din, int dout, float* y) {
    std::fill(y, y + dout, 0.0f);
    for (int i = 0; i < din; ++i) {
        float xi = x[i];
        if (xi == 0.0f) continue;
        const float* wrow = W.data() + static_cast<std::size_t>(i) * dout;
        for (int o = 0; o < dout; ++o) y[o] += xi * wrow[o];
    }
}

void rope_rotate(float* vec, int head_dim, int pos) {
    for (int i = 0; i < head_dim / 2; ++i) {
        double theta = static_cast<double>(pos) *
                       std::pow(kRopeBase, -2.0 * static_cast<double>(i) / head_dim);
        float c = static_cast<float>(std::cos(theta));
        float s = static_cast<float>(std::sin(theta));
        float x = vec[2 * i], y = vec[2 * i + 1];
        vec[2 * i] = x * c - y * s;
        vec[2 * i + 1] = x * s + y * c;
    }
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.7071067811865476f)); }

std::vector<int> doc_of_key_map(const PromptLayout& layout) {
    std::vector<int> m(layout.tokens.size(), -1);
    int di = 0;
    for (const auto& [doc_id, span] : layout.doc_spans) {
        for (int t = span.start; t < span.end; ++t) m[t] = di;
        ++di;
    }
    return m;
}

}  // namespace

struct TinyModel::Workspace {
    int processed = 0;                       // tokens in the KV cache
    std::vector<std::vector<float>> k_cache;  // per layer: [t][d_model], rope applied
    std::vector<std::vector<float>> v_cache;
};

TinyModel::TinyModel(TinyModelWeights weights) : w_(std::move(weights)) {
    identity_ = "model:" + std::to_string(fnv1a64(weights_to_bytes(w_)));
}

std::unique_ptr<TinyModel> TinyModel::from_file(const std::string& path) {
    return std::make_unique<TinyModel>(load_weights(path));
}

namespace {

struct ForwardScratch {
    std::vector<float> xn, q, k, v, attn_out, proj, mlp_h, mlp_y;
    std::vector<double> logits_row, bias_row, probs;
    std::vector<std::uint8_t> mask_row;
};

}  // namespace

// Runs tokens [ws.processed, ws.processed + count) through the stack,
// appending to the KV cache. Returns the final hidden row of the last
// processed token. Capture hooks are only used during prefill.
static void forward_tokens(const TinyModelWeights& w, const std::vector<int>& tokens, int count,
                           const PromptLayout& layout, const BiasSpec* bias, const MaskSpec* mask,
                           TinyModel::Workspace& ws, ForwardScratch& sc, AttentionTrace* capture,
                           std::vector<HeadTokenMatrix>* mats, std::vector<float>& last_hidden) {
    const int D = w.d_model();
    const int H = w.cfg.heads;
    const int hd = w.cfg.head_dim;
    const double scale = std::sqrt(static_cast<double>(hd));
    const int prompt_len = static_cast<int>(layout.tokens.size());
    const int start = ws.processed;

    std::vector<int> doc_map;
    if (capture) doc_map = doc_of_key_map(layout);

    // Hidden states for the tokens processed in this call.
    std::vector<float> X(static_cast<std::size_t>(count) * D);
    for (int t = 0; t < count; ++t) {
        int tok = tokens[start + t];
        if (tok < 0 || tok >= w.cfg.vocab_size) throw ArgumentError("token id out of vocab range");
        std::copy_n(w.tok_emb.data() + static_cast<std::size_t>(tok) * D, D,
                    X.data() + static_cast<std::size_t>(t) * D);
    }

    sc.xn.resize(D);
    sc.q.resize(static_cast<std::size_t>(count) * D);
    sc.k.resize(D);
    sc.v.resize(D);
    sc.attn_out.resize(static_cast<std::size_t>(count) * D);
    sc.proj.resize(D);
    sc.mlp_h.resize(static_cast<std::size_t>(4) * D);
    sc.mlp_y.resize(D);

    for (int layer = 0; layer < w.cfg.layers; ++layer) {
        const auto& L = w.layers[static_cast<std::size_t>(layer)];
        auto& kc = ws.k_cache[static_cast<std::size_t>(layer)];
        auto& vc = ws.v_cache[static_cast<std::size_t>(layer)];
        kc.resize(static_cast<std::size_t>(start + count) * D);
        vc.resize(static_cast<std::size_t>(start + count) * D);

        // Projections (and rope) for the new tokens.
        for (int t = 0; t < count; ++t) {
            const float* x = X.data() + static_cast<std::size_t>(t) * D;
            layer_norm(x, L.ln1_g.data(), L.ln1_b.data(), D, sc.xn.data());
            float* qrow = sc.q.data() + static_cast<std::size_t>(t) * D;
            matvec(sc.xn.data(), L.wq, D, D, qrow);
            matvec(sc.xn.data(), L.wk, D, D, sc.k.data());
            matvec(sc.xn.data(), L.wv, D, D, sc.v.data());
            int pos = start + t;
            for (int h = 0; h < H; ++h) {
                rope_rotate(qrow + h * hd, hd, pos);
                rope_rotate(sc.k.data() + h * hd, hd, pos);
            }
            std::copy_n(sc.k.data(), D, kc.data() + static_cast<std::size_t>(pos) * D);
            std::copy_n(sc.v.data(), D, vc.data() + static_cast<std::size_t>(pos) * D);
        }

        // Attention per new token row.
        for (int t = 0; t < count; ++t) {
            int pos = start + t;
            int n_keys = pos + 1;
            const float* qrow = sc.q.data() + static_cast<std::size_t>(t) * D;
            float* orow = sc.attn_out.data() + static_cast<std::size_t>(t) * D;
            std::fill(orow, orow + D, 0.0f);
            sc.logits_row.resize(static_cast<std::size_t>(n_keys));
            fill_bias_row(bias, pos, n_keys, prompt_len, sc.bias_row);
            bool any_mask =
                fill_mask_row(mask, pos, n_keys, prompt_len, layout.question_span, sc.mask_row);
            for (int h = 0; h < H; ++h) {
                const float* qh = qrow + h * hd;
                for (int s = 0; s < n_keys; ++s) {
                    const float* kh = kc.data() + static_cast<std::size_t>(s) * D + h * hd;
                    double dot = 0.0;
                    for (int d = 0; d < hd; ++d) dot += static_cast<double>(qh[d]) * kh[d];
                    sc.logits_row[static_cast<std::size_t>(s)] = dot;
                }
                sc.probs.resize(static_cast<std::size_t>(n_keys));
                attention_kernel_row(sc.logits_row.data(), sc.bias_row.data(),
                                     any_mask ? sc.mask_row.data() : nullptr, n_keys, scale,
                                     sc.probs.data(), pos);
                if (capture && layout.question_span.contains(pos)) {
                    int flat = layer * H + h;
                    for (int s = 0; s < n_keys; ++s) {
                        int di = doc_map[static_cast<std::size_t>(s)];
                        if (di >= 0) capture->alpha_ref(flat, di) += sc.probs[static_cast<std::size_t>(s)];
                    }
                }
                if (mats) {
                    auto& hm = (*mats)[static_cast<std::size_t>(layer * H + h)];
                    for (int s = 0; s < n_keys; ++s)
                        hm.mat.at(pos, s) = sc.probs[static_cast<std::size_t>(s)];
                }
                for (int s = 0; s < n_keys; ++s) {
                    double p = sc.probs[static_cast<std::size_t>(s)];
                    if (p == 0.0) continue;
                    const float* vh = vc.data() + static_cast<std::size_t>(s) * D + h * hd;
                    float* oh = orow + h * hd;
                    for (int d = 0; d < hd; ++d)
                        oh[d] += static_cast<float>(p * static_cast<double>(vh[d]));
                }
            }
        }

        // Output projection, residual, MLP.
        for (int t = 0; t < count; ++t) {
            float* x = X.data() + static_cast<std::size_t>(t) * D;
            matvec(sc.attn_out.data() + static_cast<std::size_t>(t) * D, L.wo, D, D,
                   sc.proj.data());
            for (int d = 0; d < D; ++d) x[d] += sc.proj[d];
            layer_norm(x, L.ln2_g.data(), L.ln2_b.data(), D, sc.xn.data());
            matvec(sc.xn.data(), L.w_up, D, 4 * D, sc.mlp_h.data());
            for (int i = 0; i < 4 * D; ++i) sc.mlp_h[static_cast<std::size_t>(i)] = gelu(sc.mlp_h[static_cast<std::size_t>(i)]);
            matvec(sc.mlp_h.data(), L.w_down, 4 * D, D, sc.mlp_y.data());
            for (int d = 0; d < D; ++d) x[d] += sc.mlp_y[d];
        }
    }

    ws.processed = start + count;
    last_hidden.assign(X.end() - D, X.end());
}

namespace {

int argmax_logits(const TinyModelWeights& w, const std::vector<float>& hidden,
                  std::vector<float>& scratch) {
    const int D = w.d_model();
    const int V = w.cfg.vocab_size;
    std::vector<float> xn(static_cast<std::size_t>(D));
    layer_norm(hidden.data(), w.lnf_g.data(), w.lnf_b.data(), D, xn.data());
    scratch.resize(static_cast<std::size_t>(V));
    matvec(xn.data(), w.lm_head, D, V, scratch.data());
    int best = 0;
    for (int i = 1; i < V; ++i)
        if (scratch[static_cast<std::size_t>(i)] > scratch[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace

AttentionTrace TinyModel::prefill_with_capture(const PromptLayout& layout, const BiasSpec* bias,
                                               const MaskSpec* mask) const {
    const int total = static_cast<int>(layout.tokens.size());
    if (total > w_.cfg.context_limit) throw OverflowError(total, w_.cfg.context_limit);
    auto t0 = std::chrono::steady_clock::now();
    AttentionTrace trace;
    trace.layers = w_.cfg.layers;
    trace.heads = w_.cfg.heads;
    for (const auto& [doc_id, _] : layout.doc_spans) trace.doc_ids.push_back(doc_id);
    trace.alpha.assign(
        static_cast<std::size_t>(trace.head_count()) * trace.doc_ids.size(), 0.0);
    trace.question_token_count = layout.question_span.size();
    trace.token_count = total;

    Workspace ws;
    ws.k_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ws.v_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ForwardScratch sc;
    std::vector<float> last;
    forward_tokens(w_, layout.tokens, total, layout, bias, mask, ws, sc, &trace, nullptr, last);
    trace.prefill_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

namespace {

GenerationResult decode_loop(const TinyModelWeights& w, const PromptLayout& layout,
                             const BiasSpec* bias, const MaskSpec* mask, int max_new_tokens,
                             TinyModel::Workspace& ws, ForwardScratch& sc,
                             std::vector<float>& hidden,
                             std::chrono::steady_clock::time_point t0, double prefill_ms,
                             const ByteTokenizer& tok) {
    GenerationResult res;
    res.n_prefills = 1;
    res.prefill_ms = prefill_ms;
    std::vector<float> logit_scratch;
    std::vector<int> generated;
    std::vector<int> all_tokens = layout.tokens;
    for (int i = 0; i < max_new_tokens; ++i) {
        int next = argmax_logits(w, hidden, logit_scratch);
        if (i == 0)
            res.first_token_ms = std::chrono::duration<double, std::milli>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count();
        generated.push_back(next);
        all_tokens.push_back(next);
        if (i + 1 == max_new_tokens) break;
        forward_tokens(w, all_tokens, 1, layout, bias, mask, ws, sc, nullptr, nullptr, hidden);
    }
    if (max_new_tokens == 0) {
        res.first_token_ms = std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - t0)
                                 .count();
    }
    res.text = tok.decode(generated);
    res.total_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace

GenerationResult TinyModel::generate(const PromptLayout& layout, const BiasSpec* bias,
                                     const MaskSpec* mask, int max_new_tokens) const {
    const int total = static_cast<int>(layout.tokens.size());
    if (max_new_tokens < 0) throw ArgumentError("max_new_tokens must be >= 0");
    if (total + max_new_tokens > w_.cfg.context_limit)
        throw OverflowError(total + max_new_tokens, w_.cfg.context_limit);
    auto t0 = std::chrono::steady_clock::now();
    Workspace ws;
    ws.k_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ws.v_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ForwardScratch sc;
    std::vector<float> hidden;
    forward_tokens(w_, layout.tokens, total, layout, bias, mask, ws, sc, nullptr, nullptr, hidden);
    double prefill_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return decode_loop(w_, layout, bias, mask, max_new_tokens, ws, sc, hidden, t0, prefill_ms,
                       tokenizer_);
}

GenerationResult TinyModel::prefill_then_generate(const PromptLayout& layout, const MaskSpec* mask,
                                                  int max_new_tokens, const SteerFn& steer,
                                                  AttentionTrace* trace_out) const {
    const int total = static_cast<int>(layout.tokens.size());
    if (max_new_tokens < 0) throw ArgumentError("max_new_tokens must be >= 0");
    if (total + max_new_tokens > w_.cfg.context_limit)
        throw OverflowError(total + max_new_tokens, w_.cfg.context_limit);
    auto t0 = std::chrono::steady_clock::now();

    AttentionTrace trace;
    trace.layers = w_.cfg.layers;
    trace.heads = w_.cfg.heads;
    for (const auto& [doc_id, _] : layout.doc_spans) trace.doc_ids.push_back(doc_id);
    trace.alpha.assign(
        static_cast<std::size_t>(trace.head_count()) * trace.doc_ids.size(), 0.0);
    trace.question_token_count = layout.question_span.size();
    trace.token_count = total;

    Workspace ws;
    ws.k_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ws.v_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ForwardScratch sc;
    std::vector<float> hidden;
    forward_tokens(w_, layout.tokens, total, layout, nullptr, mask, ws, sc, &trace, nullptr, hidden);
    double prefill_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.prefill_ms = prefill_ms;

    std::optional<BiasSpec> bias = steer(trace);
    if (trace_out) *trace_out = trace;
    // The prompt KV cache stays as prefilled; the steering bias reweights
    // decode rows against the stored prompt keys.
    return decode_loop(w_, layout, bias ? &*bias : nullptr, mask, max_new_tokens, ws, sc, hidden,
                       t0, prefill_ms, tokenizer_);
}

std::vector<HeadTokenMatrix> TinyModel::token_matrices(const PromptLayout& layout,
                                                       const BiasSpec* bias,
                                                       const MaskSpec* mask) const {
    const int total = static_cast<int>(layout.tokens.size());
    if (total > kTokenMatrixLimit) throw OverflowError(total, kTokenMatrixLimit);
    std::vector<HeadTokenMatrix> mats;
    for (int layer = 0; layer < w_.cfg.layers; ++layer)
        for (int head = 0; head < w_.cfg.heads; ++head)
            mats.push_back({{layer, head}, 0, Mat(total, total)});
    Workspace ws;
    ws.k_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ws.v_cache.resize(static_cast<std::size_t>(w_.cfg.layers));
    ForwardScratch sc;
    std::vector<float> hidden;
    forward_tokens(w_, layout.tokens, total, layout, bias, mask, ws, sc, nullptr, &mats, hidden);
    return mats;
}

}  // namespace cafe
