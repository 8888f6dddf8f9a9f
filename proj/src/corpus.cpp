#include "cafe/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cafe/errors.hpp"
#include "cafe/rng.hpp"

namespace cafe {

using nlohmann::json;

std::string PromptTemplate::render_doc_header(int index, const std::string& title) const {
    std::string tpl = title.empty() ? doc_header_untitled : doc_header;
    std::string out;
    out.reserve(tpl.size() + title.size() + 8);
    for (std::size_t i = 0; i < tpl.size();) {
        if (tpl.compare(i, 7, "{index}") == 0) {
            out += std::to_string(index);
            i += 7;
        } else if (tpl.compare(i, 7, "{title}") == 0) {
            out += title;
            i += 7;
        } else {
            out += tpl[i];
            ++i;
        }
    }
    return out;
}

TemplateRegistry TemplateRegistry::builtin() {
    PromptTemplate def;
    def.id = "default";
    def.preamble = "Answer the question using the numbered documents below.\n\n";
    def.doc_header = "Document [{index}] ({title})\n";
    def.doc_header_untitled = "Document [{index}]\n";
    def.doc_footer = "\n\n";
    def.question_header = "Question: ";
    def.answer_cue = "\nAnswer:";
    TemplateRegistry reg;
    reg.add(def);
    return reg;
}

void TemplateRegistry::add(const PromptTemplate& tmpl) { templates_[tmpl.id] = tmpl; }

void TemplateRegistry::load_dir(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw IoError("template directory not found: " + path);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw IoError("bad template file " + f.string() + ": " + e.what());
        }
        PromptTemplate t;
        t.id = j.value("id", f.stem().string());
        t.preamble = j.value("preamble", "");
        t.doc_header = j.value("doc_header", "Document [{index}] ({title})\n");
        t.doc_header_untitled = j.value("doc_header_untitled", "Document [{index}]\n");
        t.doc_footer = j.value("doc_footer", "\n\n");
        t.question_header = j.value("question_header", "Question: ");
        t.answer_cue = j.value("answer_cue", "\nAnswer:");
        add(t);
    }
}

const PromptTemplate& TemplateRegistry::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw ArgumentError("unknown template id: " + id);
    return it->second;
}

std::vector<std::string> TemplateRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : templates_) out.push_back(k);
    return out;
}

namespace {

QASample sample_from_json(const json& j, int line_no) {
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    QASample s;
    try {
        s.sample_id = j.contains("id") ? j.at("id").get<std::string>()
                                       : "line-" + std::to_string(line_no);
        s.question = j.at("question").get<std::string>();
        int idx = 0;
        for (const auto& dj : j.at("documents")) {
            Document d;
            d.doc_id = idx++;
            d.title = dj.value("title", "");
            d.body = dj.at("text").get<std::string>();
            if (d.body.empty())
                throw ValidationError("document " + std::to_string(d.doc_id) +
                                      " has empty body (line " + std::to_string(line_no) + ")");
            s.documents.push_back(std::move(d));
        }
        for (const auto& a : j.at("answers")) s.gold_answers.push_back(a.get<std::string>());
        for (const auto& e : j.at("evidence_indices")) s.gold_evidence.insert(e.get<int>());
    } catch (const json::exception& e) {
        throw ParseError(line_no, e.what());
    }
    if (s.gold_answers.empty())
        throw ValidationError("sample at line " + std::to_string(line_no) + " has no answers");
    for (int e : s.gold_evidence) {
        if (e < 0 || e >= static_cast<int>(s.documents.size()))
            throw ValidationError("evidence index " + std::to_string(e) + " out of range for " +
                                  std::to_string(s.documents.size()) + " documents (line " +
                                  std::to_string(line_no) + ")");
    }
    return s;
}

}  // namespace

std::vector<QASample> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<QASample> samples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(line_no, e.what());
        }
        samples.push_back(sample_from_json(j, line_no));
    }
    return samples;
}

void write_dataset(const std::string& path, const std::vector<QASample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset: " + path);
    for (const auto& s : samples) {
        json docs = json::array();
        for (const auto& d : s.documents) docs.push_back({{"title", d.title}, {"text", d.body}});
        json j{{"id", s.sample_id},
               {"question", s.question},
               {"documents", docs},
               {"answers", s.gold_answers},
               {"evidence_indices", std::vector<int>(s.gold_evidence.begin(), s.gold_evidence.end())}};
        out << j.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
    }
}

PromptLayout build_prompt(const QASample& sample, const std::vector<int>& order,
                          const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                          int max_tokens) {
    {
        std::set<int> seen;
        for (int id : order) {
            if (id < 0 || id >= static_cast<int>(sample.documents.size()))
                throw ArgumentError("order references unknown doc_id " + std::to_string(id));
            if (!seen.insert(id).second)
                throw ArgumentError("order repeats doc_id " + std::to_string(id));
        }
    }

    PromptLayout layout;
    layout.template_id = tmpl.id;
    layout.doc_order = order;

    auto append = [&](const std::string& text) {
        auto ids = tokenizer.encode(text);
        layout.tokens.insert(layout.tokens.end(), ids.begin(), ids.end());
    };

    append(tmpl.preamble);
    for (int doc_id : order) {
        const Document& d = sample.documents[doc_id];
        append(tmpl.render_doc_header(d.doc_id, d.title));
        int start = static_cast<int>(layout.tokens.size());
        append(d.body);
        layout.doc_spans[doc_id] = {start, static_cast<int>(layout.tokens.size())};
        append(tmpl.doc_footer);
    }
    append(tmpl.question_header);
    int qstart = static_cast<int>(layout.tokens.size());
    append(sample.question);
    layout.question_span = {qstart, static_cast<int>(layout.tokens.size())};
    append(tmpl.answer_cue);

    if (max_tokens > 0 && static_cast<int>(layout.tokens.size()) > max_tokens)
        throw OverflowError(static_cast<int>(layout.tokens.size()), max_tokens);
    return layout;
}

std::pair<std::vector<QASample>, std::vector<QASample>>
split_validation(const std::vector<QASample>& dataset, int n, std::uint64_t seed) {
    if (n < 0 || n > static_cast<int>(dataset.size()))
        throw ArgumentError("validation size " + std::to_string(n) + " out of range for dataset of " +
                            std::to_string(dataset.size()));
    std::vector<int> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    deterministic_shuffle(idx, child_seed(seed, "validation-split"));
    std::vector<QASample> validation, rest;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (static_cast<int>(i) < n ? validation : rest).push_back(dataset[idx[i]]);
    }
    return {std::move(validation), std::move(rest)};
}

}  // namespace cafe
