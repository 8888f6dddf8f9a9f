#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cafe/tokenizer.hpp"

namespace cafe {

struct Document {
    int doc_id = 0;       // position within the sample, contiguous from 0
    std::string title;    // may be empty
    std::string body;     // never empty
};

struct QASample {
    std::string sample_id;
    std::string question;
    std::vector<Document> documents;
    std::vector<std::string> gold_answers;
    std::set<int> gold_evidence;
};

// Half-open token range [start, end).
struct TokenSpan {
    int start = 0;
    int end = 0;
    int size() const { return end - start; }
    bool contains(int t) const { return t >= start && t < end; }
    bool operator==(const TokenSpan&) const = default;
};

// Token bookkeeping for one rendered prompt. Doc spans cover document body
// tokens only; headers, separators and the answer cue stay outside all spans
// so attention aggregation measures content, not template furniture.
struct PromptLayout {
    std::vector<int> tokens;
    std::map<int, TokenSpan> doc_spans;   // doc_id -> body token span
    TokenSpan question_span;
    std::vector<int> doc_order;           // doc_ids in render order
    std::string template_id;
    int doc_count() const { return static_cast<int>(doc_spans.size()); }
};

struct PromptTemplate {
    std::string id = "default";
    std::string preamble;
    std::string doc_header;           // placeholders: {index}, {title}
    std::string doc_header_untitled;  // used when a document has no title
    std::string doc_footer;
    std::string question_header;
    std::string answer_cue;

    std::string render_doc_header(int index, const std::string& title) const;
};

class TemplateRegistry {
public:
    // Registry with the built-in "default" template.
    static TemplateRegistry builtin();
    // Adds/overrides templates from *.json files in a directory.
    void load_dir(const std::string& path);
    void add(const PromptTemplate& tmpl);
    const PromptTemplate& get(const std::string& id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

// Reads a JSON Lines dataset: {question, documents:[{title,text}], answers,
// evidence_indices} per line, optional "id". Doc ids are assigned by position.
std::vector<QASample> load_dataset(const std::string& path);
void write_dataset(const std::string& path, const std::vector<QASample>& samples);

// Renders documents (in `order`) followed by the question and answer cue.
// `order` must be a permutation of a subset of the sample's doc ids.
// max_tokens == 0 disables the overflow check.
PromptLayout build_prompt(const QASample& sample, const std::vector<int>& order,
                          const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                          int max_tokens = 0);

// Deterministic seeded split; returns (validation, rest).
std::pair<std::vector<QASample>, std::vector<QASample>>
split_validation(const std::vector<QASample>& dataset, int n, std::uint64_t seed);

}  // namespace cafe
