#pragma once

#include <string>
#include <vector>

#include "cafe/corpus.hpp"

namespace cafe {

// BM25 over the documents of a single sample. Plumbing baseline for the
// evidence-selection recall comparison; not an attention-path component.
struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

std::vector<std::string> lexical_terms(const std::string& text);

// Scores every document of the sample against the question.
std::vector<double> bm25_scores(const QASample& sample, const Bm25Params& params = {});

// Doc ids ordered by descending score, ties by lower doc_id.
std::vector<int> bm25_rank(const QASample& sample, const Bm25Params& params = {});

// Top-m by BM25 (ascending doc_id in the result).
std::vector<int> bm25_top_docs(const QASample& sample, int m, const Bm25Params& params = {});

}  // namespace cafe
