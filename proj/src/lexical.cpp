#include "cafe/lexical.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cafe/errors.hpp"
#include "cafe/metrics.hpp"

namespace cafe {

std::vector<std::string> lexical_terms(const std::string& text) {
    std::istringstream is(normalize_answer(text));
    std::vector<std::string> terms;
    std::string t;
    while (is >> t) terms.push_back(t);
    return terms;
}

std::vector<double> bm25_scores(const QASample& sample, const Bm25Params& params) {
    const std::size_t n = sample.documents.size();
    std::vector<std::map<std::string, int>> tf(n);
    std::vector<double> len(n, 0.0);
    double total_len = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto terms = lexical_terms(sample.documents[i].title + " " + sample.documents[i].body);
        for (const auto& t : terms) tf[i][t]++;
        len[i] = static_cast<double>(terms.size());
        total_len += len[i];
    }
    double avg_len = n > 0 ? std::max(1.0, total_len / static_cast<double>(n)) : 1.0;

    std::map<std::string, int> df;
    for (const auto& doc_tf : tf)
        for (const auto& [term, _] : doc_tf) df[term]++;

    std::vector<double> scores(n, 0.0);
    auto query = lexical_terms(sample.question);
    for (const auto& q : query) {
        auto it = df.find(q);
        if (it == df.end()) continue;
        double idf = std::log((static_cast<double>(n) - it->second + 0.5) / (it->second + 0.5));
        idf = std::max(idf, 1e-6);
        for (std::size_t i = 0; i < n; ++i) {
            auto ft = tf[i].find(q);
            if (ft == tf[i].end()) continue;
            double f = ft->second;
            double denom = f + params.k1 * (1.0 - params.b + params.b * len[i] / avg_len);
            scores[i] += idf * (f * (params.k1 + 1.0)) / denom;
        }
    }
    return scores;
}

std::vector<int> bm25_rank(const QASample& sample, const Bm25Params& params) {
    auto scores = bm25_scores(sample, params);
    std::vector<int> ids(scores.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    return ids;
}

std::vector<int> bm25_top_docs(const QASample& sample, int m, const Bm25Params& params) {
    if (m < 1) throw ArgumentError("bm25_top_docs needs m >= 1");
    auto ranked = bm25_rank(sample, params);
    std::vector<int> out(ranked.begin(),
                         ranked.begin() + std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(m)));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace cafe
