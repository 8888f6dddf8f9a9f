#include "cafe/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "cafe/errors.hpp"

namespace cafe {

std::string normalize_answer(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        char mapped;
        if (std::isalnum(c)) {
            mapped = static_cast<char>(std::tolower(c));
        } else if (c >= 0x80) {
            mapped = static_cast<char>(c);  // non-ASCII bytes pass through
        } else {
            // ASCII punctuation and whitespace both become separators.
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(mapped);
    }
    return out;
}

namespace {

std::vector<std::string> normalized_tokens(const std::string& text) {
    std::istringstream is(normalize_answer(text));
    std::vector<std::string> toks;
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

}  // namespace

int sub_em(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw ArgumentError("sub_em requires at least one gold answer");
    std::string pred = normalize_answer(prediction);
    for (const auto& g : golds) {
        std::string gold = normalize_answer(g);
        if (gold.empty()) continue;
        if (pred.find(gold) != std::string::npos) return 1;
    }
    return 0;
}

double token_f1(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw ArgumentError("token_f1 requires at least one gold answer");
    auto pred = normalized_tokens(prediction);
    double best = 0.0;
    for (const auto& g : golds) {
        auto gold = normalized_tokens(g);
        if (pred.empty() || gold.empty()) continue;
        std::map<std::string, int> counts;
        for (const auto& t : pred) counts[t]++;
        int overlap = 0;
        for (const auto& t : gold) {
            auto it = counts.find(t);
            if (it != counts.end() && it->second > 0) {
                --it->second;
                ++overlap;
            }
        }
        if (overlap == 0) continue;
        double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
        double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
        best = std::max(best, 2.0 * precision * recall / (precision + recall));
    }
    return best;
}

double evidence_recall(const std::set<int>& selected, const std::set<int>& gold) {
    if (gold.empty()) throw ArgumentError("evidence_recall requires nonempty gold");
    int hit = 0;
    for (int g : gold)
        if (selected.count(g)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(gold.size());
}

}  // namespace cafe
