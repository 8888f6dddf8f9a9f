#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cafe {

// Lowercase ASCII, replace punctuation with spaces, collapse whitespace,
// trim. Fixed here because the metric edge cases depend on it.
std::string normalize_answer(const std::string& text);

// 1 iff any normalized gold is a substring of the normalized prediction.
// Substring semantics are deliberate ("Parisian" matches gold "Paris").
int sub_em(const std::string& prediction, const std::vector<std::string>& golds);

// Max over golds of the harmonic mean of token precision/recall (multiset
// overlap on normalized whitespace tokens). 0 if either side is empty.
double token_f1(const std::string& prediction, const std::vector<std::string>& golds);

// |selected ∩ gold| / |gold|; gold must be nonempty.
double evidence_recall(const std::set<int>& selected, const std::set<int>& gold);

struct MetricRow {
    std::string sample_id;
    std::string mode;
    int sub_em = 0;
    double f1 = 0.0;
    std::optional<double> coarse_recall;
    std::optional<double> fine_recall;
};

}  // namespace cafe
