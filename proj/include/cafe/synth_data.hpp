#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cafe/corpus.hpp"

namespace cafe {

// Seeded generator of marker-bearing QA samples (see synthetic.hpp). Every
// gold document carries the sample's answer payload as an inline marker
// (part i of |gold|); background documents are plain filler.
struct SyntheticDataSpec {
    int n_samples = 100;
    int n_docs = 20;
    int gold_min = 2;
    int gold_max = 2;
    int body_words = 12;   // filler words per document body
    int payload_len = 5;   // alphanumeric answer payload length
    std::uint64_t seed = 1;
    std::string id_prefix = "syn";
};

std::vector<QASample> generate_synthetic_dataset(const SyntheticDataSpec& spec);

}  // namespace cafe
