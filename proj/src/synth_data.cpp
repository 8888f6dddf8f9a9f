#include "cafe/synth_data.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "cafe/errors.hpp"
#include "cafe/rng.hpp"
#include "cafe/synthetic.hpp"

namespace cafe {

namespace {

const char* kFillerWords[] = {
    "river",   "harbor",  "lantern", "meadow",  "quartz", "willow",  "summit",  "orchard",
    "ledger",  "compass", "granite", "thicket", "voyage", "ember",   "prairie", "anchor",
    "mosaic",  "cascade", "juniper", "beacon",  "hollow", "saffron", "drift",   "pillar",
    "garnet",  "lagoon",  "tundra",  "marble",  "cinder", "aspen",   "harvest", "breeze",
    "copper",  "valley",  "sparrow", "timber",  "canyon", "gossamer", "fjord",  "heather"};
constexpr int kFillerCount = static_cast<int>(sizeof(kFillerWords) / sizeof(kFillerWords[0]));

const char kPayloadAlphabet[] = "abcdefghjkmnpqrstuvwxyz23456789";

std::string filler_sentence(SplitMix& rng, int words) {
    std::ostringstream os;
    for (int i = 0; i < words; ++i) {
        if (i > 0) os << ' ';
        os << kFillerWords[rng.below(kFillerCount)];
    }
    os << '.';
    return os.str();
}

std::string random_payload(SplitMix& rng, int len) {
    std::string p;
    for (int i = 0; i < len; ++i)
        p.push_back(kPayloadAlphabet[rng.below(sizeof(kPayloadAlphabet) - 1)]);
    return p;
}

std::string title_words(SplitMix& rng) {
    std::string a = kFillerWords[rng.below(kFillerCount)];
    std::string b = kFillerWords[rng.below(kFillerCount)];
    a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
    b[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(b[0])));
    return a + " " + b;
}

}  // namespace

std::vector<QASample> generate_synthetic_dataset(const SyntheticDataSpec& spec) {
    if (spec.n_samples < 0) throw ArgumentError("n_samples must be >= 0");
    if (spec.n_docs < 1) throw ArgumentError("n_docs must be >= 1");
    if (spec.gold_min < 1 || spec.gold_max < spec.gold_min || spec.gold_max > spec.n_docs)
        throw ArgumentError("gold count range must satisfy 1 <= gold_min <= gold_max <= n_docs");
    if (spec.payload_len < 1) throw ArgumentError("payload_len must be >= 1");

    std::vector<QASample> samples;
    samples.reserve(static_cast<std::size_t>(spec.n_samples));
    for (int s = 0; s < spec.n_samples; ++s) {
        SplitMix rng(child_seed(spec.seed, "synth-sample-" + std::to_string(s)));
        QASample q;
        {
            std::ostringstream id;
            id << spec.id_prefix;
            char buf[8];
            std::snprintf(buf, sizeof(buf), "%04d", s);
            id << buf;
            q.sample_id = id.str();
        }
        std::string payload = random_payload(rng, spec.payload_len);
        q.question = "What is the secret code recorded for case " + q.sample_id + "?";
        q.gold_answers = {payload};

        int gold_count = spec.gold_min +
                         static_cast<int>(rng.below(static_cast<std::uint64_t>(
                             spec.gold_max - spec.gold_min + 1)));
        std::vector<int> positions(static_cast<std::size_t>(spec.n_docs));
        for (int i = 0; i < spec.n_docs; ++i) positions[static_cast<std::size_t>(i)] = i;
        deterministic_shuffle(positions, rng.next());
        std::vector<int> gold_positions(positions.begin(), positions.begin() + gold_count);
        std::sort(gold_positions.begin(), gold_positions.end());

        for (int d = 0; d < spec.n_docs; ++d) {
            Document doc;
            doc.doc_id = d;
            doc.title = title_words(rng);
            std::string body = filler_sentence(rng, spec.body_words);
            auto it = std::find(gold_positions.begin(), gold_positions.end(), d);
            if (it != gold_positions.end()) {
                int part = static_cast<int>(it - gold_positions.begin()) + 1;
                body += " The secret code is " + make_marker(payload, part, gold_count) + ".";
                q.gold_evidence.insert(d);
            }
            doc.body = std::move(body);
            q.documents.push_back(std::move(doc));
        }
        samples.push_back(std::move(q));
    }
    return samples;
}

}  // namespace cafe
