#include "regtext/corpus/synth.hpp"

#include <string>

#include "regtext/error.hpp"
#include "regtext/rng.hpp"

namespace regtext::corpus {

namespace {

LabeledDataset generate_part(const SynthSpec& spec, int count, Rng& rng) {
    LabeledDataset out;
    out.num_classes = spec.num_classes;
    out.docs.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int label = i % spec.num_classes;  // balanced by construction
        const int len = spec.doc_len_min +
                        static_cast<int>(rng.below(
                            static_cast<std::uint64_t>(spec.doc_len_max - spec.doc_len_min + 1)));
        std::string text;
        for (int t = 0; t < len; ++t) {
            if (t) text += ' ';
            if (rng.uniform() < spec.overlap) {
                text += "s" + std::to_string(rng.below(static_cast<std::uint64_t>(spec.shared_tokens)));
            } else {
                text += "c" + std::to_string(label) + "t" +
                        std::to_string(rng.below(static_cast<std::uint64_t>(spec.class_tokens)));
            }
        }
        out.docs.push_back({std::move(text), label});
    }
    return out;
}

}  // namespace

SynthCorpus generate_synth(const SynthSpec& spec) {
    check(spec.num_classes >= 2, "synth: need >= 2 classes");
    check(spec.class_tokens >= 1 && spec.shared_tokens >= 1, "synth: empty token pool");
    check(spec.doc_len_min >= 1 && spec.doc_len_max >= spec.doc_len_min,
          "synth: invalid document length range [", spec.doc_len_min, ",", spec.doc_len_max, "]");
    check(spec.overlap >= 0.0 && spec.overlap < 1.0, "synth: overlap ", spec.overlap,
          " outside [0,1)");
    Rng root(spec.seed);
    Rng train_rng = root.fork(1);
    Rng test_rng = root.fork(2);
    SynthCorpus corpus;
    corpus.train = generate_part(spec, spec.train_docs, train_rng);
    corpus.test = generate_part(spec, spec.test_docs, test_rng);
    return corpus;
}

}  // namespace regtext::corpus
