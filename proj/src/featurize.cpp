#include "mta/featurize.hpp"

#include <cmath>

namespace mta {

std::vector<double> featurize_text(std::string_view text, std::size_t input_dim) {
    EncoderConfig cfg;
    cfg.dim = input_dim;
    cfg.max_ngram = 2;
    return HashingEncoder(cfg).encode(text);
}

namespace {

constexpr std::size_t kPhraseVocab = 8;
const char* const kPhraseWords[kPhraseVocab] = {
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
};

} // namespace

std::string generation_phrase(std::size_t cls) {
    // neighbouring classes share two of three words
    std::string p = kPhraseWords[cls % kPhraseVocab];
    p += ' ';
    p += kPhraseWords[(cls + 1) % kPhraseVocab];
    p += ' ';
    p += kPhraseWords[(cls + 3) % kPhraseVocab];
    return p;
}

std::size_t generation_class_from_phrase(std::string_view phrase,
                                         std::size_t num_classes) {
    if (num_classes > kPhraseVocab)
        throw ParameterError("generation task supports at most 8 classes");
    for (std::size_t c = 0; c < num_classes; ++c)
        if (generation_phrase(c) == phrase) return c;
    throw DataError("unknown generation phrase: '" + std::string(phrase) + "'");
}

double target_to_example(const TargetValue& target, TaskKind task,
                         std::size_t num_classes) {
    switch (task) {
        case TaskKind::classification:
            if (target.kind != TargetValue::Kind::number)
                throw DataError("classification target must be a number");
            if (std::floor(target.number) != target.number)
                throw DataError("classification target must be integral");
            if (target.number < 0.0 ||
                target.number >= static_cast<double>(num_classes))
                throw DataError("classification target outside [0, num_classes)");
            return target.number;
        case TaskKind::rating:
            if (target.kind != TargetValue::Kind::number)
                throw DataError("rating target must be a number");
            return target.number;
        case TaskKind::generation:
            if (target.kind != TargetValue::Kind::text)
                throw DataError("generation target must be a phrase");
            return static_cast<double>(
                generation_class_from_phrase(target.text, num_classes));
    }
    throw ParameterError("bad task kind value");
}

Example example_from_history(const HistoryItem& item, TaskKind task,
                             std::size_t input_dim, std::size_t num_classes) {
    Example e;
    e.features = featurize_text(item.text, input_dim);
    e.target = target_to_example(item.target, task, num_classes);
    return e;
}

std::vector<Example> examples_from_history(const UserRecord& user, TaskKind task,
                                           std::size_t input_dim,
                                           std::size_t num_classes) {
    // untargeted items still shape the profile embeddings, they just cannot
    // be trained on
    std::vector<Example> out;
    for (const auto& item : user.history) {
        if (item.target.kind == TargetValue::Kind::none) continue;
        out.push_back(example_from_history(item, task, input_dim, num_classes));
    }
    if (out.empty())
        throw DataError("user '" + user.user_id +
                        "' has no history items with targets");
    return out;
}

std::vector<double> query_features(const QueryItem& q, std::size_t input_dim) {
    if (q.features) {
        if (q.features->size() != input_dim)
            throw ShapeError("query feature vector does not match model input dim");
        return *q.features;
    }
    if (!q.text.empty()) return featurize_text(q.text, input_dim);
    throw DataError("query has neither features nor text");
}

} // namespace mta
