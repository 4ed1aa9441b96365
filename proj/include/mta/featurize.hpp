#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mta/backbone.hpp"
#include "mta/profiling.hpp"

namespace mta {

// Text goes into the model as a hashed unigram+bigram bag sized to the
// model's input dimension. Queries may instead carry explicit feature
// vectors, which are validated against that dimension.
std::vector<double> featurize_text(std::string_view text, std::size_t input_dim);

// Generation at this scale is short label-sequence prediction: each class
// owns a fixed three-word phrase over a small shared vocabulary (adjacent
// classes overlap, so overlap metrics grade smoothly). Pure functions of the
// class index.
std::string generation_phrase(std::size_t cls);
std::size_t generation_class_from_phrase(std::string_view phrase,
                                         std::size_t num_classes);

// target semantics per task: classification wants an integral class index in
// [0, num_classes), rating a scalar, generation a known phrase
double target_to_example(const TargetValue& target, TaskKind task,
                         std::size_t num_classes);

Example example_from_history(const HistoryItem& item, TaskKind task,
                             std::size_t input_dim, std::size_t num_classes);

std::vector<Example> examples_from_history(const UserRecord& user, TaskKind task,
                                           std::size_t input_dim,
                                           std::size_t num_classes);

// query side: explicit features win, otherwise the text is featurized;
// a query without a usable input or (during evaluation) without a target is
// a data error
std::vector<double> query_features(const QueryItem& q, std::size_t input_dim);

} // namespace mta
