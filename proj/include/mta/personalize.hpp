#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mta/bank.hpp"

namespace mta {

struct PersonalizationConfig {
    std::size_t top_k = 2;
    TrainingConfig stacked;       // ultra-low-rank stacked stage, rank 4 default
    MergeMode merge_mode = MergeMode::factor;
    double sim_floor = 1e-6;
    TaskKind task = TaskKind::classification;
    // sweep override: with top_k == 2, force coefficients (alpha, 1 - alpha)
    std::optional<double> alpha_fixed;

    void validate() const;
};

struct Retrieved {
    std::vector<std::string> anchor_ids;
    std::vector<double> similarities;
};

// K most similar bank entries by cosine against the user's retrieval
// embedding, descending similarity, ties toward the smaller anchor id
Retrieved retrieve_top_k(const LoraBank& bank,
                         const std::vector<double>& user_embedding,
                         std::size_t k);

// Similarities normalized into convex merge coefficients. The floor is
// scale-relative (sim_floor * max|s|) so non-positive similarities keep a
// vanishing positive weight and the result is exactly invariant under
// positive rescaling of the whole list. An all-zero list yields 1/K.
std::vector<double> merge_coefficients(const std::vector<double>& sims,
                                       double sim_floor);

// retrieval + coefficients + factor (or delta) merge of the chosen adapters
std::pair<LoraModule, MergeSpec> adaptive_merge(const LoraBank& bank,
                                                const UserRecord& user,
                                                const PersonalizationConfig& cfg);

struct PersonalizedModel {
    std::string user_id;
    TaskKind task = TaskKind::classification;
    BackboneModel model;  // base with the merged delta folded in, frozen
    LoraModule stacked;   // the only trained part
    MergeSpec provenance; // anchors, similarities, coefficients
};

// merge, materialize, freeze, then train the stacked adapter on the user's
// own history; the materialized weights are checksum-verified unchanged
PersonalizedModel personalize_user(const LoraBank& bank,
                                   const BackboneModel& base,
                                   const UserRecord& user,
                                   const PersonalizationConfig& cfg,
                                   SeededRng& rng);

// classification/generation: argmax class index (first index wins ties);
// rating: scalar head clamped into [1, 5]
double predict(const PersonalizedModel& pm, const std::vector<double>& features);

// artifact directory: merge_spec.json, the frozen checkpoint, the stacked adapter
void save_personalized(const std::filesystem::path& dir, const PersonalizedModel& pm);
PersonalizedModel load_personalized(const std::filesystem::path& dir);

} // namespace mta
