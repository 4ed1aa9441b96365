#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mta/tensor.hpp"

namespace mta {

class BackboneModel;

struct LayerDims {
    std::size_t in = 0;
    std::size_t out = 0;
};

// One low-rank factor pair per affine layer: a is r x d_in, b is d_out x r.
// The layer delta is b*a, applied unscaled (no alpha/r factor).
struct LoraLayer {
    Matrix a;
    Matrix b;
};

struct LoraModule {
    std::string label;
    std::size_t rank = 0;
    std::vector<LoraLayer> layers;

    void validate_against(const std::vector<LayerDims>& dims) const;
};

// b starts at zero so a fresh module is an exact no-op; a is uniform in
// [-1/sqrt(d_in), 1/sqrt(d_in))
LoraModule init_lora(const std::vector<LayerDims>& dims, std::size_t rank,
                     std::string label, SeededRng& rng);

Matrix lora_delta(const LoraLayer& layer);

enum class MergeMode {
    factor, // a_merged = sum alpha_i a_i, b_merged = sum alpha_i b_i
    delta,  // sum alpha_i (b_i a_i), carried as rank-stacked factors
};

MergeMode merge_mode_from_string(const std::string& s);
std::string to_string(MergeMode m);

// Provenance of a merged module: which anchors, their similarities, and the
// normalized coefficients actually applied.
struct MergeSpec {
    std::vector<std::string> anchor_ids;
    std::vector<double> similarities;
    std::vector<double> coefficients;
    MergeMode mode = MergeMode::factor;

    // coefficients must be >= 0 and sum to 1 within 1e-12, aligned with ids
    void validate() const;
};

// Generalized top-K merge. Inputs are reordered to the canonical anchor-id
// ordering and accumulated left to right, so the result is bitwise invariant
// under permutations of (modules, coefficients).
LoraModule merge(const std::vector<LoraModule>& modules, const MergeSpec& spec);

// Dedicated two-anchor path. Must agree bitwise with merge() at K = 2.
LoraModule merge_pair(const LoraModule& first, const LoraModule& second,
                      const MergeSpec& spec);

// Folds the module into the base weights (w + b*a per layer) and returns the
// result frozen. Rejects an already frozen base.
BackboneModel materialize(const BackboneModel& base, const LoraModule& merged);

// Adapter artifact: manifest.json naming one tensor record pair per layer.
void save_adapter(const std::filesystem::path& dir, const LoraModule& m);
LoraModule load_adapter(const std::filesystem::path& dir);

} // namespace mta
