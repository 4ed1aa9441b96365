#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mta/backbone.hpp"
#include "mta/profiling.hpp"

namespace mta {

struct BankConfig {
    std::size_t clusters = 8;
    std::uint64_t seed = 0;
    TrainingConfig anchor_training;
    EncoderConfig encoder;
    TaskKind task = TaskKind::classification;

    void validate() const;
};

struct Clustering {
    Matrix centroids;                // v rows, one centroid per row
    std::vector<std::size_t> assignment;
    std::vector<double> sse_history; // within-cluster SSE after each sweep
    std::size_t iterations = 0;
};

// Lloyd iterations from kmeans++ seeding. Empty clusters are repaired by
// promoting the point farthest from its own centroid. The sweep-level SSE is
// checked to be non-increasing, and the returned assignment always satisfies
// the local-optimum certificate: no point is strictly closer to a centroid
// it is not assigned to.
Clustering kmeans(const std::vector<ProfileEmbedding>& points, std::size_t v,
                  SeededRng& rng, std::size_t max_iters = 100);

// longest history wins; ties break toward the lexicographically smallest id
std::string select_anchor(const std::vector<const UserRecord*>& members);

// Trains an anchor adapter on the anchor's own history against a frozen copy
// of the base. Base weights are never updated.
LoraModule train_anchor(const UserRecord& anchor, const BackboneModel& base,
                        const TrainingConfig& cfg, SeededRng rng, TaskKind task);

struct BankEntry {
    std::string anchor_id;
    ProfileEmbedding embedding; // retrieval embedding of the anchor
    LoraModule adapter;
};

struct LoraBank {
    BankConfig config;
    std::vector<BankEntry> entries; // one per cluster, in cluster order

    std::vector<std::string> anchor_ids() const;
    bool is_anchor(const std::string& user_id) const;
};

// cluster the corpus in embedding space, pick one anchor per cluster, train
// one adapter per anchor; deterministic given (corpus, base, config)
LoraBank build_bank(const std::vector<UserRecord>& corpus,
                    const BackboneModel& base, const BankConfig& cfg);

// Bank directory: manifest.json carrying version, cluster count, encoder
// config, anchor ids and inline retrieval embeddings, plus one adapter
// directory per entry. Serialized size scales with the cluster count and the
// adapter shapes, never with the corpus size.
void save_bank(const std::filesystem::path& dir, const LoraBank& bank);
LoraBank load_bank(const std::filesystem::path& dir);

// digest over the canonical byte serialization, for round-trip tests
std::string bank_checksum(const LoraBank& bank);

} // namespace mta
