#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mta/personalize.hpp"

namespace mta {

// ----- metrics -----

double accuracy(const std::vector<std::size_t>& pred,
                const std::vector<std::size_t>& gold);

// unweighted mean of per-class F1; classes absent from both predictions and
// golds are excluded from the mean, classes present on either side count
// (with F1 = 0 when precision + recall = 0)
double macro_f1(const std::vector<std::size_t>& pred,
                const std::vector<std::size_t>& gold,
                std::size_t num_classes);

double mae(const std::vector<double>& pred, const std::vector<double>& gold);
double rmse(const std::vector<double>& pred, const std::vector<double>& gold);

// unigram overlap F1 on whitespace tokens, candidate counts clipped per
// token; empty candidate scores 0, empty reference is an error
double rouge1_f(std::string_view candidate, std::string_view reference);

// longest-common-subsequence F1 on the same tokenization
double rougeL_f(std::string_view candidate, std::string_view reference);

// ----- synthetic corpora -----

struct SyntheticSpec {
    std::size_t n_clusters = 3;
    std::size_t users_per_cluster = 6;
    std::size_t history_len_min = 8;
    std::size_t history_len_max = 24;
    std::size_t query_count = 8;
    std::size_t feature_dim = 64;
    double cluster_separation = 4.0;
    double user_noise = 1.0;
    std::uint64_t seed = 0;
    TaskKind task = TaskKind::classification;
    std::size_t num_classes = 4;

    void validate() const;
};

// Planted-cluster population: each cluster owns a topic lexicon and a
// content-word -> class table; each user perturbs the class table with
// approximately Gaussian noise scaled by user_noise and writes history and
// query items in its own token mix. Deterministic per seed, byte for byte.
std::vector<UserRecord> generate_corpus(const SyntheticSpec& spec);

// few-shot users the generator plans as evaluation targets: the shortest
// histories, ties toward smaller ids
std::vector<std::string> default_test_ids(const std::vector<UserRecord>& corpus,
                                          std::size_t count);

// ----- reports and drivers -----

struct UserMetrics {
    std::string user_id;
    std::size_t n_queries = 0;
    std::vector<std::pair<std::string, double>> metrics;
};

struct MetricsReport {
    TaskKind task = TaskKind::classification;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> config_echo;
    std::vector<std::pair<std::string, double>> metrics; // pooled over queries
    std::vector<UserMetrics> per_user;
};

// personalize each test user against the bank, score their queries, pool.
// Anchor/test overlap is a contamination error.
MetricsReport evaluate_users(const LoraBank& bank, const BackboneModel& base,
                             const std::vector<UserRecord>& corpus,
                             const std::vector<std::string>& test_ids,
                             const PersonalizationConfig& cfg,
                             std::uint64_t seed);

struct AblationReport {
    MetricsReport adapt_only;  // stacked training on the raw base, no merge
    MetricsReport merged_only; // merged anchors, no stacked training
    MetricsReport full;        // merge then adapt
};

// builds the bank from corpus minus test users, then runs all three variants
// on identical queries and seeds
AblationReport run_ablation(const std::vector<UserRecord>& corpus,
                            const std::vector<std::string>& test_ids,
                            const BackboneModel& base, const BankConfig& bank_cfg,
                            const PersonalizationConfig& pers_cfg,
                            std::uint64_t seed);

enum class SweepParam { alpha_fixed, top_k, stacked_rank };
SweepParam sweep_param_from_string(const std::string& s);

struct SweepRun {
    double value = 0.0;
    MetricsReport report;
};

struct SweepReport {
    SweepParam param = SweepParam::top_k;
    std::vector<SweepRun> runs;
};

// re-evaluates the pipeline once per value; alpha_fixed requires top_k == 2,
// alpha outside [0, 1] and non-integral top_k/rank values are parameter errors
SweepReport sweep(const LoraBank& bank, const BackboneModel& base,
                  const std::vector<UserRecord>& corpus,
                  const std::vector<std::string>& test_ids,
                  const PersonalizationConfig& base_cfg, SweepParam param,
                  const std::vector<double>& values, std::uint64_t seed);

// stable-key-order JSON texts, used for report files and determinism checks
std::string report_json(const MetricsReport& r);
std::string report_json(const AblationReport& r);
std::string report_json(const SweepReport& r);

// plain text tables for stdout
std::string report_table(const MetricsReport& r);
std::string report_table(const AblationReport& r);
std::string report_table(const SweepReport& r);

} // namespace mta
