#ifndef MTA_C_H
#define MTA_C_H

/*
 * C surface of the personalization pipeline. All functions return a status
 * code and report results through out-parameters; handles are opaque and
 * must be released with the matching _free function. Strings returned
 * through char** out-parameters are heap copies owned by the caller and are
 * released with mta_string_free.
 *
 * Configuration crosses this boundary as JSON text. Unknown keys are
 * rejected so typos fail loudly instead of silently falling back to
 * defaults. The expected shapes are documented next to each function.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MTA_API __declspec(dllexport)
#else
#define MTA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Mirrors the library error taxonomy: 2 covers caller mistakes (bad
 * parameters, shapes, indices, call order), 3 covers bad or missing data
 * (corpus problems, contamination, unreadable or corrupt artifacts), 4 is
 * training divergence, 1 is anything unexpected. */
typedef enum mta_status {
    MTA_OK = 0,
    MTA_ERR_INTERNAL = 1,
    MTA_ERR_PARAMETER = 2,
    MTA_ERR_DATA = 3,
    MTA_ERR_DIVERGENCE = 4
} mta_status;

typedef struct mta_model mta_model;           /* frozen or trainable backbone */
typedef struct mta_corpus mta_corpus;         /* user records with histories */
typedef struct mta_bank mta_bank;             /* anchor adapters + embeddings */
typedef struct mta_user_model mta_user_model; /* personalized checkpoint */

/* Message for the most recent failing call on this thread; empty string when
 * the most recent call succeeded. The pointer stays valid until the next
 * library call on the same thread. */
MTA_API const char* mta_last_error(void);

MTA_API void mta_string_free(char* s);

/* ----- base model -----
 * config JSON: {"input_dim": N, "hidden_dims": [N, ...],
 *               "num_classes": N, "nonlinearity": "tanh"|"relu"} */
MTA_API mta_status mta_model_create(const char* config_json, uint64_t seed,
                                    mta_model** out);
MTA_API mta_status mta_model_load(const char* dir, mta_model** out);
MTA_API mta_status mta_model_save(const mta_model* model, const char* dir);
MTA_API void mta_model_free(mta_model* model);

/* ----- corpora -----
 * spec JSON: {"n_clusters", "users_per_cluster", "history_len_min",
 *             "history_len_max", "query_count", "feature_dim",
 *             "cluster_separation", "user_noise", "seed", "task",
 *             "num_classes"}, every key optional. */
MTA_API mta_status mta_corpus_generate(const char* spec_json, mta_corpus** out);
MTA_API mta_status mta_corpus_load(const char* path, mta_corpus** out);
MTA_API mta_status mta_corpus_save(const mta_corpus* corpus, const char* path);
MTA_API mta_status mta_corpus_size(const mta_corpus* corpus, size_t* out);
/* The count users with the shortest histories (ties toward smaller ids),
 * newline-joined, as the natural few-shot evaluation split. */
MTA_API mta_status mta_corpus_default_test_ids(const mta_corpus* corpus,
                                               size_t count, char** out);
MTA_API void mta_corpus_free(mta_corpus* corpus);

/* ----- adapter bank -----
 * config JSON: {"clusters", "seed", "task",
 *               "encoder": {"dim", "max_ngram"},
 *               "anchor_training": {"rank", "epochs", "lr", "batch_size",
 *                                   "grad_accum", "lr_scale"}},
 * every key optional. */
MTA_API mta_status mta_bank_build(const mta_corpus* corpus,
                                  const mta_model* model,
                                  const char* config_json, mta_bank** out);
MTA_API mta_status mta_bank_load(const char* dir, mta_bank** out);
MTA_API mta_status mta_bank_save(const mta_bank* bank, const char* dir);
MTA_API void mta_bank_free(mta_bank* bank);

/* ----- personalization -----
 * config JSON: {"top_k", "merge_mode": "factor"|"delta", "sim_floor",
 *               "task", "alpha_fixed",
 *               "stacked": {"rank", "epochs", "lr", "batch_size",
 *                           "grad_accum", "lr_scale"}},
 * every key optional; omit alpha_fixed for similarity-derived coefficients.
 *
 * The training stream is derived from (seed, user_id), so personalizing one
 * user here reproduces exactly what an evaluation run under the same seed
 * would build for that user. */
MTA_API mta_status mta_personalize(const mta_bank* bank, const mta_model* model,
                                   const mta_corpus* corpus, const char* user_id,
                                   const char* config_json, uint64_t seed,
                                   mta_user_model** out);
MTA_API mta_status mta_user_model_save(const mta_user_model* um, const char* dir);
MTA_API mta_status mta_user_model_load(const char* dir, mta_user_model** out);
/* Classification and generation return the class index; rating returns the
 * scalar head clamped into [1, 5]. */
MTA_API mta_status mta_user_model_predict(const mta_user_model* um,
                                          const double* features, size_t n,
                                          double* out);
MTA_API void mta_user_model_free(mta_user_model* um);

/* ----- evaluation drivers -----
 * test_ids is a newline-separated id list; blank lines are ignored. Each
 * call yields the JSON report and a plain-text summary table; either
 * out-parameter may be NULL when the caller does not want that rendering. */
MTA_API mta_status mta_evaluate(const mta_bank* bank, const mta_model* model,
                                const mta_corpus* corpus, const char* test_ids,
                                const char* config_json, uint64_t seed,
                                char** report_json, char** table);

/* Builds a bank from every non-test user, then scores the stacked-only,
 * merged-only, and merge-then-adapt variants on identical queries. */
MTA_API mta_status mta_ablate(const mta_corpus* corpus, const mta_model* model,
                              const char* test_ids,
                              const char* bank_config_json,
                              const char* config_json, uint64_t seed,
                              char** report_json, char** table);

/* param is one of "alpha_fixed", "top_k", "stacked_rank"; values is a
 * comma-separated numeric list. */
MTA_API mta_status mta_sweep(const mta_bank* bank, const mta_model* model,
                             const mta_corpus* corpus, const char* test_ids,
                             const char* config_json, const char* param,
                             const char* values, uint64_t seed,
                             char** report_json, char** table);

#ifdef __cplusplus
}
#endif

#endif /* MTA_C_H */
