#include "mta/mta_c.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "json_util.hpp"

#include "mta/errors.hpp"
#include "mta/eval.hpp"

// opaque handle bodies: thin value wrappers around the library types
struct mta_model {
    mta::BackboneModel impl;
};
struct mta_corpus {
    std::vector<mta::UserRecord> impl;
};
struct mta_bank {
    mta::LoraBank impl;
};
struct mta_user_model {
    mta::PersonalizedModel impl;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

// every entry point funnels through here so the taxonomy-to-status mapping
// lives in one place
template <typename Fn>
mta_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return MTA_OK;
    } catch (const mta::DivergenceError& e) {
        g_last_error = e.what();
        return MTA_ERR_DIVERGENCE;
    } catch (const mta::DataError& e) {
        g_last_error = e.what();
        return MTA_ERR_DATA;
    } catch (const mta::ParameterError& e) {
        g_last_error = e.what();
        return MTA_ERR_PARAMETER;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MTA_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return MTA_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw mta::ParameterError(std::string(what) + " must not be null");
}

// ----- JSON config parsing -----

mta::ojson parse_object(const char* text, const char* what,
                        std::initializer_list<const char*> allowed) {
    require(text, what);
    mta::ojson j;
    try {
        j = mta::ojson::parse(text);
    } catch (const mta::ojson::exception& e) {
        throw mta::ParameterError(std::string(what) + ": " + e.what());
    }
    if (!j.is_object())
        throw mta::ParameterError(std::string(what) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok)
            throw mta::ParameterError(std::string(what) + ": unknown key '" +
                                      key + "'");
    }
    return j;
}

template <typename T>
void fetch(const mta::ojson& j, const char* key, const char* what, T& into) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        into = it->template get<T>();
    } catch (const mta::ojson::exception& e) {
        throw mta::ParameterError(std::string(what) + ": bad value for '" + key +
                                  "': " + e.what());
    }
}

mta::TaskKind fetch_task(const mta::ojson& j, mta::TaskKind def) {
    std::string s = to_string(def);
    fetch(j, "task", "config", s);
    return mta::task_from_string(s);
}

mta::TrainingConfig parse_training(const mta::ojson& j, const char* what) {
    mta::TrainingConfig cfg;
    if (j.is_null()) return cfg;
    if (!j.is_object())
        throw mta::ParameterError(std::string(what) + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "rank" && key != "epochs" && key != "lr" &&
            key != "batch_size" && key != "grad_accum" && key != "lr_scale")
            throw mta::ParameterError(std::string(what) + ": unknown key '" +
                                      key + "'");
    }
    fetch(j, "rank", what, cfg.rank);
    fetch(j, "epochs", what, cfg.epochs);
    fetch(j, "lr", what, cfg.lr);
    fetch(j, "batch_size", what, cfg.batch_size);
    fetch(j, "grad_accum", what, cfg.grad_accum);
    fetch(j, "lr_scale", what, cfg.lr_scale);
    return cfg;
}

mta::BackboneConfig parse_model_config(const char* text) {
    const auto j = parse_object(text, "model config",
                                {"input_dim", "hidden_dims", "num_classes",
                                 "nonlinearity"});
    mta::BackboneConfig cfg;
    fetch(j, "input_dim", "model config", cfg.input_dim);
    fetch(j, "hidden_dims", "model config", cfg.hidden_dims);
    fetch(j, "num_classes", "model config", cfg.num_classes);
    fetch(j, "nonlinearity", "model config", cfg.nonlinearity);
    cfg.validate();
    return cfg;
}

mta::BankConfig parse_bank_config(const char* text) {
    const auto j = parse_object(text, "bank config",
                                {"clusters", "seed", "task", "encoder",
                                 "anchor_training"});
    mta::BankConfig cfg;
    fetch(j, "clusters", "bank config", cfg.clusters);
    fetch(j, "seed", "bank config", cfg.seed);
    cfg.task = fetch_task(j, cfg.task);
    if (auto it = j.find("encoder"); it != j.end()) {
        for (const auto& [key, value] : it->items()) {
            (void)value;
            if (key != "dim" && key != "max_ngram")
                throw mta::ParameterError("bank config: unknown key 'encoder." +
                                          key + "'");
        }
        fetch(*it, "dim", "bank config", cfg.encoder.dim);
        fetch(*it, "max_ngram", "bank config", cfg.encoder.max_ngram);
    }
    if (auto it = j.find("anchor_training"); it != j.end())
        cfg.anchor_training = parse_training(*it, "bank config anchor_training");
    cfg.validate();
    return cfg;
}

mta::PersonalizationConfig parse_pers_config(const char* text) {
    const auto j = parse_object(text, "personalization config",
                                {"top_k", "merge_mode", "sim_floor", "task",
                                 "alpha_fixed", "stacked"});
    mta::PersonalizationConfig cfg;
    fetch(j, "top_k", "personalization config", cfg.top_k);
    std::string mode = to_string(cfg.merge_mode);
    fetch(j, "merge_mode", "personalization config", mode);
    cfg.merge_mode = mta::merge_mode_from_string(mode);
    fetch(j, "sim_floor", "personalization config", cfg.sim_floor);
    cfg.task = fetch_task(j, cfg.task);
    if (auto it = j.find("alpha_fixed"); it != j.end() && !it->is_null()) {
        double a = 0.0;
        fetch(j, "alpha_fixed", "personalization config", a);
        cfg.alpha_fixed = a;
    }
    if (auto it = j.find("stacked"); it != j.end())
        cfg.stacked = parse_training(*it, "personalization config stacked");
    cfg.validate();
    return cfg;
}

mta::SyntheticSpec parse_synth_spec(const char* text) {
    const auto j = parse_object(
        text, "corpus spec",
        {"n_clusters", "users_per_cluster", "history_len_min",
         "history_len_max", "query_count", "feature_dim", "cluster_separation",
         "user_noise", "seed", "task", "num_classes"});
    mta::SyntheticSpec spec;
    fetch(j, "n_clusters", "corpus spec", spec.n_clusters);
    fetch(j, "users_per_cluster", "corpus spec", spec.users_per_cluster);
    fetch(j, "history_len_min", "corpus spec", spec.history_len_min);
    fetch(j, "history_len_max", "corpus spec", spec.history_len_max);
    fetch(j, "query_count", "corpus spec", spec.query_count);
    fetch(j, "feature_dim", "corpus spec", spec.feature_dim);
    fetch(j, "cluster_separation", "corpus spec", spec.cluster_separation);
    fetch(j, "user_noise", "corpus spec", spec.user_noise);
    fetch(j, "seed", "corpus spec", spec.seed);
    spec.task = fetch_task(j, spec.task);
    fetch(j, "num_classes", "corpus spec", spec.num_classes);
    spec.validate();
    return spec;
}

std::vector<std::string> parse_id_list(const char* text) {
    require(text, "test id list");
    std::vector<std::string> ids;
    std::string cur;
    for (const char* p = text;; ++p) {
        if (*p == '\n' || *p == '\0') {
            while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' '))
                cur.pop_back();
            if (!cur.empty()) ids.push_back(cur);
            cur.clear();
            if (*p == '\0') break;
        } else {
            cur.push_back(*p);
        }
    }
    if (ids.empty()) throw mta::ParameterError("test id list is empty");
    return ids;
}

std::vector<double> parse_value_list(const char* text) {
    require(text, "value list");
    std::vector<double> values;
    const char* p = text;
    while (*p) {
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        if (end == p)
            throw mta::ParameterError(std::string("bad numeric value in '") +
                                      text + "'");
        values.push_back(v);
        p = end;
        while (*p == ' ') ++p;
        if (*p == ',') ++p;
        while (*p == ' ') ++p;
    }
    if (values.empty()) throw mta::ParameterError("value list is empty");
    return values;
}

void emit_reports(const std::string& json_text, const std::string& table_text,
                  char** report_json, char** table) {
    if (report_json) *report_json = dup_string(json_text);
    if (table) *table = dup_string(table_text);
}

} // namespace

extern "C" {

const char* mta_last_error(void) { return g_last_error.c_str(); }

void mta_string_free(char* s) { std::free(s); }

// ----- base model -----

mta_status mta_model_create(const char* config_json, uint64_t seed,
                            mta_model** out) {
    return guarded([&] {
        require(out, "out");
        const auto cfg = parse_model_config(config_json);
        mta::SeededRng rng(seed);
        *out = new mta_model{mta::BackboneModel::create(cfg, rng)};
    });
}

mta_status mta_model_load(const char* dir, mta_model** out) {
    return guarded([&] {
        require(out, "out");
        require(dir, "dir");
        *out = new mta_model{mta::BackboneModel::load(dir)};
    });
}

mta_status mta_model_save(const mta_model* model, const char* dir) {
    return guarded([&] {
        require(model, "model");
        require(dir, "dir");
        model->impl.save(dir);
    });
}

void mta_model_free(mta_model* model) { delete model; }

// ----- corpora -----

mta_status mta_corpus_generate(const char* spec_json, mta_corpus** out) {
    return guarded([&] {
        require(out, "out");
        *out = new mta_corpus{mta::generate_corpus(parse_synth_spec(spec_json))};
    });
}

mta_status mta_corpus_load(const char* path, mta_corpus** out) {
    return guarded([&] {
        require(out, "out");
        require(path, "path");
        *out = new mta_corpus{mta::load_corpus(path)};
    });
}

mta_status mta_corpus_save(const mta_corpus* corpus, const char* path) {
    return guarded([&] {
        require(corpus, "corpus");
        require(path, "path");
        mta::save_corpus(path, corpus->impl);
    });
}

mta_status mta_corpus_size(const mta_corpus* corpus, size_t* out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out, "out");
        *out = corpus->impl.size();
    });
}

mta_status mta_corpus_default_test_ids(const mta_corpus* corpus, size_t count,
                                       char** out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(out, "out");
        std::string joined;
        for (const auto& id : mta::default_test_ids(corpus->impl, count)) {
            joined += id;
            joined += '\n';
        }
        *out = dup_string(joined);
    });
}

void mta_corpus_free(mta_corpus* corpus) { delete corpus; }

// ----- adapter bank -----

mta_status mta_bank_build(const mta_corpus* corpus, const mta_model* model,
                          const char* config_json, mta_bank** out) {
    return guarded([&] {
        require(corpus, "corpus");
        require(model, "model");
        require(out, "out");
        const auto cfg = parse_bank_config(config_json);
        *out = new mta_bank{mta::build_bank(corpus->impl, model->impl, cfg)};
    });
}

mta_status mta_bank_load(const char* dir, mta_bank** out) {
    return guarded([&] {
        require(out, "out");
        require(dir, "dir");
        *out = new mta_bank{mta::load_bank(dir)};
    });
}

mta_status mta_bank_save(const mta_bank* bank, const char* dir) {
    return guarded([&] {
        require(bank, "bank");
        require(dir, "dir");
        mta::save_bank(dir, bank->impl);
    });
}

void mta_bank_free(mta_bank* bank) { delete bank; }

// ----- personalization -----

mta_status mta_personalize(const mta_bank* bank, const mta_model* model,
                           const mta_corpus* corpus, const char* user_id,
                           const char* config_json, uint64_t seed,
                           mta_user_model** out) {
    return guarded([&] {
        require(bank, "bank");
        require(model, "model");
        require(corpus, "corpus");
        require(user_id, "user_id");
        require(out, "out");
        const auto cfg = parse_pers_config(config_json);
        const mta::UserRecord& user = mta::find_user(corpus->impl, user_id);
        mta::SeededRng rng = mta::SeededRng(seed).derive(user.user_id);
        *out = new mta_user_model{
            mta::personalize_user(bank->impl, model->impl, user, cfg, rng)};
    });
}

mta_status mta_user_model_save(const mta_user_model* um, const char* dir) {
    return guarded([&] {
        require(um, "user model");
        require(dir, "dir");
        mta::save_personalized(dir, um->impl);
    });
}

mta_status mta_user_model_load(const char* dir, mta_user_model** out) {
    return guarded([&] {
        require(out, "out");
        require(dir, "dir");
        *out = new mta_user_model{mta::load_personalized(dir)};
    });
}

mta_status mta_user_model_predict(const mta_user_model* um,
                                  const double* features, size_t n,
                                  double* out) {
    return guarded([&] {
        require(um, "user model");
        require(features, "features");
        require(out, "out");
        const std::vector<double> x(features, features + n);
        *out = mta::predict(um->impl, x);
    });
}

void mta_user_model_free(mta_user_model* um) { delete um; }

// ----- evaluation drivers -----

mta_status mta_evaluate(const mta_bank* bank, const mta_model* model,
                        const mta_corpus* corpus, const char* test_ids,
                        const char* config_json, uint64_t seed,
                        char** report_json, char** table) {
    return guarded([&] {
        require(bank, "bank");
        require(model, "model");
        require(corpus, "corpus");
        const auto ids = parse_id_list(test_ids);
        const auto cfg = parse_pers_config(config_json);
        const auto report = mta::evaluate_users(bank->impl, model->impl,
                                                corpus->impl, ids, cfg, seed);
        emit_reports(mta::report_json(report), mta::report_table(report),
                     report_json, table);
    });
}

mta_status mta_ablate(const mta_corpus* corpus, const mta_model* model,
                      const char* test_ids, const char* bank_config_json,
                      const char* config_json, uint64_t seed,
                      char** report_json, char** table) {
    return guarded([&] {
        require(corpus, "corpus");
        require(model, "model");
        const auto ids = parse_id_list(test_ids);
        const auto bank_cfg = parse_bank_config(bank_config_json);
        const auto cfg = parse_pers_config(config_json);
        const auto report = mta::run_ablation(corpus->impl, ids, model->impl,
                                              bank_cfg, cfg, seed);
        emit_reports(mta::report_json(report), mta::report_table(report),
                     report_json, table);
    });
}

mta_status mta_sweep(const mta_bank* bank, const mta_model* model,
                     const mta_corpus* corpus, const char* test_ids,
                     const char* config_json, const char* param,
                     const char* values, uint64_t seed, char** report_json,
                     char** table) {
    return guarded([&] {
        require(bank, "bank");
        require(model, "model");
        require(corpus, "corpus");
        require(param, "param");
        const auto ids = parse_id_list(test_ids);
        const auto cfg = parse_pers_config(config_json);
        const auto p = mta::sweep_param_from_string(param);
        const auto vals = parse_value_list(values);
        const auto report = mta::sweep(bank->impl, model->impl, corpus->impl,
                                       ids, cfg, p, vals, seed);
        emit_reports(mta::report_json(report), mta::report_table(report),
                     report_json, table);
    });
}

} // extern "C"
