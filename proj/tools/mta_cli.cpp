// command line front end; talks to the library strictly through the C API

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mta/mta_c.h"

namespace {

using njson = nlohmann::ordered_json;

// ----- small helpers -----

int fail_status(mta_status s) {
    std::fprintf(stderr, "error: %s\n", mta_last_error());
    return static_cast<int>(s);
}

int fail_msg(int code, const std::string& msg) {
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return code;
}

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out << text;
    return static_cast<bool>(out);
}

// MTA_SEED overrides every seed passed on the command line or in a spec file
std::optional<std::uint64_t> parse_env_seed(int& error_out) {
    const char* v = std::getenv("MTA_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v, &end, 10);
    if (end == v || *end != '\0') {
        error_out = fail_msg(2, std::string("MTA_SEED is not an integer: ") + v);
        return std::nullopt;
    }
    return static_cast<std::uint64_t>(parsed);
}

// ----- flag bundles shared across subcommands -----

struct TrainFlags {
    std::size_t rank = 4;
    std::size_t epochs = 2;
    double lr = 5e-5;
    std::size_t batch = 2;
    std::size_t accum = 4;
    double lr_scale = 1.0;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, const std::string& prefix,
                     const std::string& what) {
    sub->add_option("--" + prefix + "rank", f.rank, what + " adapter rank");
    sub->add_option("--" + prefix + "epochs", f.epochs, what + " training epochs");
    sub->add_option("--" + prefix + "lr", f.lr, what + " learning rate");
    sub->add_option("--" + prefix + "batch", f.batch, what + " minibatch size");
    sub->add_option("--" + prefix + "accum", f.accum,
                    what + " gradient accumulation window");
    sub->add_option("--" + prefix + "lr-scale", f.lr_scale,
                    what + " learning rate multiplier");
}

njson train_json(const TrainFlags& f) {
    njson j;
    j["rank"] = f.rank;
    j["epochs"] = f.epochs;
    j["lr"] = f.lr;
    j["batch_size"] = f.batch;
    j["grad_accum"] = f.accum;
    j["lr_scale"] = f.lr_scale;
    return j;
}

// the task flag is shared: subcommands that carry both bank and
// personalization flags must register it exactly once
void add_task_flag(CLI::App* sub, std::string& task) {
    sub->add_option("--task", task, "task kind")
        ->check(CLI::IsMember({"classification", "rating", "generation"}));
}

struct PersFlags {
    std::size_t top_k = 2;
    std::string merge_mode = "factor";
    double sim_floor = 1e-6;
    std::string task = "classification";
    double alpha = 0.5;
    CLI::Option* alpha_opt = nullptr;
    TrainFlags stacked;
};

void add_pers_flags(CLI::App* sub, PersFlags& f) {
    sub->add_option("--top-k", f.top_k, "how many anchors to merge");
    sub->add_option("--merge-mode", f.merge_mode, "adapter merge strategy")
        ->check(CLI::IsMember({"factor", "delta"}));
    sub->add_option("--sim-floor", f.sim_floor,
                    "relative floor applied to similarities before normalizing");
    add_task_flag(sub, f.task);
    f.alpha_opt = sub->add_option(
        "--alpha", f.alpha, "fixed two-anchor merge coefficient (alpha, 1-alpha)");
    add_train_flags(sub, f.stacked, "", "stacked");
}

std::string pers_json(const PersFlags& f) {
    njson j;
    j["top_k"] = f.top_k;
    j["merge_mode"] = f.merge_mode;
    j["sim_floor"] = f.sim_floor;
    j["task"] = f.task;
    if (f.alpha_opt && f.alpha_opt->count() > 0) j["alpha_fixed"] = f.alpha;
    j["stacked"] = train_json(f.stacked);
    return j.dump();
}

struct BankFlags {
    std::size_t clusters = 8;
    std::size_t encoder_dim = 256;
    std::size_t max_ngram = 2;
    TrainFlags anchor;
};

void add_bank_flags(CLI::App* sub, BankFlags& f) {
    sub->add_option("--clusters", f.clusters, "number of clusters / anchors");
    sub->add_option("--encoder-dim", f.encoder_dim, "hashed embedding width");
    sub->add_option("--max-ngram", f.max_ngram, "1 for unigrams, 2 adds bigrams")
        ->check(CLI::Range(std::size_t{1}, std::size_t{2}));
    add_train_flags(sub, f.anchor, "anchor-", "anchor");
}

std::string bank_json(const BankFlags& f, const std::string& task,
                      std::uint64_t seed) {
    njson j;
    j["clusters"] = f.clusters;
    j["seed"] = seed;
    j["task"] = task;
    j["encoder"] = njson{{"dim", f.encoder_dim}, {"max_ngram", f.max_ngram}};
    j["anchor_training"] = train_json(f.anchor);
    return j.dump();
}

// RAII for handles so early returns cannot leak
template <typename T, void (*Free)(T*)>
struct Handle {
    T* ptr = nullptr;
    ~Handle() { Free(ptr); }
    T** slot() { return &ptr; }
    T* get() const { return ptr; }
};

using ModelHandle = Handle<mta_model, mta_model_free>;
using CorpusHandle = Handle<mta_corpus, mta_corpus_free>;
using BankHandle = Handle<mta_bank, mta_bank_free>;
using UserModelHandle = Handle<mta_user_model, mta_user_model_free>;

int load_corpus_model(const std::string& corpus_path,
                      const std::string& model_dir, CorpusHandle& corpus,
                      ModelHandle& model) {
    if (mta_status s = mta_corpus_load(corpus_path.c_str(), corpus.slot()))
        return fail_status(s);
    if (mta_status s = mta_model_load(model_dir.c_str(), model.slot()))
        return fail_status(s);
    return 0;
}

int write_report(const std::string& path, char* report, char* table) {
    std::fputs(table, stdout);
    const bool ok = write_file(path, report);
    mta_string_free(report);
    mta_string_free(table);
    if (!ok) return fail_msg(3, "cannot write report: " + path);
    std::printf("report written to %s\n", path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adapter-bank personalization pipeline"};
    app.require_subcommand(1);

    int env_error = 0;
    const std::optional<std::uint64_t> env_seed = parse_env_seed(env_error);
    if (env_error) return env_error;

    int rc = 0;

    // ----- gen-corpus -----
    auto* gen = app.add_subcommand("gen-corpus",
                                   "generate a synthetic planted-cluster corpus");
    std::string gen_spec, gen_out, gen_ids_out;
    std::size_t gen_test_count = 0;
    gen->add_option("--spec", gen_spec, "spec JSON file")->required();
    gen->add_option("--out", gen_out, "output JSONL path")->required();
    auto* count_opt = gen->add_option("--test-count", gen_test_count,
                                      "how many few-shot test ids to emit");
    auto* ids_opt = gen->add_option("--test-ids-out", gen_ids_out,
                                    "path for the test id list");
    count_opt->needs(ids_opt);
    ids_opt->needs(count_opt);
    gen->callback([&] {
        const auto spec_text = read_file(gen_spec);
        if (!spec_text) {
            rc = fail_msg(3, "cannot read spec: " + gen_spec);
            return;
        }
        std::string spec = *spec_text;
        if (env_seed) {
            njson j = njson::parse(spec, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                rc = fail_msg(3, "malformed spec JSON: " + gen_spec);
                return;
            }
            j["seed"] = *env_seed;
            spec = j.dump();
        }
        CorpusHandle corpus;
        if (mta_status s = mta_corpus_generate(spec.c_str(), corpus.slot())) {
            rc = fail_status(s);
            return;
        }
        if (mta_status s = mta_corpus_save(corpus.get(), gen_out.c_str())) {
            rc = fail_status(s);
            return;
        }
        size_t n = 0;
        mta_corpus_size(corpus.get(), &n);
        std::printf("wrote %zu users to %s\n", n, gen_out.c_str());
        if (gen_test_count > 0) {
            char* ids = nullptr;
            if (mta_status s = mta_corpus_default_test_ids(corpus.get(),
                                                           gen_test_count, &ids)) {
                rc = fail_status(s);
                return;
            }
            const bool ok = write_file(gen_ids_out, ids);
            mta_string_free(ids);
            if (!ok) {
                rc = fail_msg(3, "cannot write ids: " + gen_ids_out);
                return;
            }
            std::printf("wrote %zu test ids to %s\n", gen_test_count,
                        gen_ids_out.c_str());
        }
    });

    // ----- init-model -----
    auto* init = app.add_subcommand("init-model",
                                    "create and save an untrained base model");
    std::string init_config, init_out;
    std::uint64_t init_seed = 0;
    init->add_option("--config", init_config, "model config JSON file")->required();
    init->add_option("--out", init_out, "output checkpoint directory")->required();
    init->add_option("--seed", init_seed, "weight initialization seed");
    init->callback([&] {
        const auto cfg = read_file(init_config);
        if (!cfg) {
            rc = fail_msg(3, "cannot read config: " + init_config);
            return;
        }
        ModelHandle model;
        const std::uint64_t seed = env_seed.value_or(init_seed);
        if (mta_status s = mta_model_create(cfg->c_str(), seed, model.slot())) {
            rc = fail_status(s);
            return;
        }
        if (mta_status s = mta_model_save(model.get(), init_out.c_str())) {
            rc = fail_status(s);
            return;
        }
        std::printf("model written to %s\n", init_out.c_str());
    });

    // ----- build-bank -----
    auto* build = app.add_subcommand(
        "build-bank", "cluster users and train one anchor adapter per cluster");
    std::string build_corpus, build_model, build_out;
    std::string build_task = "classification";
    std::uint64_t build_seed = 0;
    BankFlags build_flags;
    build->add_option("--corpus", build_corpus, "corpus JSONL path")->required();
    build->add_option("--model", build_model, "base model directory")->required();
    build->add_option("--out", build_out, "output bank directory")->required();
    build->add_option("--seed", build_seed, "clustering and training seed");
    add_task_flag(build, build_task);
    add_bank_flags(build, build_flags);
    build->callback([&] {
        CorpusHandle corpus;
        ModelHandle model;
        if ((rc = load_corpus_model(build_corpus, build_model, corpus, model)))
            return;
        const std::string cfg =
            bank_json(build_flags, build_task, env_seed.value_or(build_seed));
        BankHandle bank;
        if (mta_status s = mta_bank_build(corpus.get(), model.get(), cfg.c_str(),
                                          bank.slot())) {
            rc = fail_status(s);
            return;
        }
        if (mta_status s = mta_bank_save(bank.get(), build_out.c_str())) {
            rc = fail_status(s);
            return;
        }
        std::printf("bank written to %s\n", build_out.c_str());
    });

    // ----- personalize -----
    auto* pers = app.add_subcommand(
        "personalize", "merge retrieved anchors and train a stacked adapter");
    std::string pers_bank, pers_model, pers_corpus, pers_user, pers_out;
    std::uint64_t pers_seed = 0;
    PersFlags pers_flags;
    pers->add_option("--bank", pers_bank, "bank directory")->required();
    pers->add_option("--model", pers_model, "base model directory")->required();
    pers->add_option("--corpus", pers_corpus, "corpus JSONL path")->required();
    pers->add_option("--user-id", pers_user, "user to personalize")->required();
    pers->add_option("--out", pers_out, "output directory")->required();
    pers->add_option("--seed", pers_seed, "training seed");
    add_pers_flags(pers, pers_flags);
    pers->callback([&] {
        CorpusHandle corpus;
        ModelHandle model;
        if ((rc = load_corpus_model(pers_corpus, pers_model, corpus, model)))
            return;
        BankHandle bank;
        if (mta_status s = mta_bank_load(pers_bank.c_str(), bank.slot())) {
            rc = fail_status(s);
            return;
        }
        UserModelHandle um;
        if (mta_status s = mta_personalize(
                bank.get(), model.get(), corpus.get(), pers_user.c_str(),
                pers_json(pers_flags).c_str(), env_seed.value_or(pers_seed),
                um.slot())) {
            rc = fail_status(s);
            return;
        }
        if (mta_status s = mta_user_model_save(um.get(), pers_out.c_str())) {
            rc = fail_status(s);
            return;
        }
        std::printf("personalized model written to %s\n", pers_out.c_str());
    });

    // ----- evaluate -----
    auto* eval = app.add_subcommand("evaluate",
                                    "personalize and score a set of test users");
    std::string eval_bank, eval_model, eval_corpus, eval_ids, eval_report;
    std::uint64_t eval_seed = 0;
    PersFlags eval_flags;
    eval->add_option("--bank", eval_bank, "bank directory")->required();
    eval->add_option("--model", eval_model, "base model directory")->required();
    eval->add_option("--corpus", eval_corpus, "corpus JSONL path")->required();
    eval->add_option("--test-ids", eval_ids, "file with one user id per line")
        ->required();
    eval->add_option("--report", eval_report, "output report JSON path")
        ->required();
    eval->add_option("--seed", eval_seed, "evaluation seed");
    add_pers_flags(eval, eval_flags);
    eval->callback([&] {
        CorpusHandle corpus;
        ModelHandle model;
        if ((rc = load_corpus_model(eval_corpus, eval_model, corpus, model)))
            return;
        BankHandle bank;
        if (mta_status s = mta_bank_load(eval_bank.c_str(), bank.slot())) {
            rc = fail_status(s);
            return;
        }
        const auto ids = read_file(eval_ids);
        if (!ids) {
            rc = fail_msg(3, "cannot read test ids: " + eval_ids);
            return;
        }
        char* report = nullptr;
        char* table = nullptr;
        if (mta_status s = mta_evaluate(bank.get(), model.get(), corpus.get(),
                                        ids->c_str(),
                                        pers_json(eval_flags).c_str(),
                                        env_seed.value_or(eval_seed), &report,
                                        &table)) {
            rc = fail_status(s);
            return;
        }
        rc = write_report(eval_report, report, table);
    });

    // ----- ablate -----
    auto* abl = app.add_subcommand(
        "ablate", "compare stacked-only, merged-only, and the full pipeline");
    std::string abl_corpus, abl_model, abl_ids, abl_report;
    std::uint64_t abl_seed = 0;
    BankFlags abl_bank_flags;
    PersFlags abl_flags;
    abl->add_option("--corpus", abl_corpus, "corpus JSONL path")->required();
    abl->add_option("--model", abl_model, "base model directory")->required();
    abl->add_option("--test-ids", abl_ids, "file with one user id per line")
        ->required();
    abl->add_option("--report", abl_report, "output report JSON path")->required();
    abl->add_option("--seed", abl_seed, "bank and evaluation seed");
    add_bank_flags(abl, abl_bank_flags);
    add_pers_flags(abl, abl_flags);
    abl->callback([&] {
        CorpusHandle corpus;
        ModelHandle model;
        if ((rc = load_corpus_model(abl_corpus, abl_model, corpus, model)))
            return;
        const auto ids = read_file(abl_ids);
        if (!ids) {
            rc = fail_msg(3, "cannot read test ids: " + abl_ids);
            return;
        }
        const std::uint64_t seed = env_seed.value_or(abl_seed);
        char* report = nullptr;
        char* table = nullptr;
        if (mta_status s = mta_ablate(
                corpus.get(), model.get(), ids->c_str(),
                bank_json(abl_bank_flags, abl_flags.task, seed).c_str(),
                pers_json(abl_flags).c_str(), seed, &report, &table)) {
            rc = fail_status(s);
            return;
        }
        rc = write_report(abl_report, report, table);
    });

    // ----- sweep -----
    auto* sw = app.add_subcommand("sweep",
                                  "evaluate once per value of one parameter");
    std::string sw_bank, sw_model, sw_corpus, sw_ids, sw_report, sw_param,
        sw_values;
    std::uint64_t sw_seed = 0;
    PersFlags sw_flags;
    sw->add_option("--bank", sw_bank, "bank directory")->required();
    sw->add_option("--model", sw_model, "base model directory")->required();
    sw->add_option("--corpus", sw_corpus, "corpus JSONL path")->required();
    sw->add_option("--test-ids", sw_ids, "file with one user id per line")
        ->required();
    sw->add_option("--param", sw_param, "parameter to sweep")
        ->required()
        ->check(CLI::IsMember({"alpha_fixed", "top_k", "stacked_rank"}));
    sw->add_option("--values", sw_values, "comma-separated values")->required();
    sw->add_option("--report", sw_report, "output report JSON path")->required();
    sw->add_option("--seed", sw_seed, "evaluation seed");
    add_pers_flags(sw, sw_flags);
    sw->callback([&] {
        CorpusHandle corpus;
        ModelHandle model;
        if ((rc = load_corpus_model(sw_corpus, sw_model, corpus, model)))
            return;
        BankHandle bank;
        if (mta_status s = mta_bank_load(sw_bank.c_str(), bank.slot())) {
            rc = fail_status(s);
            return;
        }
        const auto ids = read_file(sw_ids);
        if (!ids) {
            rc = fail_msg(3, "cannot read test ids: " + sw_ids);
            return;
        }
        char* report = nullptr;
        char* table = nullptr;
        if (mta_status s = mta_sweep(bank.get(), model.get(), corpus.get(),
                                     ids->c_str(), pers_json(sw_flags).c_str(),
                                     sw_param.c_str(), sw_values.c_str(),
                                     env_seed.value_or(sw_seed), &report,
                                     &table)) {
            rc = fail_status(s);
            return;
        }
        rc = write_report(sw_report, report, table);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return rc;
}
