#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "mta/mta_c.h"

// parity checks go through the C++ surface directly
#include "mta/eval.hpp"

namespace {

const char* kModelJson =
    "{\"input_dim\": 32, \"hidden_dims\": [4], \"num_classes\": 2, "
    "\"nonlinearity\": \"tanh\"}";

const char* kSpecJson =
    "{\"n_clusters\": 2, \"users_per_cluster\": 3, \"history_len_min\": 4, "
    "\"history_len_max\": 8, \"query_count\": 3, \"feature_dim\": 32, "
    "\"cluster_separation\": 6.0, \"user_noise\": 0.5, \"seed\": 3, "
    "\"task\": \"classification\", \"num_classes\": 2}";

const char* kBankJson =
    "{\"clusters\": 2, \"seed\": 11, \"task\": \"classification\", "
    "\"encoder\": {\"dim\": 32, \"max_ngram\": 2}, "
    "\"anchor_training\": {\"rank\": 2, \"epochs\": 2, \"grad_accum\": 1}}";

const char* kPersJson =
    "{\"top_k\": 2, \"task\": \"classification\", "
    "\"stacked\": {\"rank\": 1, \"epochs\": 2, \"grad_accum\": 1}}";

std::filesystem::path temp_dir(const char* leaf) {
    auto dir = std::filesystem::temp_directory_path() / "mta_capi_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// owning wrappers so failures cannot leak handles across assertions
struct Model {
    mta_model* h = nullptr;
    ~Model() { mta_model_free(h); }
};
struct Corpus {
    mta_corpus* h = nullptr;
    ~Corpus() { mta_corpus_free(h); }
};
struct Bank {
    mta_bank* h = nullptr;
    ~Bank() { mta_bank_free(h); }
};
struct UserModel {
    mta_user_model* h = nullptr;
    ~UserModel() { mta_user_model_free(h); }
};
struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { mta_string_free(s); }
    std::string str() const { return s ? std::string(s) : std::string(); }
};

} // namespace

TEST_CASE("model lifecycle and error reporting") {
    Model m;
    REQUIRE(mta_model_create(kModelJson, 1, &m.h) == MTA_OK);
    REQUIRE(m.h != nullptr);
    CHECK(std::string(mta_last_error()).empty());

    const auto dir = temp_dir("model");
    CHECK(mta_model_save(m.h, dir.string().c_str()) == MTA_OK);
    Model back;
    CHECK(mta_model_load(dir.string().c_str(), &back.h) == MTA_OK);

    SUBCASE("broken json is a parameter error") {
        Model bad;
        CHECK(mta_model_create("{not json", 1, &bad.h) == MTA_ERR_PARAMETER);
        CHECK(bad.h == nullptr);
        CHECK_FALSE(std::string(mta_last_error()).empty());
    }
    SUBCASE("unknown keys are rejected loudly") {
        Model bad;
        CHECK(mta_model_create(
                  "{\"input_dim\": 8, \"hiden_dims\": [4]}", 1, &bad.h) ==
              MTA_ERR_PARAMETER);
        CHECK(std::string(mta_last_error()).find("hiden_dims") !=
              std::string::npos);
    }
    SUBCASE("invalid config values are parameter errors") {
        Model bad;
        CHECK(mta_model_create("{\"input_dim\": 0}", 1, &bad.h) ==
              MTA_ERR_PARAMETER);
    }
    SUBCASE("null arguments are parameter errors") {
        CHECK(mta_model_create(kModelJson, 1, nullptr) == MTA_ERR_PARAMETER);
        CHECK(mta_model_create(nullptr, 1, &back.h) == MTA_ERR_PARAMETER);
        CHECK(mta_model_save(nullptr, dir.string().c_str()) ==
              MTA_ERR_PARAMETER);
    }
    SUBCASE("missing checkpoint is a data error") {
        Model bad;
        CHECK(mta_model_load("/nonexistent/mta-model", &bad.h) == MTA_ERR_DATA);
    }
    SUBCASE("freeing null is a no-op") {
        mta_model_free(nullptr);
        mta_corpus_free(nullptr);
        mta_bank_free(nullptr);
        mta_user_model_free(nullptr);
        mta_string_free(nullptr);
    }
}

TEST_CASE("corpus generation, io, and test id selection") {
    Corpus c;
    REQUIRE(mta_corpus_generate(kSpecJson, &c.h) == MTA_OK);
    size_t n = 0;
    CHECK(mta_corpus_size(c.h, &n) == MTA_OK);
    CHECK(n == 6);

    OwnedString ids;
    REQUIRE(mta_corpus_default_test_ids(c.h, 2, &ids.s) == MTA_OK);
    CHECK(ids.str() == "c0_u0000\nc1_u0000\n");

    const auto path = temp_dir("corpus") / "corpus.jsonl";
    CHECK(mta_corpus_save(c.h, path.string().c_str()) == MTA_OK);
    Corpus back;
    CHECK(mta_corpus_load(path.string().c_str(), &back.h) == MTA_OK);
    size_t n2 = 0;
    CHECK(mta_corpus_size(back.h, &n2) == MTA_OK);
    CHECK(n2 == 6);

    SUBCASE("bad spec values fail as parameter errors") {
        Corpus bad;
        CHECK(mta_corpus_generate("{\"n_clusters\": 0}", &bad.h) ==
              MTA_ERR_PARAMETER);
        CHECK(mta_corpus_generate("{\"clusters\": 2}", &bad.h) ==
              MTA_ERR_PARAMETER);
    }
    SUBCASE("missing corpus file is a data error") {
        Corpus bad;
        CHECK(mta_corpus_load("/nonexistent/corpus.jsonl", &bad.h) ==
              MTA_ERR_DATA);
    }
    SUBCASE("out-of-range test id count is a parameter error") {
        OwnedString bad;
        CHECK(mta_corpus_default_test_ids(c.h, 0, &bad.s) == MTA_ERR_PARAMETER);
        CHECK(mta_corpus_default_test_ids(c.h, 7, &bad.s) == MTA_ERR_PARAMETER);
    }
}

TEST_CASE("bank building and io") {
    Model m;
    REQUIRE(mta_model_create(kModelJson, 1, &m.h) == MTA_OK);
    Corpus c;
    REQUIRE(mta_corpus_generate(kSpecJson, &c.h) == MTA_OK);

    Bank b;
    REQUIRE(mta_bank_build(c.h, m.h, kBankJson, &b.h) == MTA_OK);

    const auto dir = temp_dir("bank");
    CHECK(mta_bank_save(b.h, dir.string().c_str()) == MTA_OK);
    Bank back;
    CHECK(mta_bank_load(dir.string().c_str(), &back.h) == MTA_OK);

    SUBCASE("more clusters than users is a parameter error") {
        Bank bad;
        CHECK(mta_bank_build(c.h, m.h, "{\"clusters\": 99}", &bad.h) ==
              MTA_ERR_PARAMETER);
    }
    SUBCASE("nested unknown keys are rejected") {
        Bank bad;
        CHECK(mta_bank_build(c.h, m.h,
                             "{\"anchor_training\": {\"epoch\": 2}}", &bad.h) ==
              MTA_ERR_PARAMETER);
        CHECK(std::string(mta_last_error()).find("epoch") != std::string::npos);
    }
    SUBCASE("divergent anchor training surfaces as such") {
        Bank bad;
        CHECK(mta_bank_build(
                  c.h, m.h,
                  "{\"clusters\": 2, \"anchor_training\": "
                  "{\"epochs\": 50, \"grad_accum\": 1, \"lr_scale\": 1e12}}",
                  &bad.h) == MTA_ERR_DIVERGENCE);
        CHECK_FALSE(std::string(mta_last_error()).empty());
    }
}

TEST_CASE("personalization and prediction through the C surface") {
    Model m;
    REQUIRE(mta_model_create(kModelJson, 1, &m.h) == MTA_OK);
    Corpus c;
    REQUIRE(mta_corpus_generate(kSpecJson, &c.h) == MTA_OK);
    Bank b;
    REQUIRE(mta_bank_build(c.h, m.h, kBankJson, &b.h) == MTA_OK);

    UserModel um;
    REQUIRE(mta_personalize(b.h, m.h, c.h, "c0_u0000", kPersJson, 5, &um.h) ==
            MTA_OK);

    std::vector<double> x(32, 0.25);
    double pred = -1.0;
    CHECK(mta_user_model_predict(um.h, x.data(), x.size(), &pred) == MTA_OK);
    CHECK(pred >= 0.0);
    CHECK(pred <= 1.0);

    const auto dir = temp_dir("user");
    CHECK(mta_user_model_save(um.h, dir.string().c_str()) == MTA_OK);
    UserModel back;
    CHECK(mta_user_model_load(dir.string().c_str(), &back.h) == MTA_OK);
    double pred2 = -1.0;
    CHECK(mta_user_model_predict(back.h, x.data(), x.size(), &pred2) == MTA_OK);
    CHECK(pred2 == pred);

    SUBCASE("wrong feature width is a parameter error") {
        double out = 0.0;
        CHECK(mta_user_model_predict(um.h, x.data(), 8, &out) ==
              MTA_ERR_PARAMETER);
    }
    SUBCASE("personalizing an anchor is a data error") {
        OwnedString ids;
        // anchors hold the longest histories, so they sort last
        REQUIRE(mta_corpus_default_test_ids(c.h, 6, &ids.s) == MTA_OK);
        std::string all = ids.str();
        all.pop_back(); // trailing newline
        const std::string anchor = all.substr(all.rfind('\n') + 1);
        UserModel bad;
        CHECK(mta_personalize(b.h, m.h, c.h, anchor.c_str(), kPersJson, 5,
                              &bad.h) == MTA_ERR_DATA);
    }
    SUBCASE("unknown user is a data error") {
        UserModel bad;
        CHECK(mta_personalize(b.h, m.h, c.h, "ghost", kPersJson, 5, &bad.h) ==
              MTA_ERR_DATA);
    }
    SUBCASE("alpha_fixed outside [0, 1] is a parameter error") {
        UserModel bad;
        CHECK(mta_personalize(b.h, m.h, c.h, "c0_u0000",
                              "{\"alpha_fixed\": 1.5}", 5, &bad.h) ==
              MTA_ERR_PARAMETER);
    }
}

TEST_CASE("evaluation drivers match the library reports byte for byte") {
    Model m;
    REQUIRE(mta_model_create(kModelJson, 1, &m.h) == MTA_OK);
    Corpus c;
    REQUIRE(mta_corpus_generate(kSpecJson, &c.h) == MTA_OK);
    Bank b;
    REQUIRE(mta_bank_build(c.h, m.h, kBankJson, &b.h) == MTA_OK);

    // the same pipeline driven through the C++ interface
    mta::SyntheticSpec spec;
    spec.n_clusters = 2;
    spec.users_per_cluster = 3;
    spec.history_len_min = 4;
    spec.history_len_max = 8;
    spec.query_count = 3;
    spec.feature_dim = 32;
    spec.cluster_separation = 6.0;
    spec.user_noise = 0.5;
    spec.seed = 3;
    spec.num_classes = 2;
    const auto corpus = mta::generate_corpus(spec);

    mta::BackboneConfig mc;
    mc.input_dim = 32;
    mc.hidden_dims = {4};
    mc.num_classes = 2;
    mta::SeededRng mrng(1);
    const mta::BackboneModel base = mta::BackboneModel::create(mc, mrng);

    mta::BankConfig bc;
    bc.clusters = 2;
    bc.seed = 11;
    bc.encoder = {32, 2};
    bc.anchor_training.rank = 2;
    bc.anchor_training.epochs = 2;
    bc.anchor_training.grad_accum = 1;

    mta::PersonalizationConfig pc;
    pc.top_k = 2;
    pc.stacked.rank = 1;
    pc.stacked.epochs = 2;
    pc.stacked.grad_accum = 1;

    const std::vector<std::string> ids = {"c0_u0000", "c1_u0000"};

    SUBCASE("evaluate") {
        OwnedString json, table;
        REQUIRE(mta_evaluate(b.h, m.h, c.h, "c0_u0000\nc1_u0000\n", kPersJson,
                             5, &json.s, &table.s) == MTA_OK);
        const mta::LoraBank bank = mta::build_bank(corpus, base, bc);
        const auto report = mta::evaluate_users(bank, base, corpus, ids, pc, 5);
        CHECK(json.str() == mta::report_json(report));
        CHECK(table.str() == mta::report_table(report));
    }
    SUBCASE("ablate") {
        OwnedString json;
        REQUIRE(mta_ablate(c.h, m.h, "c0_u0000\nc1_u0000", kBankJson, kPersJson,
                           5, &json.s, nullptr) == MTA_OK);
        const auto report = mta::run_ablation(corpus, ids, base, bc, pc, 5);
        CHECK(json.str() == mta::report_json(report));
    }
    SUBCASE("sweep") {
        OwnedString json;
        REQUIRE(mta_sweep(b.h, m.h, c.h, "c0_u0000\nc1_u0000", kPersJson,
                          "stacked_rank", "1, 2", 5, &json.s, nullptr) ==
                MTA_OK);
        const mta::LoraBank bank = mta::build_bank(corpus, base, bc);
        const auto report = mta::sweep(bank, base, corpus, ids, pc,
                                       mta::SweepParam::stacked_rank,
                                       {1.0, 2.0}, 5);
        CHECK(json.str() == mta::report_json(report));
    }
    SUBCASE("empty id list is a parameter error") {
        OwnedString json;
        CHECK(mta_evaluate(b.h, m.h, c.h, "\n\n", kPersJson, 5, &json.s,
                           nullptr) == MTA_ERR_PARAMETER);
    }
    SUBCASE("malformed sweep values are parameter errors") {
        OwnedString json;
        CHECK(mta_sweep(b.h, m.h, c.h, "c0_u0000", kPersJson, "stacked_rank",
                        "1, x", 5, &json.s, nullptr) == MTA_ERR_PARAMETER);
        CHECK(mta_sweep(b.h, m.h, c.h, "c0_u0000", kPersJson, "widths", "1",
                        5, &json.s, nullptr) == MTA_ERR_PARAMETER);
    }
    SUBCASE("contaminated test ids are a data error") {
        OwnedString ids_all, json;
        REQUIRE(mta_corpus_default_test_ids(c.h, 6, &ids_all.s) == MTA_OK);
        std::string all = ids_all.str();
        all.pop_back(); // trailing newline
        const std::string anchor = all.substr(all.rfind('\n') + 1);
        CHECK(mta_evaluate(b.h, m.h, c.h, anchor.c_str(), kPersJson, 5,
                           &json.s, nullptr) == MTA_ERR_DATA);
    }
}
