#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mta/backbone.hpp"

using namespace mta;

namespace {

BackboneConfig small_config() {
    BackboneConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden_dims = {3};
    cfg.num_classes = 3;
    cfg.nonlinearity = "tanh";
    return cfg;
}

LoraModule nonzero_module(const BackboneConfig& cfg, std::size_t rank,
                          std::uint64_t seed, const std::string& label) {
    SeededRng rng(seed);
    LoraModule m = init_lora(layer_dims(cfg), rank, label, rng);
    for (auto& layer : m.layers)
        layer.b = uniform_matrix(layer.b.rows(), layer.b.cols(), -0.5, 0.5, rng);
    return m;
}

std::vector<Example> toy_dataset(std::size_t n, std::size_t input_dim,
                                 std::size_t num_classes, std::uint64_t seed) {
    // linearly structured: class = index of the strongest feature block
    SeededRng rng(seed);
    std::vector<Example> data;
    for (std::size_t i = 0; i < n; ++i) {
        Example e;
        e.target = static_cast<double>(i % num_classes);
        e.features.assign(input_dim, 0.0);
        for (auto& f : e.features) f = 0.1 * rng.uniform(-1.0, 1.0);
        e.features[static_cast<std::size_t>(e.target) % input_dim] += 1.0;
        data.push_back(std::move(e));
    }
    return data;
}

double loss_at(const BackboneModel& model, const std::vector<LoraModule>& fixed,
               const LoraModule& trainable, const Example& ex, LossKind kind) {
    std::vector<LoraModule> all = fixed;
    all.push_back(trainable);
    const auto out = forward(model, all, ex.features);
    if (kind == LossKind::cross_entropy)
        return cross_entropy_loss(out, static_cast<std::size_t>(ex.target));
    return squared_error_loss(out, ex.target);
}

// central finite differences over every trainable entry
bool gradcheck(const BackboneModel& model, const std::vector<LoraModule>& fixed,
               const LoraModule& trainable, const Example& ex, LossKind kind) {
    const double h = 1e-5;
    const LoraGradient grad = backward_adapter(model, fixed, trainable, ex, kind);
    bool ok = true;
    for (std::size_t l = 0; l < trainable.layers.size(); ++l) {
        for (int which = 0; which < 2; ++which) {
            const Matrix& g =
                which == 0 ? grad.layers[l].da : grad.layers[l].db;
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    LoraModule plus = trainable, minus = trainable;
                    Matrix& mp = which == 0 ? plus.layers[l].a : plus.layers[l].b;
                    Matrix& mm =
                        which == 0 ? minus.layers[l].a : minus.layers[l].b;
                    mp(r, c) += h;
                    mm(r, c) -= h;
                    const double numeric = (loss_at(model, fixed, plus, ex, kind) -
                                            loss_at(model, fixed, minus, ex, kind)) /
                                           (2.0 * h);
                    const double analytic = g(r, c);
                    const double tol =
                        1e-4 * std::max(std::fabs(analytic), std::fabs(numeric)) +
                        1e-8;
                    if (std::fabs(analytic - numeric) > tol) ok = false;
                }
            }
        }
    }
    return ok;
}

std::filesystem::path temp_dir(const char* leaf) {
    auto dir = std::filesystem::temp_directory_path() / "mta_backbone_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("config validation and layer dims") {
    CHECK_NOTHROW(small_config().validate());

    BackboneConfig bad = small_config();
    bad.input_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = small_config();
    bad.num_classes = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = small_config();
    bad.nonlinearity = "sigmoid";
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = small_config();
    bad.hidden_dims = {3, 0, 2};
    CHECK_THROWS_AS(bad.validate(), ParameterError);

    const auto dims = layer_dims(small_config());
    REQUIRE(dims.size() == 2);
    CHECK(dims[0].in == 4);
    CHECK(dims[0].out == 3);
    CHECK(dims[1].in == 3);
    CHECK(dims[1].out == 3);

    BackboneConfig headonly = small_config();
    headonly.hidden_dims = {};
    const auto hd = layer_dims(headonly);
    REQUIRE(hd.size() == 1);
    CHECK(hd[0].in == 4);
    CHECK(hd[0].out == 3);
}

TEST_CASE("model creation is deterministic with bounded weights") {
    SeededRng r1(5), r2(5);
    const BackboneModel m1 = BackboneModel::create(small_config(), r1);
    const BackboneModel m2 = BackboneModel::create(small_config(), r2);
    REQUIRE(m1.layer_count() == 2);
    CHECK_FALSE(m1.frozen());
    CHECK(m1.weights_checksum() == m2.weights_checksum());
    for (std::size_t l = 0; l < m1.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(
                                 l == 0 ? 4 : 3));
        for (const double v : m1.weight(l).values()) {
            CHECK(v >= -bound);
            CHECK(v < bound);
        }
        for (const double v : m1.bias(l)) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(m1.weight(2), IndexError);
    CHECK_THROWS_AS(m1.bias(9), IndexError);
}

TEST_CASE("cross entropy fixtures") {
    // hand-derived: lse(1,2,3) = 3 + ln(1 + e^-1 + e^-2), target z = 3
    CHECK(cross_entropy_loss({1.0, 2.0, 3.0}, 2) ==
          doctest::Approx(0.4076059644443806).epsilon(1e-12));
    // uniform logits give exactly ln C regardless of the constant
    for (const double c : {0.0, -7.5, 123.0})
        CHECK(cross_entropy_loss({c, c, c, c, c}, 3) ==
              doctest::Approx(std::log(5.0)).epsilon(1e-12));
    // translation invariance of the normalized loss
    CHECK(cross_entropy_loss({1001.0, 1002.0, 1003.0}, 2) ==
          doctest::Approx(0.4076059644443806).epsilon(1e-9));
    CHECK_THROWS_AS(cross_entropy_loss({}, 0), ShapeError);
    CHECK_THROWS_AS(cross_entropy_loss({1.0, 2.0}, 2), IndexError);
}

TEST_CASE("squared error fixture") {
    CHECK(squared_error_loss({2.5, 99.0}, 4.0) == doctest::Approx(2.25));
    CHECK_THROWS_AS(squared_error_loss({}, 1.0), ShapeError);
    CHECK(loss_for(TaskKind::rating) == LossKind::squared_error);
    CHECK(loss_for(TaskKind::classification) == LossKind::cross_entropy);
    CHECK(loss_for(TaskKind::generation) == LossKind::cross_entropy);
}

TEST_CASE("task kind string conversions") {
    CHECK(task_from_string("classification") == TaskKind::classification);
    CHECK(task_from_string("rating") == TaskKind::rating);
    CHECK(task_from_string("generation") == TaskKind::generation);
    CHECK(to_string(TaskKind::rating) == "rating");
    CHECK_THROWS_AS(task_from_string("ranking"), ParameterError);
}

TEST_CASE("forward with adapters equals forward on the materialized model") {
    SeededRng rng(31);
    for (int trial = 0; trial < 8; ++trial) {
        BackboneConfig cfg = small_config();
        cfg.nonlinearity = (trial % 2 == 0) ? "tanh" : "relu";
        const BackboneModel base = BackboneModel::create(cfg, rng);
        const LoraModule merged = nonzero_module(cfg, 2, 400 + trial, "m");
        const LoraModule stacked = nonzero_module(cfg, 1, 500 + trial, "s");

        const BackboneModel folded = materialize(base, merged);
        std::vector<double> x(cfg.input_dim);
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);

        const auto both = forward(base, {merged, stacked}, x);
        const auto fold_stack = forward(folded, {stacked}, x);
        REQUIRE(both.size() == fold_stack.size());
        for (std::size_t i = 0; i < both.size(); ++i)
            CHECK(both[i] == doctest::Approx(fold_stack[i]).epsilon(1e-9));

        // and with the stacked module folded too, no adapters remain
        const BackboneModel folded2 = materialize(base, merged);
        const auto merged_only = forward(base, {merged}, x);
        const auto folded_only = forward(folded2, {}, x);
        for (std::size_t i = 0; i < merged_only.size(); ++i)
            CHECK(merged_only[i] ==
                  doctest::Approx(folded_only[i]).epsilon(1e-9));
    }
}

TEST_CASE("forward validates input shape and adapter shapes") {
    SeededRng rng(8);
    const BackboneModel m = BackboneModel::create(small_config(), rng);
    CHECK_THROWS_AS(forward(m, {}, std::vector<double>(3, 0.0)), ShapeError);
    LoraModule wrong = nonzero_module(small_config(), 2, 9, "w");
    wrong.layers[0].a = Matrix(2, 5); // in-dim 5 against a 4-wide layer
    CHECK_THROWS_AS(forward(m, {wrong}, std::vector<double>(4, 0.0)),
                    ShapeError);
}

TEST_CASE("analytic adapter gradients match central differences") {
    SeededRng rng(77);
    for (int trial = 0; trial < 6; ++trial) {
        BackboneConfig cfg;
        cfg.input_dim = 3 + trial % 3;
        cfg.hidden_dims = trial % 2 ? std::vector<std::size_t>{4}
                                    : std::vector<std::size_t>{3, 2};
        cfg.num_classes = 3;
        cfg.nonlinearity = trial % 2 ? "relu" : "tanh";
        const BackboneModel base = BackboneModel::create(cfg, rng).frozen_copy();
        const LoraModule fixed = nonzero_module(cfg, 2, 700 + trial, "fixed");
        const LoraModule trainable =
            nonzero_module(cfg, 2, 800 + trial, "train");

        Example ex;
        ex.features.resize(cfg.input_dim);
        for (auto& v : ex.features) v = rng.uniform(-1.0, 1.0);

        ex.target = 1.0;
        CHECK(gradcheck(base, {fixed}, trainable, ex, LossKind::cross_entropy));
        ex.target = 2.75;
        CHECK(gradcheck(base, {fixed}, trainable, ex, LossKind::squared_error));
    }
}

TEST_CASE("backward_adapter validates state and targets") {
    SeededRng rng(3);
    const BackboneModel unfrozen = BackboneModel::create(small_config(), rng);
    const LoraModule t = nonzero_module(small_config(), 1, 4, "t");
    Example ex;
    ex.features = {0.1, 0.2, 0.3, 0.4};
    ex.target = 0.0;
    CHECK_THROWS_AS(
        backward_adapter(unfrozen, {}, t, ex, LossKind::cross_entropy),
        StateError);

    const BackboneModel frozen = unfrozen.frozen_copy();
    ex.target = 3.0; // out of range for 3 classes
    CHECK_THROWS_AS(
        backward_adapter(frozen, {}, t, ex, LossKind::cross_entropy),
        IndexError);
    ex.target = 1.5; // not an integer class
    CHECK_THROWS_AS(
        backward_adapter(frozen, {}, t, ex, LossKind::cross_entropy),
        IndexError);
}

TEST_CASE("training config validation") {
    TrainingConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.effective_lr() == doctest::Approx(5e-5));
    cfg.lr_scale = 200.0;
    CHECK(cfg.effective_lr() == doctest::Approx(1e-2));

    TrainingConfig bad;
    bad.rank = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = TrainingConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = TrainingConfig{};
    bad.grad_accum = 0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = TrainingConfig{};
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("train_adapter is deterministic and leaves the base untouched") {
    SeededRng rng(12);
    const BackboneModel base =
        BackboneModel::create(small_config(), rng).frozen_copy();
    const std::string before = base.weights_checksum();
    const auto data = toy_dataset(8, 4, 3, 21);

    TrainingConfig cfg;
    cfg.rank = 2;
    cfg.epochs = 3;
    cfg.lr_scale = 2000.0;
    cfg.grad_accum = 1;

    auto run = [&](std::uint64_t seed) {
        SeededRng stream(seed);
        LoraModule init = init_lora(layer_dims(small_config()), cfg.rank,
                                    "stacked", stream);
        return train_adapter(base, {}, std::move(init), data, cfg, stream,
                             LossKind::cross_entropy);
    };
    const TrainResult r1 = run(5);
    const TrainResult r2 = run(5);
    const TrainResult r3 = run(6);

    CHECK(base.weights_checksum() == before);
    REQUIRE(r1.epoch_mean_loss.size() == 3);
    CHECK(r1.epoch_mean_loss == r2.epoch_mean_loss);
    for (std::size_t l = 0; l < r1.adapter.layers.size(); ++l) {
        CHECK(r1.adapter.layers[l].a == r2.adapter.layers[l].a);
        CHECK(r1.adapter.layers[l].b == r2.adapter.layers[l].b);
    }
    // a different stream takes a different path
    CHECK(r1.epoch_mean_loss != r3.epoch_mean_loss);
}

TEST_CASE("zero epochs return the initial module unchanged") {
    SeededRng rng(13);
    const BackboneModel base =
        BackboneModel::create(small_config(), rng).frozen_copy();
    SeededRng stream(4);
    const LoraModule init =
        init_lora(layer_dims(small_config()), 2, "s", stream);
    TrainingConfig cfg;
    cfg.rank = 2;
    cfg.epochs = 0;
    const TrainResult r = train_adapter(base, {}, init, toy_dataset(4, 4, 3, 2),
                                        cfg, stream, LossKind::cross_entropy);
    CHECK(r.epoch_mean_loss.empty());
    for (std::size_t l = 0; l < init.layers.size(); ++l) {
        CHECK(r.adapter.layers[l].a == init.layers[l].a);
        CHECK(r.adapter.layers[l].b == init.layers[l].b);
    }
}

TEST_CASE("trailing partial accumulation window still updates") {
    SeededRng rng(14);
    const BackboneModel base =
        BackboneModel::create(small_config(), rng).frozen_copy();
    // 3 examples, batch 2, accum 4: no full window, only the trailing one
    const auto data = toy_dataset(3, 4, 3, 9);
    TrainingConfig cfg;
    cfg.rank = 1;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.grad_accum = 4;
    cfg.lr_scale = 2000.0;
    SeededRng stream(7);
    const LoraModule init =
        init_lora(layer_dims(small_config()), 1, "s", stream);
    SeededRng stream2(7);
    LoraModule init_copy = init;
    const TrainResult r = train_adapter(base, {}, std::move(init_copy), data,
                                        cfg, stream2, LossKind::cross_entropy);
    bool changed = false;
    for (std::size_t l = 0; l < init.layers.size(); ++l)
        if (!(r.adapter.layers[l].b == init.layers[l].b)) changed = true;
    CHECK(changed);
}

TEST_CASE("training requires a frozen base and non-empty data") {
    SeededRng rng(15);
    const BackboneModel unfrozen = BackboneModel::create(small_config(), rng);
    SeededRng stream(1);
    LoraModule init = init_lora(layer_dims(small_config()), 1, "s", stream);
    TrainingConfig cfg;
    cfg.rank = 1;
    CHECK_THROWS_AS(train_adapter(unfrozen, {}, init, toy_dataset(4, 4, 3, 2),
                                  cfg, stream, LossKind::cross_entropy),
                    StateError);
    const BackboneModel frozen = unfrozen.frozen_copy();
    CHECK_THROWS_AS(train_adapter(frozen, {}, init, {}, cfg, stream,
                                  LossKind::cross_entropy),
                    DataError);
}

TEST_CASE("divergence raises with the failing step index") {
    SeededRng rng(16);
    const BackboneModel base =
        BackboneModel::create(small_config(), rng).frozen_copy();
    TrainingConfig cfg;
    cfg.rank = 2;
    cfg.epochs = 50;
    cfg.grad_accum = 1;
    cfg.lr_scale = 1e12; // effective rate 5e7 explodes immediately
    SeededRng stream(2);
    LoraModule init = init_lora(layer_dims(small_config()), 2, "s", stream);
    try {
        train_adapter(base, {}, std::move(init), toy_dataset(8, 4, 3, 3), cfg,
                      stream, LossKind::cross_entropy);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.step() > 0);
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
}

TEST_CASE("loss curve halves on a learnable toy problem") {
    SeededRng rng(17);
    const BackboneModel base =
        BackboneModel::create(small_config(), rng).frozen_copy();
    const auto data = toy_dataset(12, 4, 3, 30);
    TrainingConfig cfg;
    cfg.rank = 2;
    cfg.epochs = 10;
    cfg.batch_size = 2;
    cfg.grad_accum = 1;
    cfg.lr_scale = 10000.0; // effective rate 0.5
    SeededRng stream(11);
    LoraModule init = init_lora(layer_dims(small_config()), 2, "s", stream);
    const TrainResult r = train_adapter(base, {}, std::move(init), data, cfg,
                                        stream, LossKind::cross_entropy);
    REQUIRE(r.epoch_mean_loss.size() == 10);
    CHECK(r.epoch_mean_loss.front() > 0.5);
    CHECK(r.epoch_mean_loss.back() <= 0.5 * r.epoch_mean_loss.front());
    for (const double v : r.epoch_mean_loss) CHECK(std::isfinite(v));
}

TEST_CASE("materialize folds the delta and freezes") {
    SeededRng rng(18);
    const BackboneModel base = BackboneModel::create(small_config(), rng);
    const LoraModule m = nonzero_module(small_config(), 2, 19, "m");
    const BackboneModel folded = materialize(base, m);
    CHECK(folded.frozen());
    for (std::size_t l = 0; l < base.layer_count(); ++l) {
        const Matrix want =
            scale_add(1.0, base.weight(l), 1.0, lora_delta(m.layers[l]));
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(folded.weight(l).values()[i] ==
                  doctest::Approx(want.values()[i]).epsilon(1e-12));
    }
    // a frozen model cannot be materialized into again
    CHECK_THROWS_AS(materialize(folded, m), StateError);
}

TEST_CASE("checkpoints round-trip bitwise and validate on load") {
    const auto dir = temp_dir("ckpt");
    SeededRng rng(20);
    const BackboneModel m =
        BackboneModel::create(small_config(), rng).frozen_copy();
    m.save(dir);
    const BackboneModel back = BackboneModel::load(dir);
    CHECK(back.frozen() == m.frozen());
    CHECK(back.weights_checksum() == m.weights_checksum());
    CHECK(back.config().input_dim == 4);

    SUBCASE("missing directory") {
        CHECK_THROWS_AS(BackboneModel::load(dir / "absent"), MissingFileError);
    }
    SUBCASE("manifest version") {
        std::ifstream in(dir / "manifest.json");
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 12, "\"version\": 3");
        std::ofstream(dir / "manifest.json") << text;
        CHECK_THROWS_AS(BackboneModel::load(dir), FormatVersionError);
    }
    SUBCASE("tensor shape contradicts the config") {
        save_tensor(dir / "layer0_w.mtat", Matrix(2, 2));
        CHECK_THROWS_AS(BackboneModel::load(dir), IntegrityError);
    }
}
