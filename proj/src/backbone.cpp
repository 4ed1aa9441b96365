#include "mta/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"

#include "mta/digest.hpp"

namespace mta {

TaskKind task_from_string(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "rating") return TaskKind::rating;
    if (s == "generation") return TaskKind::generation;
    throw ParameterError("unknown task kind: " + s);
}

std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::classification: return "classification";
        case TaskKind::rating: return "rating";
        case TaskKind::generation: return "generation";
    }
    throw ParameterError("bad task kind value");
}

void BackboneConfig::validate() const {
    if (input_dim == 0) throw ParameterError("backbone: input_dim must be >= 1");
    if (num_classes == 0) throw ParameterError("backbone: num_classes must be >= 1");
    for (std::size_t h : hidden_dims)
        if (h == 0) throw ParameterError("backbone: zero hidden dim");
    if (nonlinearity != "tanh" && nonlinearity != "relu")
        throw ParameterError("backbone: unknown nonlinearity " + nonlinearity);
}

std::vector<LayerDims> layer_dims(const BackboneConfig& cfg) {
    cfg.validate();
    std::vector<LayerDims> dims;
    std::size_t in = cfg.input_dim;
    for (std::size_t h : cfg.hidden_dims) {
        dims.push_back({in, h});
        in = h;
    }
    dims.push_back({in, cfg.num_classes});
    return dims;
}

BackboneModel BackboneModel::create(const BackboneConfig& cfg, SeededRng& rng) {
    BackboneModel m;
    m.cfg_ = cfg;
    for (const auto& d : layer_dims(cfg)) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
        m.weights_.push_back(uniform_matrix(d.out, d.in, -bound, bound, rng));
        m.biases_.emplace_back(d.out, 0.0);
    }
    return m;
}

const Matrix& BackboneModel::weight(std::size_t l) const {
    if (l >= weights_.size()) throw IndexError("backbone: layer index out of range");
    return weights_[l];
}

const std::vector<double>& BackboneModel::bias(std::size_t l) const {
    if (l >= biases_.size()) throw IndexError("backbone: layer index out of range");
    return biases_[l];
}

BackboneModel BackboneModel::frozen_copy() const {
    BackboneModel m = *this;
    m.frozen_ = true;
    return m;
}

std::string BackboneModel::weights_checksum() const {
    std::string bytes;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        bytes += tensor_record_bytes(weights_[l]);
        bytes += tensor_record_bytes(Matrix(biases_[l].size(), 1, biases_[l]));
    }
    return sha256_hex(bytes);
}

namespace {

double activate(double z, bool is_tanh) {
    return is_tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// derivative expressed through the activated value for tanh, through the
// preactivation for relu
double activate_grad(double z, double a, bool is_tanh) {
    return is_tanh ? 1.0 - a * a : (z > 0.0 ? 1.0 : 0.0);
}

struct ForwardTrace {
    // inputs[l] feeds layer l; pre[l] and post[l] are its pre/post activation
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> post;
};

void check_adapters(const BackboneModel& model,
                    const std::vector<LoraModule>& adapters) {
    const auto dims = layer_dims(model.config());
    for (const auto& ad : adapters)
        ad.validate_against(dims);
}

ForwardTrace forward_trace(const BackboneModel& model,
                           const std::vector<LoraModule>& adapters,
                           const std::vector<double>& x) {
    if (x.size() != model.config().input_dim)
        throw ShapeError("forward: feature dimension mismatch");
    check_adapters(model, adapters);
    const bool is_tanh = model.config().nonlinearity == "tanh";
    const std::size_t L = model.layer_count();
    ForwardTrace t;
    t.inputs.resize(L);
    t.pre.resize(L);
    t.post.resize(L);
    std::vector<double> a = x;
    for (std::size_t l = 0; l < L; ++l) {
        t.inputs[l] = a;
        std::vector<double> z = matvec(model.weight(l), a);
        const auto& bias = model.bias(l);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += bias[i];
        for (const auto& ad : adapters) {
            const std::vector<double> u = matvec(ad.layers[l].a, a);
            const std::vector<double> dz = matvec(ad.layers[l].b, u);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += dz[i];
        }
        t.pre[l] = z;
        if (l + 1 == L) {
            t.post[l] = z; // linear head
        } else {
            std::vector<double> act(z.size());
            for (std::size_t i = 0; i < z.size(); ++i)
                act[i] = activate(z[i], is_tanh);
            t.post[l] = std::move(act);
        }
        a = t.post[l];
    }
    return t;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::size_t class_target(double target, std::size_t num_classes) {
    if (!(std::floor(target) == target))
        throw IndexError("class target is not integral");
    if (target < 0.0 || target >= static_cast<double>(num_classes))
        throw IndexError("class target outside [0, num_classes)");
    return static_cast<std::size_t>(target);
}

} // namespace

std::vector<double> forward(const BackboneModel& model,
                            const std::vector<LoraModule>& adapters,
                            const std::vector<double>& x) {
    ForwardTrace t = forward_trace(model, adapters, x);
    return t.post.back();
}

double cross_entropy_loss(const std::vector<double>& logits, std::size_t target) {
    if (logits.empty()) throw ShapeError("cross_entropy_loss: empty logits");
    if (target >= logits.size())
        throw IndexError("cross_entropy_loss: target outside [0, C)");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - m);
    return (m + std::log(sum)) - logits[target];
}

double squared_error_loss(const std::vector<double>& output, double target) {
    if (output.empty()) throw ShapeError("squared_error_loss: empty output");
    const double d = output[0] - target;
    return d * d;
}

LossKind loss_for(TaskKind t) {
    return t == TaskKind::rating ? LossKind::squared_error
                                 : LossKind::cross_entropy;
}

void TrainingConfig::validate() const {
    if (rank == 0) throw ParameterError("training: rank must be >= 1");
    if (batch_size == 0) throw ParameterError("training: batch_size must be >= 1");
    if (grad_accum == 0) throw ParameterError("training: grad_accum must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr))
        throw ParameterError("training: lr must be positive and finite");
    if (!(lr_scale > 0.0) || !std::isfinite(lr_scale))
        throw ParameterError("training: lr_scale must be positive and finite");
}

LoraGradient backward_adapter(const BackboneModel& model,
                              const std::vector<LoraModule>& fixed,
                              const LoraModule& trainable,
                              const Example& example,
                              LossKind loss) {
    if (!model.frozen())
        throw StateError("backward_adapter: model is not frozen");
    std::vector<LoraModule> all = fixed;
    all.push_back(trainable);
    ForwardTrace t = forward_trace(model, all, example.features);
    const bool is_tanh = model.config().nonlinearity == "tanh";
    const std::size_t L = model.layer_count();
    const std::vector<double>& out = t.post.back();

    LoraGradient g;
    g.layers.resize(L);

    // d loss / d head
    std::vector<double> delta(out.size(), 0.0);
    if (loss == LossKind::cross_entropy) {
        const std::size_t target = class_target(example.target, out.size());
        delta = softmax(out);
        delta[target] -= 1.0;
        g.loss = cross_entropy_loss(out, target);
    } else {
        delta[0] = 2.0 * (out[0] - example.target);
        g.loss = squared_error_loss(out, example.target);
    }

    for (std::size_t li = L; li-- > 0;) {
        const auto& input = t.inputs[li];
        const auto& tl = trainable.layers[li];

        // gradient entries for the trainable factors only:
        //   d z = b*(a*input), so db = delta (a*input)^T, da = (b^T delta) input^T
        const std::vector<double> u = matvec(tl.a, input);
        Matrix db(tl.b.rows(), tl.b.cols());
        for (std::size_t i = 0; i < db.rows(); ++i)
            for (std::size_t j = 0; j < db.cols(); ++j)
                db(i, j) = delta[i] * u[j];
        std::vector<double> bt_delta(tl.a.rows(), 0.0);
        for (std::size_t i = 0; i < tl.b.rows(); ++i)
            for (std::size_t j = 0; j < tl.b.cols(); ++j)
                bt_delta[j] += tl.b(i, j) * delta[i];
        Matrix da(tl.a.rows(), tl.a.cols());
        for (std::size_t j = 0; j < da.rows(); ++j)
            for (std::size_t k = 0; k < da.cols(); ++k)
                da(j, k) = bt_delta[j] * input[k];
        g.layers[li].da = std::move(da);
        g.layers[li].db = std::move(db);

        if (li == 0) break;

        // backpropagate through the effective weight w + sum_ad b_ad*a_ad;
        // every module shapes the signal even though only one gets entries
        std::vector<double> dinput(input.size(), 0.0);
        const Matrix& w = model.weight(li);
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t k = 0; k < w.cols(); ++k)
                dinput[k] += w(i, k) * delta[i];
        for (const auto& ad : all) {
            const auto& al = ad.layers[li];
            std::vector<double> bt(al.a.rows(), 0.0);
            for (std::size_t i = 0; i < al.b.rows(); ++i)
                for (std::size_t j = 0; j < al.b.cols(); ++j)
                    bt[j] += al.b(i, j) * delta[i];
            for (std::size_t j = 0; j < al.a.rows(); ++j)
                for (std::size_t k = 0; k < al.a.cols(); ++k)
                    dinput[k] += al.a(j, k) * bt[j];
        }
        const auto& pre = t.pre[li - 1];
        const auto& post = t.post[li - 1];
        delta.assign(pre.size(), 0.0);
        for (std::size_t i = 0; i < pre.size(); ++i)
            delta[i] = dinput[i] * activate_grad(pre[i], post[i], is_tanh);
    }
    return g;
}

namespace {

std::string modules_checksum(const BackboneModel& model,
                             const std::vector<LoraModule>& fixed) {
    std::string bytes = model.weights_checksum();
    for (const auto& m : fixed)
        for (const auto& l : m.layers) {
            bytes += tensor_record_bytes(l.a);
            bytes += tensor_record_bytes(l.b);
        }
    return sha256_hex(bytes);
}

} // namespace

TrainResult train_adapter(const BackboneModel& model,
                          const std::vector<LoraModule>& fixed,
                          LoraModule init,
                          const std::vector<Example>& data,
                          const TrainingConfig& cfg,
                          SeededRng& rng,
                          LossKind loss) {
    cfg.validate();
    if (!model.frozen())
        throw StateError("train_adapter: model is not frozen");
    if (data.empty())
        throw DataError("train_adapter: no training examples");
    init.validate_against(layer_dims(model.config()));

    const std::string guard = modules_checksum(model, fixed);

    TrainResult result;
    result.adapter = std::move(init);
    LoraModule& adapter = result.adapter;
    const double lr = cfg.effective_lr();

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = 0; // global example counter, reported on divergence
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;

        std::vector<LoraLayerGrad> acc;
        std::size_t acc_examples = 0;
        std::size_t batches_in_window = 0;

        auto apply_update = [&]() {
            if (acc_examples == 0) return;
            const double scale = lr / static_cast<double>(acc_examples);
            for (std::size_t l = 0; l < adapter.layers.size(); ++l) {
                adapter.layers[l].a =
                    scale_add(1.0, adapter.layers[l].a, -scale, acc[l].da);
                adapter.layers[l].b =
                    scale_add(1.0, adapter.layers[l].b, -scale, acc[l].db);
                if (!adapter.layers[l].a.all_finite() ||
                    !adapter.layers[l].b.all_finite())
                    throw DivergenceError("train_adapter: non-finite parameters",
                                          step);
            }
            acc.clear();
            acc_examples = 0;
            batches_in_window = 0;
        };

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (std::size_t i = start; i < end; ++i, ++step) {
                LoraGradient g =
                    backward_adapter(model, fixed, adapter, data[order[i]], loss);
                if (!std::isfinite(g.loss))
                    throw DivergenceError("train_adapter: non-finite loss", step);
                epoch_loss += g.loss;
                if (acc.empty()) {
                    acc.resize(g.layers.size());
                    for (std::size_t l = 0; l < g.layers.size(); ++l) {
                        acc[l].da = Matrix(g.layers[l].da.rows(), g.layers[l].da.cols());
                        acc[l].db = Matrix(g.layers[l].db.rows(), g.layers[l].db.cols());
                    }
                }
                for (std::size_t l = 0; l < g.layers.size(); ++l) {
                    acc[l].da = scale_add(1.0, acc[l].da, 1.0, g.layers[l].da);
                    acc[l].db = scale_add(1.0, acc[l].db, 1.0, g.layers[l].db);
                }
                ++acc_examples;
            }
            if (++batches_in_window == cfg.grad_accum)
                apply_update();
        }
        apply_update(); // trailing partial accumulation window
        result.epoch_mean_loss.push_back(epoch_loss /
                                         static_cast<double>(data.size()));
    }

    if (modules_checksum(model, fixed) != guard)
        throw Error("train_adapter: frozen weights changed during training");
    return result;
}

BackboneModel materialize(const BackboneModel& base, const LoraModule& merged) {
    if (base.frozen())
        throw StateError("materialize: model is already frozen");
    merged.validate_against(layer_dims(base.config()));
    BackboneModel out = base;
    for (std::size_t l = 0; l < out.weights_.size(); ++l)
        out.weights_[l] =
            scale_add(1.0, out.weights_[l], 1.0, lora_delta(merged.layers[l]));
    out.frozen_ = true;
    return out;
}

void BackboneModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    ojson manifest;
    manifest["version"] = 1;
    manifest["config"] = {{"input_dim", cfg_.input_dim},
                          {"hidden_dims", cfg_.hidden_dims},
                          {"num_classes", cfg_.num_classes},
                          {"nonlinearity", cfg_.nonlinearity}};
    manifest["frozen"] = frozen_;
    manifest["layers"] = ojson::array();
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const std::string wn = "layer" + std::to_string(l) + "_w.mtat";
        const std::string bn = "layer" + std::to_string(l) + "_b.mtat";
        save_tensor(dir / wn, weights_[l]);
        save_tensor(dir / bn, Matrix(biases_[l].size(), 1, biases_[l]));
        manifest["layers"].push_back({{"weight", wn}, {"bias", bn}});
    }
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

BackboneModel BackboneModel::load(const std::filesystem::path& dir) {
    const ojson manifest = read_json_file(dir / "manifest.json");
    check_version(manifest, "model manifest");
    BackboneModel m;
    try {
        const auto& c = manifest.at("config");
        m.cfg_.input_dim = c.at("input_dim").get<std::size_t>();
        m.cfg_.hidden_dims = c.at("hidden_dims").get<std::vector<std::size_t>>();
        m.cfg_.num_classes = c.at("num_classes").get<std::size_t>();
        m.cfg_.nonlinearity = c.at("nonlinearity").get<std::string>();
        m.frozen_ = manifest.at("frozen").get<bool>();
        for (const auto& lay : manifest.at("layers")) {
            m.weights_.push_back(load_tensor(dir / lay.at("weight").get<std::string>()));
            Matrix b = load_tensor(dir / lay.at("bias").get<std::string>());
            if (b.cols() != 1)
                throw IntegrityError("model checkpoint: bias is not a column");
            m.biases_.push_back(b.values());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model manifest: " + std::string(e.what()));
    }
    const auto dims = layer_dims(m.cfg_);
    if (m.weights_.size() != dims.size())
        throw IntegrityError("model checkpoint: layer count disagrees with config");
    for (std::size_t l = 0; l < dims.size(); ++l)
        if (m.weights_[l].rows() != dims[l].out || m.weights_[l].cols() != dims[l].in ||
            m.biases_[l].size() != dims[l].out)
            throw IntegrityError("model checkpoint: tensor shape disagrees with config");
    return m;
}

} // namespace mta
