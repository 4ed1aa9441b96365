#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mta/adapters.hpp"
#include "mta/tensor.hpp"

namespace mta {

enum class TaskKind { classification, rating, generation };

TaskKind task_from_string(const std::string& s);
std::string to_string(TaskKind t);

struct BackboneConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    std::string nonlinearity = "tanh"; // "tanh" or "relu"

    void validate() const;
};

// per-layer (in, out) shapes implied by a config: hidden stack plus the head
std::vector<LayerDims> layer_dims(const BackboneConfig& cfg);

struct Example {
    std::vector<double> features;
    double target = 0.0; // class index or scalar rating, task dependent
};

// Small affine stack with a nonlinearity between layers and a linear head.
// Base weights are set once at creation and never trained; all learning in
// the pipeline happens in adapter factors attached on top.
class BackboneModel {
public:
    static BackboneModel create(const BackboneConfig& cfg, SeededRng& rng);

    const BackboneConfig& config() const noexcept { return cfg_; }
    std::size_t layer_count() const noexcept { return weights_.size(); }
    const Matrix& weight(std::size_t l) const;
    const std::vector<double>& bias(std::size_t l) const;

    bool frozen() const noexcept { return frozen_; }
    BackboneModel frozen_copy() const;

    // canonical serialization of all weights and biases, for freeze checks
    std::string weights_checksum() const;

    // checkpoint directory: manifest.json plus one tensor record per matrix
    void save(const std::filesystem::path& dir) const;
    static BackboneModel load(const std::filesystem::path& dir);

private:
    friend BackboneModel materialize(const BackboneModel&, const LoraModule&);

    BackboneConfig cfg_;
    std::vector<Matrix> weights_;
    std::vector<std::vector<double>> biases_;
    bool frozen_ = false;
};

// logits (or the scalar head) for one input: per layer
// h = w*x + b + sum over adapters of b_ad*(a_ad*x)
std::vector<double> forward(const BackboneModel& model,
                            const std::vector<LoraModule>& adapters,
                            const std::vector<double>& x);

// softmax cross-entropy via the log-sum-exp trick; target is a class index
double cross_entropy_loss(const std::vector<double>& logits, std::size_t target);

// squared error on the first output entry, for scalar-head tasks
double squared_error_loss(const std::vector<double>& output, double target);

enum class LossKind { cross_entropy, squared_error };
LossKind loss_for(TaskKind t);

struct TrainingConfig {
    std::size_t rank = 4;
    std::size_t epochs = 2;
    double lr = 5e-5;
    std::size_t batch_size = 2;
    std::size_t grad_accum = 4;
    // the lr above is kept at reference scale; desk-scale runs raise the
    // effective rate through this explicit multiplier
    double lr_scale = 1.0;

    double effective_lr() const noexcept { return lr * lr_scale; }
    void validate() const;
};

struct LoraLayerGrad {
    Matrix da;
    Matrix db;
};

struct LoraGradient {
    std::vector<LoraLayerGrad> layers;
    double loss = 0.0;
};

// Analytic gradient of the per-example loss with respect to the trainable
// module only. Base weights and the fixed modules shape the activations and
// the backpropagated signal but receive no gradient entries. The model must
// be frozen; training against an unfrozen base is a pipeline bug.
LoraGradient backward_adapter(const BackboneModel& model,
                              const std::vector<LoraModule>& fixed,
                              const LoraModule& trainable,
                              const Example& example,
                              LossKind loss);

struct TrainResult {
    LoraModule adapter;
    std::vector<double> epoch_mean_loss;
};

// Minibatch SGD with gradient accumulation: one seeded shuffle per epoch,
// batches of batch_size, one update per grad_accum batches (trailing partial
// windows still update) at effective_lr on the mean gradient. Non-finite
// loss raises DivergenceError with the failing step index. epochs == 0
// returns init unchanged. Verifies the base and fixed modules are bit
// identical before and after (checksum).
TrainResult train_adapter(const BackboneModel& model,
                          const std::vector<LoraModule>& fixed,
                          LoraModule init,
                          const std::vector<Example>& data,
                          const TrainingConfig& cfg,
                          SeededRng& rng,
                          LossKind loss);

} // namespace mta
