// Micro feed-forward classifier with per-layer feature tracing, exact
// reverse-mode gradients for pluggable objectives, and plain SGD training.
//
// Conventions: classes are 0-based; "activation layers" are the post-ReLU
// outputs, indexed 0..L-1 in network order; the penultimate vector z is the
// output of the last activation layer. Dense weights are stored (in, out)
// so logits_k = sum_n W[n][k] * z_n + b_k.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "camo/rng.hpp"
#include "camo/tensor.hpp"

namespace camo::nn {

enum class LayerKind { Conv2d, Dense, Relu, Flatten, Dropout, GlobalPool };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1; // conv2d
    std::size_t in_units = 0, out_units = 0;                               // dense
    double rate = 0.0;                                                     // dropout

    static LayerSpec conv2d(std::size_t in_c, std::size_t out_c, std::size_t k,
                            std::size_t stride = 1);
    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec dropout(double rate);
    static LayerSpec global_pool();
};

struct Model {
    std::vector<std::size_t> input_shape;
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights; // empty tensor for parameterless layers
    std::vector<Tensor> biases;
    bool trained = false;
    std::uint64_t fingerprint = 0; // hash of input shape + layer specs
    std::uint64_t init_seed = 0;

    std::size_t num_classes() const;
    // Model-layer indices of the ReLU layers, in network order.
    std::vector<std::size_t> activation_layer_indices() const;
    std::size_t num_activation_layers() const { return activation_layer_indices().size(); }
    // Width of the reduced feature at activation layer l: channel count for
    // conv-shaped activations, unit count for dense ones.
    std::size_t activation_width(std::size_t act_layer) const;
    const Tensor& final_dense_weights() const;
};

struct FwdMode {
    bool mc_dropout = false;
    Rng* rng = nullptr; // required when mc_dropout is set and a dropout layer exists
};

struct FeatureTrace {
    // layer_values[i] is the tensor flowing into layer i; layer_values[L]
    // is the network output (the logits).
    std::vector<Tensor> layer_values;
    std::vector<Tensor> dropout_masks; // per layer, filled only in MC mode
    std::vector<std::size_t> act_layers; // model-layer indices of ReLU layers
    std::vector<double> logits;
    std::vector<double> probs;

    const Tensor& activation(std::size_t act_layer) const;
    std::size_t num_activation_layers() const { return act_layers.size(); }
    std::vector<double> penultimate() const; // flattened last activation
    std::size_t predicted_class() const;
};

// A differentiable penalty on traced features; the hook HFC and the
// adaptive-attack surrogates plug into. eval returns the penalty value and,
// when grads is non-null, accumulates d(value)/d(activation tensor) into
// grads[act_layer].
struct FeaturePenalty {
    virtual ~FeaturePenalty() = default;
    virtual double eval(const Model& model, const FeatureTrace& trace,
                        std::map<std::size_t, Tensor>* grads) const = 0;
    virtual std::string name() const = 0;
};

struct LossSpec {
    struct CrossEntropyTo {
        std::size_t target;
    };
    // max(l_best_other - l_target, -kappa), minimized: descent raises the
    // target logit above every other until the kappa margin is met.
    struct CwMargin {
        std::size_t target;
        double kappa;
    };
    // sign +1: J = mean(activation) (descent decreases the features);
    // sign -1: J = -mean(activation) (descent increases them).
    struct FeatureMean {
        std::size_t act_layer;
        int sign;
    };
    // Sum over layers of ||activation - guide activation||^2.
    struct FeatureMatch {
        std::shared_ptr<const FeatureTrace> guide;
        std::vector<std::size_t> act_layers;
    };
    struct Penalty {
        std::shared_ptr<const FeaturePenalty> term;
    };
    struct Composite {
        std::vector<std::pair<double, LossSpec>> items;
    };

    std::variant<CrossEntropyTo, CwMargin, FeatureMean, FeatureMatch, Penalty, Composite> node;

    static LossSpec cross_entropy_to(std::size_t target);
    static LossSpec cw_margin(std::size_t target, double kappa);
    static LossSpec feature_mean(std::size_t act_layer, int sign);
    static LossSpec feature_match(std::shared_ptr<const FeatureTrace> guide,
                                  std::vector<std::size_t> act_layers);
    static LossSpec penalty(std::shared_ptr<const FeaturePenalty> term);
    static LossSpec composite(std::vector<std::pair<double, LossSpec>> items);
};

struct LossParts {
    double value = 0.0;
    std::vector<double> d_logits;            // empty means all-zero
    std::map<std::size_t, Tensor> act_grads; // seeds on activation outputs
};

struct Gradients {
    Tensor d_input;
    std::vector<Tensor> d_weights; // aligned with model.layers; empty where no params
    std::vector<Tensor> d_biases;
    std::vector<Tensor> act_out_grads; // dJ/d(activation output), per act layer
};

Model build_model(std::vector<std::size_t> input_shape, std::vector<LayerSpec> specs, Rng& rng);

// Shift the first parametric layer's bias so a constant input at `input_mean`
// produces the same pre-activation as a zero input would. On all-positive data
// the init-time response to the shared mean dwarfs the response to anything
// class-specific, and that common-mode term is what early gradients chase;
// cancelling it at init removes the distraction without changing the family.
void offset_input_bias(Model& model, double input_mean);

FeatureTrace forward_trace(const Model& model, const Tensor& x, const FwdMode& mode = {});

LossParts eval_loss(const Model& model, const FeatureTrace& trace, const LossSpec& spec,
                    bool want_grads);

Gradients backward(const Model& model, const FeatureTrace& trace,
                   const std::vector<double>& d_logits,
                   const std::map<std::size_t, Tensor>& act_grads, bool want_weight_grads);

// d(loss)/dx, same shape as x.
Tensor input_gradient(const Model& model, const Tensor& x, const LossSpec& loss);

double loss_value(const Model& model, const Tensor& x, const LossSpec& loss);

// Reverse-mode gradient of cross-entropy-to-target (target = class 1) at the
// penultimate activation. Binary models only.
std::vector<double> penultimate_gradient(const Model& model, const Tensor& x);

// The closed form (1 - p_1) * (w_{.0} - w_{.1}) the reverse-mode result must
// reproduce on binary models.
std::vector<double> penultimate_gradient_closed_form(const Model& model, const Tensor& x);

struct TrainHyper {
    double lr = 0.05;
    std::size_t epochs = 30;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    double momentum = 0.9;
};

// Minibatch SGD with classical momentum on cross-entropy to the true label.
// Momentum matters here: the class evidence is a fraction of a gray level,
// so per-batch gradients are dominated by background variation and only the
// accumulated direction is informative. Returns the per-epoch mean
// cross-entropy and marks the model trained.
std::vector<double> train_sgd(Model& model, const std::vector<Tensor>& images,
                              const std::vector<std::size_t>& labels, const TrainHyper& hyper);

std::size_t predict(const Model& model, const Tensor& x);

// The desk default: 1x16x16 -> conv(8,3x3) -> ReLU -> conv(16,3x3,s2) -> ReLU
// -> global pool -> dense(16,8) -> ReLU -> dense(8,8) -> ReLU (= z, N=8)
// -> dropout(0.2, MC only) -> dense(8,2). Four hidden activation layers of
// widths 8, 16, 8, 8.
std::vector<LayerSpec> default_arch();
std::vector<std::size_t> default_input_shape();

// JSON round-trip, bit-exact on weights.
std::string model_to_json(const Model& model);
Model model_from_json(const std::string& text);
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

} // namespace camo::nn
