// Hierarchical feature constraint: per-layer Gaussian mixtures of normal
// features for a target class, and the attack add-on loss that pulls
// adversarial features toward the most likely mixture component at every
// hidden layer.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "camo/data.hpp"
#include "camo/gmm.hpp"
#include "camo/nn.hpp"

namespace camo::hfc {

// Conv activations reduce to per-channel spatial means; dense activations
// pass through. Length equals the layer's channel/unit count.
std::vector<double> reduce_features(const nn::FeatureTrace& trace, std::size_t act_layer);

// One mixture per constrained activation layer, weighted 1/width by default.
struct HfcModel : nn::FeaturePenalty {
    std::size_t target_class = 0;
    std::vector<std::size_t> act_layers; // activation-layer positions
    std::vector<GaussianMixture> mixtures;
    std::vector<double> lambdas;

    // sum_l (lambda_l / 2) * (f_l - mu_k')^T Sigma_k'^-1 (f_l - mu_k'),
    // with k' re-picked from the current features on every call.
    double eval(const nn::Model& model, const nn::FeatureTrace& trace,
                std::map<std::size_t, Tensor>* grads) const override;
    std::string name() const override { return "hfc"; }
};

double hfc_loss(const nn::FeatureTrace& trace, const HfcModel& hfc);

// Fits one mixture per activation layer on reduced features of the
// target-class training images. Empty act_layers means all of them.
HfcModel fit_hfc(const nn::Model& model, const data::LabeledSet& train_set,
                 std::size_t target_class, std::size_t k,
                 std::vector<std::size_t> act_layers = {}, const GmmConfig& cfg = {});

std::string hfc_to_json(const HfcModel& hfc);
std::shared_ptr<HfcModel> hfc_from_json(const std::string& text);
void save_hfc(const HfcModel& hfc, const std::string& path);
std::shared_ptr<HfcModel> load_hfc(const std::string& path);

} // namespace camo::hfc
