// Seven detectors that flag adversarial inputs from feature statistics.
// All scores share one orientation: higher means more adversarial.
//
// Fit inputs are plain feature banks (matrices), so the detectors know
// nothing about where features come from; trace-taking overloads do the
// reduction for callers holding a live forward pass.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "camo/linalg.hpp"
#include "camo/nn.hpp"
#include "camo/tensor.hpp"

namespace camo::detectors {

// Per-layer reduced features (channel means / dense passthrough) of a trace,
// the shared feature view for the multi-layer detectors.
std::vector<std::vector<double>> reduced_layers(const nn::FeatureTrace& trace);

// ---- KD: class-conditional Gaussian kernel density on penultimate features.
struct KdModel {
    double sigma = 0.0;
    std::vector<Tensor> banks; // per class: n_c x d
};

// sigma <= 0 picks the median within-class pairwise distance.
KdModel fit_kd(std::vector<Tensor> class_banks, double sigma = 0.0);
double score_kd(const KdModel& m, const std::vector<double>& z, std::size_t predicted_class);
double score_kd(const KdModel& m, const nn::FeatureTrace& trace);

// ---- MAHA: class means with one tied covariance, per layer, summed.
struct MahaModel {
    struct Layer {
        std::vector<std::vector<double>> means; // per class
        Tensor covariance;
        CholeskyFactor chol;
    };
    std::vector<Layer> layers;
    double reg_added = 0.0;
};

// banks[layer][class] is an n_c x d_l matrix.
MahaModel fit_maha(const std::vector<std::vector<Tensor>>& banks, double reg = 1e-6);
double score_maha(const MahaModel& m, const std::vector<std::vector<double>>& layer_feats);
double score_maha(const MahaModel& m, const nn::FeatureTrace& trace);

// ---- MGM: one full Gaussian per class on penultimate features.
struct MgmModel {
    std::vector<std::vector<double>> means;
    std::vector<Tensor> covariances;
    std::vector<CholeskyFactor> chols;
    double reg_added = 0.0;
};

MgmModel fit_mgm(const std::vector<Tensor>& class_banks, double reg = 1e-6);
double score_mgm(const MgmModel& m, const std::vector<double>& z);
double score_mgm(const MgmModel& m, const nn::FeatureTrace& trace);

// ---- LID: maximum-likelihood local intrinsic dimensionality per layer,
// fed into a logistic head trained on clean-vs-adversarial examples.
// refs: n x d reference batch; k nearest neighbours; capped at 1e6 when the
// distance spectrum degenerates.
double lid_estimate(const Tensor& refs, const std::vector<double>& v, std::size_t k);

struct LogisticHead {
    std::vector<double> w;
    double b = 0.0;
    std::vector<double> mu, sd; // feature standardization
};

double head_logit(const LogisticHead& h, const std::vector<double>& v);

struct LogisticHyper {
    std::size_t iters = 400;
    double lr = 0.5;
};

// rows: n x d feature matrix; labels 0 (clean) / 1 (adversarial).
LogisticHead fit_logistic(const Tensor& rows, const std::vector<int>& labels,
                          const LogisticHyper& hyper = {});

struct LidModel {
    std::size_t k = 20;
    std::vector<Tensor> refs; // per layer, clean reference banks
    LogisticHead head;
};

std::vector<double> lid_vector(const LidModel& m, const nn::FeatureTrace& trace);
LidModel fit_lid(std::vector<Tensor> refs_by_layer, std::size_t k,
                 const std::vector<nn::FeatureTrace>& clean,
                 const std::vector<nn::FeatureTrace>& adv, const LogisticHyper& hyper = {});
double score_lid(const LidModel& m, const nn::FeatureTrace& trace);

// ---- RBF-SVM on penultimate features, hinge loss over the kernel
// expansion, gradient-descent trained.
struct SvmModel {
    Tensor points; // n x d training features
    std::vector<double> beta;
    double bias = 0.0;
    double gamma = 0.0;
};

struct SvmHyper {
    double gamma = 0.0; // <= 0 picks 1 / (2 * median_dist^2)
    double lr = 0.05;
    double reg = 1e-3;
    std::size_t iters = 300;
};

// labels: -1 clean, +1 adversarial.
SvmModel fit_rbf_svm(const Tensor& feats, const std::vector<int>& labels,
                     const SvmHyper& hyper = {});
double score_svm(const SvmModel& m, const std::vector<double>& z);
double score_svm(const SvmModel& m, const nn::FeatureTrace& trace);
// Exposed for the kernel-property tests.
Tensor rbf_kernel_matrix(const Tensor& feats, double gamma);

// ---- DNN ensemble: one logistic head per layer, score = sum of logits.
struct DnnModel {
    std::vector<LogisticHead> heads; // per activation layer
};

DnnModel fit_dnn(const std::vector<nn::FeatureTrace>& clean,
                 const std::vector<nn::FeatureTrace>& adv, const LogisticHyper& hyper = {});
double score_dnn(const DnnModel& m, const nn::FeatureTrace& trace);

// ---- BU: Monte-Carlo-dropout variance of the predicted-class probability.
double score_bu(const nn::Model& model, const Tensor& x, std::size_t samples,
                std::uint64_t seed);
// Population variance helper (the BU statistic itself).
double variance(const std::vector<double>& v);

// ---- persistence: one JSON object per model, "kind"-tagged.
nlohmann::json kd_to_json(const KdModel& m);
KdModel kd_from_json(const nlohmann::json& j);
nlohmann::json maha_to_json(const MahaModel& m);
MahaModel maha_from_json(const nlohmann::json& j);
nlohmann::json mgm_to_json(const MgmModel& m);
MgmModel mgm_from_json(const nlohmann::json& j);
nlohmann::json lid_to_json(const LidModel& m);
LidModel lid_from_json(const nlohmann::json& j);
nlohmann::json svm_to_json(const SvmModel& m);
SvmModel svm_from_json(const nlohmann::json& j);
nlohmann::json dnn_to_json(const DnnModel& m);
DnnModel dnn_from_json(const nlohmann::json& j);

} // namespace camo::detectors
