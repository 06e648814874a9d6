#include "camo/hfc.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "camo/errors.hpp"
#include "camo/linalg.hpp"

namespace camo::hfc {

using json = nlohmann::json;

std::vector<double> reduce_features(const nn::FeatureTrace& trace, std::size_t act_layer) {
    if (act_layer >= trace.num_activation_layers())
        throw ConfigError("reduce_features: no activation layer " + std::to_string(act_layer));
    const Tensor& act = trace.activation(act_layer);
    if (act.rank() == 1) return act.values();
    if (act.rank() != 3) throw ShapeError("reduce_features: expected rank-1 or rank-3 activation");
    const std::size_t c = act.dim(0), hw = act.dim(1) * act.dim(2);
    std::vector<double> out(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t j = 0; j < hw; ++j) out[ch] += act[ch * hw + j];
        out[ch] /= static_cast<double>(hw);
    }
    return out;
}

double HfcModel::eval(const nn::Model&, const nn::FeatureTrace& trace,
                      std::map<std::size_t, Tensor>* grads) const {
    if (act_layers.empty() || act_layers.size() != mixtures.size() ||
        act_layers.size() != lambdas.size())
        throw ConfigError("hfc: model has no fitted layers");

    double total = 0.0;
    for (std::size_t j = 0; j < act_layers.size(); ++j) {
        const std::size_t l = act_layers[j];
        if (l >= trace.num_activation_layers())
            throw ConfigError("hfc: trace lacks activation layer " + std::to_string(l));

        std::vector<double> f = reduce_features(trace, l);
        const GaussianMixture& g = mixtures[j];
        const std::size_t kp = select_component(g, f);
        const double lam = lambdas[j];
        total += 0.5 * lam * mahalanobis_sq(f, g.means[kp], g.chols[kp]);

        if (grads != nullptr) {
            // d/df of (lam/2) * maha^2 = lam * Sigma^-1 (f - mu); spread a
            // conv channel's share uniformly over its spatial positions.
            std::vector<double> mg = mahalanobis_grad(f, g.means[kp], g.chols[kp]);
            const Tensor& act = trace.activation(l);
            Tensor seed(act.shape());
            if (act.rank() == 1) {
                for (std::size_t i = 0; i < mg.size(); ++i) seed[i] = lam * mg[i];
            } else {
                const std::size_t hw = act.dim(1) * act.dim(2);
                for (std::size_t ch = 0; ch < mg.size(); ++ch) {
                    const double v = lam * mg[ch] / static_cast<double>(hw);
                    for (std::size_t i = 0; i < hw; ++i) seed[ch * hw + i] = v;
                }
            }
            auto it = grads->find(l);
            if (it == grads->end())
                grads->emplace(l, std::move(seed));
            else
                it->second += seed;
        }
    }
    return total;
}

double hfc_loss(const nn::FeatureTrace& trace, const HfcModel& hfc) {
    nn::Model unused;
    return hfc.eval(unused, trace, nullptr);
}

HfcModel fit_hfc(const nn::Model& model, const data::LabeledSet& train_set,
                 std::size_t target_class, std::size_t k, std::vector<std::size_t> act_layers,
                 const GmmConfig& cfg) {
    if (target_class >= model.num_classes()) throw ConfigError("fit_hfc: bad target class");
    if (k == 0) throw ConfigError("fit_hfc: k must be positive");

    if (act_layers.empty()) {
        for (std::size_t l = 0; l < model.num_activation_layers(); ++l) act_layers.push_back(l);
    }
    if (act_layers.empty()) throw ConfigError("fit_hfc: model has no activation layers");

    std::vector<const Tensor*> class_images;
    for (std::size_t i = 0; i < train_set.size(); ++i)
        if (train_set.labels[i] == target_class) class_images.push_back(&train_set.images[i]);

    HfcModel out;
    out.target_class = target_class;
    out.act_layers = act_layers;

    // One pass of traces, reused by every layer fit.
    std::vector<nn::FeatureTrace> traces;
    traces.reserve(class_images.size());
    for (const Tensor* img : class_images) traces.push_back(nn::forward_trace(model, *img));

    for (std::size_t l : act_layers) {
        const std::size_t d = model.activation_width(l);
        if (class_images.size() < std::max(k, d + 1))
            throw ConfigError("fit_hfc: too few class-" + std::to_string(target_class) +
                              " samples for layer " + std::to_string(l));
        Tensor feats({class_images.size(), d});
        for (std::size_t i = 0; i < traces.size(); ++i) {
            std::vector<double> f = reduce_features(traces[i], l);
            for (std::size_t j = 0; j < d; ++j) feats.at(i, j) = f[j];
        }
        out.mixtures.push_back(gmm_fit(feats, k, cfg));
        out.lambdas.push_back(1.0 / static_cast<double>(d));
    }
    return out;
}

std::string hfc_to_json(const HfcModel& hfc) {
    json j;
    j["format"] = "camolab-hfc-v1";
    j["target_class"] = hfc.target_class;
    json layers = json::array();
    for (std::size_t i = 0; i < hfc.act_layers.size(); ++i) {
        const GaussianMixture& g = hfc.mixtures[i];
        json l;
        l["act_layer"] = hfc.act_layers[i];
        l["lambda"] = hfc.lambdas[i];
        l["k"] = g.k;
        l["dim"] = g.dim;
        l["weights"] = g.weights;
        l["means"] = g.means;
        json covs = json::array();
        for (const Tensor& c : g.covariances) covs.push_back(c.values());
        l["covariances"] = std::move(covs);
        l["reg_added"] = g.reg_added;
        l["iterations"] = g.iterations;
        l["final_log_likelihood"] = g.final_log_likelihood;
        layers.push_back(std::move(l));
    }
    j["layers"] = std::move(layers);
    return j.dump(2);
}

std::shared_ptr<HfcModel> hfc_from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("format", "") != "camolab-hfc-v1") throw ConfigError("hfc file: unknown format");
    auto out = std::make_shared<HfcModel>();
    out->target_class = j.at("target_class").get<std::size_t>();
    for (const json& l : j.at("layers")) {
        out->act_layers.push_back(l.at("act_layer").get<std::size_t>());
        out->lambdas.push_back(l.at("lambda").get<double>());
        GaussianMixture g;
        g.k = l.at("k").get<std::size_t>();
        g.dim = l.at("dim").get<std::size_t>();
        g.weights = l.at("weights").get<std::vector<double>>();
        g.means = l.at("means").get<std::vector<std::vector<double>>>();
        for (const json& cv : l.at("covariances")) {
            Tensor c({g.dim, g.dim}, cv.get<std::vector<double>>());
            g.chols.push_back(cholesky(c));
            g.covariances.push_back(std::move(c));
        }
        g.reg_added = l.at("reg_added").get<double>();
        g.iterations = l.at("iterations").get<std::size_t>();
        g.final_log_likelihood = l.at("final_log_likelihood").get<double>();
        if (g.weights.size() != g.k || g.means.size() != g.k || g.covariances.size() != g.k)
            throw ConfigError("hfc file: component count mismatch");
        out->mixtures.push_back(std::move(g));
    }
    return out;
}

void save_hfc(const HfcModel& hfc, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw PreconditionError("cannot write " + path);
    f << hfc_to_json(hfc);
}

std::shared_ptr<HfcModel> load_hfc(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw PreconditionError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return hfc_from_json(ss.str());
}

} // namespace camo::hfc
