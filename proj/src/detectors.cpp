#include "camo/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "camo/errors.hpp"
#include "camo/hfc.hpp"
#include "camo/rng.hpp"

namespace camo::detectors {

using json = nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double sq_dist_row(const Tensor& m, std::size_t row, const std::vector<double>& v) {
    double s = 0.0;
    const std::size_t d = m.dim(1);
    for (std::size_t j = 0; j < d; ++j) {
        double diff = m.at(row, j) - v[j];
        s += diff * diff;
    }
    return s;
}

// Median pairwise Euclidean distance within each bank, pooled across banks.
double median_within_distance(const std::vector<Tensor>& banks) {
    std::vector<double> dists;
    for (const Tensor& b : banks) {
        const std::size_t n = b.dim(0), d = b.dim(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    double diff = b.at(i, c) - b.at(j, c);
                    s += diff * diff;
                }
                dists.push_back(std::sqrt(s));
            }
    }
    if (dists.empty()) throw ConfigError("fit_kd: banks too small for a bandwidth estimate");
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2),
                     dists.end());
    double med = dists[dists.size() / 2];
    return med > 0.0 ? med : 1.0;
}

// Escalating ridge until the factorization goes through (same policy the
// mixture fit uses). Returns total ridge added.
double ridge_factor(Tensor& cov, double reg, CholeskyFactor& out) {
    const std::size_t d = cov.dim(0);
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov.at(i, i);
    if (trace <= 0.0) trace = 1.0;
    double step = reg * trace / static_cast<double>(d);
    double added = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
        try {
            out = cholesky(cov);
            return added;
        } catch (const NotPdError&) {
            for (std::size_t i = 0; i < d; ++i) cov.at(i, i) += step;
            added += step;
            step *= 10.0;
        }
    }
    throw DegenerateDataError("detector: covariance not factorizable");
}

} // namespace

std::vector<std::vector<double>> reduced_layers(const nn::FeatureTrace& trace) {
    std::vector<std::vector<double>> out;
    for (std::size_t l = 0; l < trace.num_activation_layers(); ++l)
        out.push_back(hfc::reduce_features(trace, l));
    return out;
}

// ---- KD ----

KdModel fit_kd(std::vector<Tensor> class_banks, double sigma) {
    if (class_banks.empty()) throw ConfigError("fit_kd: no class banks");
    for (const Tensor& b : class_banks)
        if (b.rank() != 2 || b.dim(0) == 0) throw ConfigError("fit_kd: empty class bank");
    KdModel m;
    m.sigma = sigma > 0.0 ? sigma : median_within_distance(class_banks);
    m.banks = std::move(class_banks);
    return m;
}

double score_kd(const KdModel& m, const std::vector<double>& z, std::size_t predicted_class) {
    if (predicted_class >= m.banks.size()) throw ConfigError("score_kd: class out of range");
    const Tensor& bank = m.banks[predicted_class];
    const std::size_t n = bank.dim(0), d = bank.dim(1);
    if (z.size() != d) throw ShapeError("score_kd: feature width mismatch");

    const double inv2s2 = 1.0 / (2.0 * m.sigma * m.sigma);
    std::vector<double> expo(n);
    for (std::size_t i = 0; i < n; ++i) expo[i] = -sq_dist_row(bank, i, z) * inv2s2;
    double log_density = log_sum_exp(expo) - std::log(static_cast<double>(n)) -
                         0.5 * static_cast<double>(d) * std::log(2.0 * M_PI * m.sigma * m.sigma);
    return -log_density;
}

double score_kd(const KdModel& m, const nn::FeatureTrace& trace) {
    return score_kd(m, trace.penultimate(), trace.predicted_class());
}

// ---- MAHA ----

MahaModel fit_maha(const std::vector<std::vector<Tensor>>& banks, double reg) {
    if (banks.empty()) throw ConfigError("fit_maha: no layers");
    MahaModel m;
    for (const std::vector<Tensor>& layer_banks : banks) {
        if (layer_banks.empty()) throw ConfigError("fit_maha: layer without class banks");
        const std::size_t d = layer_banks.front().dim(1);
        MahaModel::Layer layer;
        layer.covariance = Tensor({d, d});
        std::size_t total = 0;

        for (const Tensor& bank : layer_banks) {
            if (bank.rank() != 2 || bank.dim(1) != d)
                throw ShapeError("fit_maha: inconsistent bank widths");
            if (bank.dim(0) == 0) throw ConfigError("fit_maha: empty class bank");
            layer.means.push_back(column_mean(bank));
            total += bank.dim(0);
        }
        // tied covariance: class-centered scatter pooled over classes
        for (std::size_t c = 0; c < layer_banks.size(); ++c) {
            const Tensor& bank = layer_banks[c];
            const std::vector<double>& mu = layer.means[c];
            for (std::size_t i = 0; i < bank.dim(0); ++i)
                for (std::size_t a = 0; a < d; ++a) {
                    double da = bank.at(i, a) - mu[a];
                    for (std::size_t b = 0; b <= a; ++b)
                        layer.covariance.at(a, b) += da * (bank.at(i, b) - mu[b]);
                }
        }
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b <= a; ++b) {
                layer.covariance.at(a, b) /= static_cast<double>(total);
                layer.covariance.at(b, a) = layer.covariance.at(a, b);
            }
        m.reg_added += ridge_factor(layer.covariance, reg, layer.chol);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

double score_maha(const MahaModel& m, const std::vector<std::vector<double>>& layer_feats) {
    if (layer_feats.size() != m.layers.size())
        throw ShapeError("score_maha: layer count mismatch");
    double total = 0.0;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const MahaModel::Layer& layer = m.layers[l];
        double best = std::numeric_limits<double>::infinity();
        for (const std::vector<double>& mu : layer.means)
            best = std::min(best, mahalanobis_sq(layer_feats[l], mu, layer.chol));
        total += best;
    }
    return total;
}

double score_maha(const MahaModel& m, const nn::FeatureTrace& trace) {
    return score_maha(m, reduced_layers(trace));
}

// ---- MGM ----

MgmModel fit_mgm(const std::vector<Tensor>& class_banks, double reg) {
    if (class_banks.empty()) throw ConfigError("fit_mgm: no class banks");
    MgmModel m;
    for (const Tensor& bank : class_banks) {
        if (bank.rank() != 2 || bank.dim(0) == 0) throw ConfigError("fit_mgm: empty class bank");
        std::vector<double> mu = column_mean(bank);
        Tensor cov = covariance(bank, mu);
        CholeskyFactor chol;
        m.reg_added += ridge_factor(cov, reg, chol);
        m.means.push_back(std::move(mu));
        m.covariances.push_back(std::move(cov));
        m.chols.push_back(std::move(chol));
    }
    return m;
}

double score_mgm(const MgmModel& m, const std::vector<double>& z) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m.means.size(); ++c) {
        double logn = -0.5 * (static_cast<double>(z.size()) * kLog2Pi +
                              m.chols[c].log_det_source() +
                              mahalanobis_sq(z, m.means[c], m.chols[c]));
        best = std::max(best, logn);
    }
    return -best;
}

double score_mgm(const MgmModel& m, const nn::FeatureTrace& trace) {
    return score_mgm(m, trace.penultimate());
}

// ---- LID ----

double lid_estimate(const Tensor& refs, const std::vector<double>& v, std::size_t k) {
    if (refs.rank() != 2) throw ShapeError("lid_estimate: refs must be n x d");
    if (k < 2) throw ConfigError("lid_estimate: k must be at least 2");
    if (k >= refs.dim(0)) throw ConfigError("lid_estimate: need batch size > k");
    if (v.size() != refs.dim(1)) throw ShapeError("lid_estimate: width mismatch");

    const std::size_t n = refs.dim(0);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::sqrt(sq_dist_row(refs, i, v));
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    double rk = std::max(dist[k - 1], 1e-12);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += std::log(std::max(dist[i], 1e-12) / rk);
    s /= static_cast<double>(k);
    if (s >= -1e-300) return 1e6; // all neighbours at one radius
    return std::min(-1.0 / s, 1e6);
}

double head_logit(const LogisticHead& h, const std::vector<double>& v) {
    if (v.size() != h.w.size()) throw ShapeError("head_logit: width mismatch");
    double z = h.b;
    for (std::size_t i = 0; i < v.size(); ++i) z += h.w[i] * (v[i] - h.mu[i]) / h.sd[i];
    return z;
}

LogisticHead fit_logistic(const Tensor& rows, const std::vector<int>& labels,
                          const LogisticHyper& hyper) {
    if (rows.rank() != 2 || rows.dim(0) == 0) throw ConfigError("fit_logistic: empty rows");
    if (rows.dim(0) != labels.size()) throw ShapeError("fit_logistic: labels length mismatch");
    const std::size_t n = rows.dim(0), d = rows.dim(1);

    LogisticHead h;
    h.mu = column_mean(rows);
    h.sd.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double diff = rows.at(i, j) - h.mu[j];
            h.sd[j] += diff * diff;
        }
    for (double& s : h.sd) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-9);
    h.w.assign(d, 0.0);

    std::vector<double> row(d);
    for (std::size_t it = 0; it < hyper.iters; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) row[j] = rows.at(i, j);
            double p = 1.0 / (1.0 + std::exp(-head_logit(h, row)));
            double err = p - static_cast<double>(labels[i]);
            for (std::size_t j = 0; j < d; ++j) gw[j] += err * (row[j] - h.mu[j]) / h.sd[j];
            gb += err;
        }
        const double scale = hyper.lr / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) h.w[j] -= scale * gw[j];
        h.b -= scale * gb;
    }
    return h;
}

std::vector<double> lid_vector(const LidModel& m, const nn::FeatureTrace& trace) {
    std::vector<std::vector<double>> feats = reduced_layers(trace);
    if (feats.size() != m.refs.size()) throw ShapeError("lid_vector: layer count mismatch");
    std::vector<double> out(feats.size());
    for (std::size_t l = 0; l < feats.size(); ++l)
        out[l] = lid_estimate(m.refs[l], feats[l], m.k);
    return out;
}

LidModel fit_lid(std::vector<Tensor> refs_by_layer, std::size_t k,
                 const std::vector<nn::FeatureTrace>& clean,
                 const std::vector<nn::FeatureTrace>& adv, const LogisticHyper& hyper) {
    if (refs_by_layer.empty()) throw ConfigError("fit_lid: no reference banks");
    if (clean.empty() || adv.empty()) throw ConfigError("fit_lid: need clean and adversarial rows");
    for (const Tensor& r : refs_by_layer)
        if (k < 2 || k >= r.dim(0)) throw ConfigError("fit_lid: need batch size > k >= 2");

    LidModel m;
    m.k = k;
    m.refs = std::move(refs_by_layer);

    const std::size_t n = clean.size() + adv.size();
    Tensor rows({n, m.refs.size()});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        std::vector<double> v = lid_vector(m, clean[i]);
        for (std::size_t j = 0; j < v.size(); ++j) rows.at(i, j) = v[j];
        labels[i] = 0;
    }
    for (std::size_t i = 0; i < adv.size(); ++i) {
        std::vector<double> v = lid_vector(m, adv[i]);
        for (std::size_t j = 0; j < v.size(); ++j) rows.at(clean.size() + i, j) = v[j];
        labels[clean.size() + i] = 1;
    }
    m.head = fit_logistic(rows, labels, hyper);
    return m;
}

double score_lid(const LidModel& m, const nn::FeatureTrace& trace) {
    return head_logit(m.head, lid_vector(m, trace));
}

// ---- RBF-SVM ----

Tensor rbf_kernel_matrix(const Tensor& feats, double gamma) {
    const std::size_t n = feats.dim(0), d = feats.dim(1);
    Tensor k({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        k.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = feats.at(i, c) - feats.at(j, c);
                s += diff * diff;
            }
            k.at(i, j) = k.at(j, i) = std::exp(-gamma * s);
        }
    }
    return k;
}

SvmModel fit_rbf_svm(const Tensor& feats, const std::vector<int>& labels,
                     const SvmHyper& hyper) {
    if (feats.rank() != 2 || feats.dim(0) == 0) throw ConfigError("fit_rbf_svm: empty features");
    if (feats.dim(0) != labels.size()) throw ShapeError("fit_rbf_svm: labels length mismatch");
    for (int y : labels)
        if (y != -1 && y != 1) throw ConfigError("fit_rbf_svm: labels must be -1/+1");

    SvmModel m;
    m.points = feats;
    m.gamma = hyper.gamma;
    if (m.gamma <= 0.0) {
        double med = median_within_distance({feats});
        m.gamma = 1.0 / (2.0 * med * med);
    }

    const std::size_t n = feats.dim(0);
    Tensor k = rbf_kernel_matrix(feats, m.gamma);
    m.beta.assign(n, 0.0);

    // hinge loss over the kernel expansion f_i = sum_j beta_j K_ij + b,
    // with an RKHS-norm penalty (reg/2) beta' K beta.
    std::vector<double> f(n);
    for (std::size_t it = 0; it < hyper.iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = m.bias;
            for (std::size_t j = 0; j < n; ++j) s += m.beta[j] * k.at(i, j);
            f[i] = s;
        }
        std::vector<double> gbeta(n, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<double>(labels[i]) * f[i] < 1.0) {
                for (std::size_t j = 0; j < n; ++j)
                    gbeta[j] -= static_cast<double>(labels[i]) * k.at(i, j);
                gb -= static_cast<double>(labels[i]);
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            double kreg = 0.0;
            for (std::size_t i = 0; i < n; ++i) kreg += k.at(j, i) * m.beta[i];
            gbeta[j] = gbeta[j] / static_cast<double>(n) + hyper.reg * kreg;
        }
        gb /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) m.beta[j] -= hyper.lr * gbeta[j];
        m.bias -= hyper.lr * gb;
    }
    return m;
}

double score_svm(const SvmModel& m, const std::vector<double>& z) {
    const std::size_t n = m.points.dim(0);
    if (z.size() != m.points.dim(1)) throw ShapeError("score_svm: width mismatch");
    double s = m.bias;
    for (std::size_t i = 0; i < n; ++i)
        s += m.beta[i] * std::exp(-m.gamma * sq_dist_row(m.points, i, z));
    return s;
}

double score_svm(const SvmModel& m, const nn::FeatureTrace& trace) {
    return score_svm(m, trace.penultimate());
}

// ---- DNN ensemble ----

DnnModel fit_dnn(const std::vector<nn::FeatureTrace>& clean,
                 const std::vector<nn::FeatureTrace>& adv, const LogisticHyper& hyper) {
    if (clean.empty() || adv.empty()) throw ConfigError("fit_dnn: need clean and adversarial rows");
    const std::size_t layers = clean.front().num_activation_layers();

    DnnModel m;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t d = hfc::reduce_features(clean.front(), l).size();
        Tensor rows({clean.size() + adv.size(), d});
        std::vector<int> labels(rows.dim(0));
        for (std::size_t i = 0; i < clean.size(); ++i) {
            std::vector<double> v = hfc::reduce_features(clean[i], l);
            for (std::size_t j = 0; j < d; ++j) rows.at(i, j) = v[j];
            labels[i] = 0;
        }
        for (std::size_t i = 0; i < adv.size(); ++i) {
            std::vector<double> v = hfc::reduce_features(adv[i], l);
            for (std::size_t j = 0; j < d; ++j) rows.at(clean.size() + i, j) = v[j];
            labels[clean.size() + i] = 1;
        }
        m.heads.push_back(fit_logistic(rows, labels, hyper));
    }
    return m;
}

double score_dnn(const DnnModel& m, const nn::FeatureTrace& trace) {
    if (m.heads.size() != trace.num_activation_layers())
        throw ShapeError("score_dnn: layer count mismatch");
    double s = 0.0;
    for (std::size_t l = 0; l < m.heads.size(); ++l)
        s += head_logit(m.heads[l], hfc::reduce_features(trace, l));
    return s;
}

// ---- BU ----

double variance(const std::vector<double>& v) {
    if (v.empty()) throw ConfigError("variance: empty sample");
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size());
}

double score_bu(const nn::Model& model, const Tensor& x, std::size_t samples,
                std::uint64_t seed) {
    if (samples < 2) throw ConfigError("score_bu: need at least 2 samples");
    bool has_dropout = false;
    for (const nn::LayerSpec& s : model.layers)
        if (s.kind == nn::LayerKind::Dropout) has_dropout = true;
    if (!has_dropout) throw ConfigError("score_bu: model has no dropout layer");

    const std::size_t cls = nn::forward_trace(model, x).predicted_class();
    Rng base(seed);
    std::vector<double> probs(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        Rng pass = base.derive(s);
        nn::FwdMode mode{true, &pass};
        probs[s] = nn::forward_trace(model, x, mode).probs[cls];
    }
    return variance(probs);
}

// ---- persistence ----

namespace {

json chol_free_matrix(const Tensor& t) { return json(t.values()); }

Tensor matrix_from(const json& j, std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols}, j.get<std::vector<double>>());
}

json head_to_json(const LogisticHead& h) {
    return json{{"w", h.w}, {"b", h.b}, {"mu", h.mu}, {"sd", h.sd}};
}

LogisticHead head_from_json(const json& j) {
    LogisticHead h;
    h.w = j.at("w").get<std::vector<double>>();
    h.b = j.at("b").get<double>();
    h.mu = j.at("mu").get<std::vector<double>>();
    h.sd = j.at("sd").get<std::vector<double>>();
    return h;
}

} // namespace

json kd_to_json(const KdModel& m) {
    json banks = json::array();
    for (const Tensor& b : m.banks)
        banks.push_back(json{{"n", b.dim(0)}, {"d", b.dim(1)}, {"rows", b.values()}});
    return json{{"kind", "kd"}, {"sigma", m.sigma}, {"banks", std::move(banks)}};
}

KdModel kd_from_json(const json& j) {
    if (j.value("kind", "") != "kd") throw ConfigError("detector json: expected kind kd");
    KdModel m;
    m.sigma = j.at("sigma").get<double>();
    for (const json& b : j.at("banks"))
        m.banks.push_back(
            matrix_from(b.at("rows"), b.at("n").get<std::size_t>(), b.at("d").get<std::size_t>()));
    return m;
}

json maha_to_json(const MahaModel& m) {
    json layers = json::array();
    for (const MahaModel::Layer& l : m.layers)
        layers.push_back(json{{"means", l.means},
                              {"d", l.covariance.dim(0)},
                              {"covariance", chol_free_matrix(l.covariance)}});
    return json{{"kind", "maha"}, {"reg_added", m.reg_added}, {"layers", std::move(layers)}};
}

MahaModel maha_from_json(const json& j) {
    if (j.value("kind", "") != "maha") throw ConfigError("detector json: expected kind maha");
    MahaModel m;
    m.reg_added = j.at("reg_added").get<double>();
    for (const json& l : j.at("layers")) {
        MahaModel::Layer layer;
        layer.means = l.at("means").get<std::vector<std::vector<double>>>();
        const std::size_t d = l.at("d").get<std::size_t>();
        layer.covariance = matrix_from(l.at("covariance"), d, d);
        layer.chol = cholesky(layer.covariance);
        m.layers.push_back(std::move(layer));
    }
    return m;
}

json mgm_to_json(const MgmModel& m) {
    json comps = json::array();
    for (std::size_t c = 0; c < m.means.size(); ++c)
        comps.push_back(json{{"mean", m.means[c]},
                             {"d", m.covariances[c].dim(0)},
                             {"covariance", chol_free_matrix(m.covariances[c])}});
    return json{{"kind", "mgm"}, {"reg_added", m.reg_added}, {"classes", std::move(comps)}};
}

MgmModel mgm_from_json(const json& j) {
    if (j.value("kind", "") != "mgm") throw ConfigError("detector json: expected kind mgm");
    MgmModel m;
    m.reg_added = j.at("reg_added").get<double>();
    for (const json& c : j.at("classes")) {
        m.means.push_back(c.at("mean").get<std::vector<double>>());
        const std::size_t d = c.at("d").get<std::size_t>();
        Tensor cov = matrix_from(c.at("covariance"), d, d);
        m.chols.push_back(cholesky(cov));
        m.covariances.push_back(std::move(cov));
    }
    return m;
}

json lid_to_json(const LidModel& m) {
    json refs = json::array();
    for (const Tensor& r : m.refs)
        refs.push_back(json{{"n", r.dim(0)}, {"d", r.dim(1)}, {"rows", r.values()}});
    return json{{"kind", "lid"}, {"k", m.k}, {"refs", std::move(refs)},
                {"head", head_to_json(m.head)}};
}

LidModel lid_from_json(const json& j) {
    if (j.value("kind", "") != "lid") throw ConfigError("detector json: expected kind lid");
    LidModel m;
    m.k = j.at("k").get<std::size_t>();
    for (const json& r : j.at("refs"))
        m.refs.push_back(
            matrix_from(r.at("rows"), r.at("n").get<std::size_t>(), r.at("d").get<std::size_t>()));
    m.head = head_from_json(j.at("head"));
    return m;
}

json svm_to_json(const SvmModel& m) {
    return json{{"kind", "svm"},
                {"n", m.points.dim(0)},
                {"d", m.points.dim(1)},
                {"points", m.points.values()},
                {"beta", m.beta},
                {"bias", m.bias},
                {"gamma", m.gamma}};
}

SvmModel svm_from_json(const json& j) {
    if (j.value("kind", "") != "svm") throw ConfigError("detector json: expected kind svm");
    SvmModel m;
    m.points = matrix_from(j.at("points"), j.at("n").get<std::size_t>(),
                           j.at("d").get<std::size_t>());
    m.beta = j.at("beta").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.gamma = j.at("gamma").get<double>();
    return m;
}

json dnn_to_json(const DnnModel& m) {
    json heads = json::array();
    for (const LogisticHead& h : m.heads) heads.push_back(head_to_json(h));
    return json{{"kind", "dnn"}, {"heads", std::move(heads)}};
}

DnnModel dnn_from_json(const json& j) {
    if (j.value("kind", "") != "dnn") throw ConfigError("detector json: expected kind dnn");
    DnnModel m;
    for (const json& h : j.at("heads")) m.heads.push_back(head_from_json(h));
    return m;
}

} // namespace camo::detectors
