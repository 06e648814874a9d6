#include "camo/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>

#include <json.hpp>

#include "camo/detectors.hpp"
#include "camo/errors.hpp"
#include "camo/rng.hpp"

namespace camo::attacks {

using json = nlohmann::json;

std::size_t AttackConfig::resolved_steps() const {
    if (steps != 0) return steps;
    return static_cast<std::size_t>(std::llround(2.0 * epsilon / alpha));
}

void AttackConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("attack: epsilon must be positive");
    if (!(alpha > 0.0)) throw ConfigError("attack: alpha must be positive");
    if (resolved_steps() < 1) throw ConfigError("attack: step count must be at least 1");
    if (kappa < 0.0) throw ConfigError("attack: kappa must be non-negative");
    if (addon && !std::isfinite(addon->first))
        throw ConfigError("attack: non-finite addon weight");
}

Tensor clip_ball(const Tensor& x_adv, const Tensor& x, double epsilon) {
    if (!x_adv.same_shape(x)) throw ShapeError("clip_ball: shape mismatch");
    Tensor out = x_adv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double lo = std::max(x[i] - epsilon, 0.0);
        double hi = std::min(x[i] + epsilon, 1.0);
        out[i] = std::clamp(out[i], lo, hi);
    }
    return out;
}

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

nn::LossSpec with_addon(nn::LossSpec base, const AttackConfig& cfg) {
    if (!cfg.addon) return base;
    return nn::LossSpec::composite({{1.0, std::move(base)}, {cfg.addon->first, cfg.addon->second}});
}

double cw_margin_of(const nn::FeatureTrace& trace, std::size_t target) {
    std::size_t best = target == 0 ? 1 : 0;
    for (std::size_t k = 0; k < trace.logits.size(); ++k)
        if (k != target && trace.logits[k] > trace.logits[best]) best = k;
    return trace.logits[best] - trace.logits[target];
}

// One engine for every iterative attack: T sign-gradient descent steps on J,
// projected into the epsilon-ball after each step. Deltas are measured
// against the clean image's penultimate features.
AttackResult run_iterative(const nn::Model& model, const Tensor& x, const AttackConfig& cfg,
                           const nn::LossSpec& objective, Tensor start, bool margin_early_stop) {
    const std::size_t t_max = cfg.resolved_steps();
    const bool early = margin_early_stop && !cfg.addon;

    AttackResult res;
    std::vector<double> z0 = nn::forward_trace(model, x).penultimate();
    Tensor x_t = clip_ball(start, x, cfg.epsilon);

    auto note = [&](const nn::FeatureTrace& trace) {
        if (cfg.record_deltas) {
            std::vector<double> z = trace.penultimate();
            for (std::size_t i = 0; i < z.size(); ++i) z[i] -= z0[i];
            res.deltas.push_back(std::move(z));
        }
        if (cfg.record_trajectory) res.trajectory.push_back(x_t);
    };

    bool stopped = false;
    for (std::size_t t = 0; t < t_max; ++t) {
        nn::FeatureTrace trace = nn::forward_trace(model, x_t);
        if (t > 0) note(trace);
        if (early && cw_margin_of(trace, cfg.target) <= -cfg.kappa) {
            stopped = true;
            break;
        }

        nn::LossParts parts = nn::eval_loss(model, trace, objective, true);
        nn::Gradients g = nn::backward(model, trace, parts.d_logits, parts.act_grads, false);
        for (std::size_t i = 0; i < x_t.size(); ++i)
            x_t[i] -= cfg.alpha * sign_of(g.d_input[i]);
        x_t = clip_ball(x_t, x, cfg.epsilon);
        res.iterations_used = t + 1;
    }

    // The loop top already noted the state a break landed on.
    nn::FeatureTrace final_trace = nn::forward_trace(model, x_t);
    if (res.iterations_used > 0 && !stopped) note(final_trace);
    res.x_adv = std::move(x_t);
    res.final_prediction = final_trace.predicted_class();
    res.success = res.final_prediction == cfg.target;
    res.final_objective = nn::eval_loss(model, final_trace, objective, false).value;
    return res;
}

} // namespace

AttackResult fgsm(const nn::Model& model, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    nn::LossSpec objective = with_addon(nn::LossSpec::cross_entropy_to(cfg.target), cfg);

    AttackResult res;
    Tensor g = nn::input_gradient(model, x, objective);
    Tensor x_adv = x;
    for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] -= cfg.epsilon * sign_of(g[i]);
    x_adv = clip_ball(x_adv, x, cfg.epsilon);

    std::vector<double> z0 = nn::forward_trace(model, x).penultimate();
    nn::FeatureTrace final_trace = nn::forward_trace(model, x_adv);
    if (cfg.record_deltas) {
        std::vector<double> z = final_trace.penultimate();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= z0[i];
        res.deltas.push_back(std::move(z));
    }
    res.iterations_used = 1;
    res.x_adv = std::move(x_adv);
    res.final_prediction = final_trace.predicted_class();
    res.success = res.final_prediction == cfg.target;
    res.final_objective = nn::eval_loss(model, final_trace, objective, false).value;
    return res;
}

AttackResult bim(const nn::Model& model, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    nn::LossSpec objective = with_addon(nn::LossSpec::cross_entropy_to(cfg.target), cfg);
    return run_iterative(model, x, cfg, objective, x, false);
}

AttackResult pgd(const nn::Model& model, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    if (!cfg.random_start) throw ConfigError("pgd: random_start must be set");
    Rng rng(cfg.seed);
    Tensor start = x;
    for (double& v : start.values()) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    nn::LossSpec objective = with_addon(nn::LossSpec::cross_entropy_to(cfg.target), cfg);
    return run_iterative(model, x, cfg, objective, std::move(start), false);
}

AttackResult cw_inf(const nn::Model& model, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    nn::LossSpec objective = with_addon(nn::LossSpec::cw_margin(cfg.target, cfg.kappa), cfg);
    return run_iterative(model, x, cfg, objective, x, true);
}

StressOutcome stress(const nn::Model& model, const Tensor& x, std::size_t act_layer, bool up,
                     const AttackConfig& cfg) {
    cfg.validate();
    if (act_layer >= model.num_activation_layers())
        throw ConfigError("stress: no activation layer " + std::to_string(act_layer));

    auto layer_mean = [&](const Tensor& img) {
        nn::FeatureTrace trace = nn::forward_trace(model, img);
        const Tensor& act = trace.activation(act_layer);
        double s = 0.0;
        for (double v : act.values()) s += v;
        return s / static_cast<double>(act.size());
    };

    nn::LossSpec objective = nn::LossSpec::feature_mean(act_layer, up ? -1 : +1);
    AttackConfig inner = cfg;
    inner.record_deltas = false;
    AttackResult res = run_iterative(model, x, inner, objective, x, false);

    StressOutcome out;
    out.mean_before = layer_mean(x);
    out.mean_after = layer_mean(res.x_adv);
    return out;
}

AttackResult guide_attack(const nn::Model& model, const Tensor& x, const data::LabeledSet& pool,
                          GuideMode mode, const AttackConfig& cfg) {
    cfg.validate();
    if (pool.size() == 0) throw ConfigError("guide_attack: empty guide pool");

    std::size_t pick = 0;
    if (mode == GuideMode::Random) {
        Rng rng(cfg.seed);
        pick = static_cast<std::size_t>(rng.below(pool.size()));
    } else {
        std::vector<double> z = nn::forward_trace(model, x).penultimate();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            std::vector<double> zg = nn::forward_trace(model, pool.images[i]).penultimate();
            double d2 = 0.0;
            for (std::size_t j = 0; j < z.size(); ++j) {
                double diff = z[j] - zg[j];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                pick = i;
            }
        }
    }

    auto guide = std::make_shared<nn::FeatureTrace>(nn::forward_trace(model, pool.images[pick]));
    std::vector<std::size_t> layers;
    for (std::size_t l = 0; l < guide->num_activation_layers(); ++l) layers.push_back(l);

    nn::LossSpec objective = nn::LossSpec::composite(
        {{1.0, nn::LossSpec::cross_entropy_to(cfg.target)},
         {cfg.addon_weight, nn::LossSpec::feature_match(std::move(guide), std::move(layers))}});
    return run_iterative(model, x, cfg, objective, x, false);
}

namespace {

// -log of the kernel density the KD detector assigns under the target
// class bank, as a differentiable penalty on the penultimate activation.
struct KdePenalty : nn::FeaturePenalty {
    const Tensor* bank = nullptr; // n x N, borrowed from the detector model
    double sigma = 0.0;

    double eval(const nn::Model&, const nn::FeatureTrace& trace,
                std::map<std::size_t, Tensor>* grads) const override {
        const std::size_t last = trace.num_activation_layers() - 1;
        std::vector<double> z = trace.penultimate();
        const std::size_t n = bank->dim(0), d = bank->dim(1);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        std::vector<double> expo(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = z[j] - bank->at(i, j);
                d2 += diff * diff;
            }
            expo[i] = -d2 * inv2s2;
        }
        double lse = log_sum_exp(expo);
        double log_density = lse - std::log(static_cast<double>(n)) -
                             0.5 * static_cast<double>(d) *
                                 std::log(2.0 * 3.14159265358979323846 * sigma * sigma);
        if (grads != nullptr) {
            // d(-lse)/dz = sum_i softmax_i * (z - z_i) / sigma^2
            Tensor g(trace.activation(last).shape());
            for (std::size_t i = 0; i < n; ++i) {
                double w = std::exp(expo[i] - lse);
                for (std::size_t j = 0; j < d; ++j)
                    g[j] += w * (z[j] - bank->at(i, j)) * 2.0 * inv2s2;
            }
            auto it = grads->find(last);
            if (it == grads->end())
                grads->emplace(last, std::move(g));
            else
                it->second += g;
        }
        return -log_density;
    }
    std::string name() const override { return "kde"; }
};

// The LID estimate over a fixed reference batch, with the neighbour set
// frozen per evaluation (the same treatment the mixture component gets).
struct LidPenalty : nn::FeaturePenalty {
    const Tensor* refs = nullptr; // n x N
    std::size_t k = 20;

    double eval(const nn::Model&, const nn::FeatureTrace& trace,
                std::map<std::size_t, Tensor>* grads) const override {
        const std::size_t last = trace.num_activation_layers() - 1;
        std::vector<double> z = trace.penultimate();
        const std::size_t n = refs->dim(0), d = refs->dim(1);

        std::vector<std::pair<double, std::size_t>> dist(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = z[j] - refs->at(i, j);
                d2 += diff * diff;
            }
            dist[i] = {std::sqrt(d2), i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                          dist.end());

        double rk = std::max(dist[k - 1].first, 1e-12);
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            s += std::log(std::max(dist[i].first, 1e-12) / rk);
        s /= static_cast<double>(k);
        double lid = s >= -1e-300 ? 1e6 : std::min(-1.0 / s, 1e6);

        if (grads != nullptr && lid < 1e6) {
            // lid = -1/s; dlid/dz = (1/s^2) ds/dz with
            // ds/dz = (1/k) sum_i (z - n_i)/r_i^2 - (z - n_k)/r_k^2.
            Tensor g(trace.activation(last).shape());
            std::vector<double> ds(d, 0.0);
            for (std::size_t i = 0; i < k; ++i) {
                double r2 = std::max(dist[i].first * dist[i].first, 1e-24);
                const std::size_t idx = dist[i].second;
                for (std::size_t j = 0; j < d; ++j)
                    ds[j] += (z[j] - refs->at(idx, j)) / (r2 * static_cast<double>(k));
            }
            {
                double r2 = rk * rk;
                const std::size_t idx = dist[k - 1].second;
                for (std::size_t j = 0; j < d; ++j) ds[j] -= (z[j] - refs->at(idx, j)) / r2;
            }
            for (std::size_t j = 0; j < d; ++j) g[j] = ds[j] / (s * s);
            auto it = grads->find(last);
            if (it == grads->end())
                grads->emplace(last, std::move(g));
            else
                it->second += g;
        }
        return lid;
    }
    std::string name() const override { return "lid"; }
};

} // namespace

AttackResult kde_adaptive(const nn::Model& model, const Tensor& x, const detectors::KdModel& kd,
                          const AttackConfig& cfg) {
    cfg.validate();
    if (kd.banks.size() <= cfg.target || kd.banks[cfg.target].size() == 0 || kd.sigma <= 0.0)
        throw ConfigError("kde_adaptive: detector has no bank for the target class");

    auto pen = std::make_shared<KdePenalty>();
    pen->bank = &kd.banks[cfg.target];
    pen->sigma = kd.sigma;
    nn::LossSpec objective =
        nn::LossSpec::composite({{1.0, nn::LossSpec::cross_entropy_to(cfg.target)},
                                 {cfg.addon_weight, nn::LossSpec::penalty(std::move(pen))}});
    return run_iterative(model, x, cfg, objective, x, false);
}

AttackResult lid_adaptive(const nn::Model& model, const Tensor& x, const Tensor& ref_batch,
                          const AttackConfig& cfg) {
    cfg.validate();
    if (ref_batch.rank() != 2 || ref_batch.dim(0) == 0)
        throw ConfigError("lid_adaptive: reference batch missing");
    if (cfg.lid_k < 2 || cfg.lid_k >= ref_batch.dim(0))
        throw ConfigError("lid_adaptive: need batch size > k >= 2");

    auto pen = std::make_shared<LidPenalty>();
    pen->refs = &ref_batch;
    pen->k = cfg.lid_k;
    nn::LossSpec objective =
        nn::LossSpec::composite({{1.0, nn::LossSpec::cross_entropy_to(cfg.target)},
                                 {cfg.addon_weight, nn::LossSpec::penalty(std::move(pen))}});
    return run_iterative(model, x, cfg, objective, x, false);
}

void save_attack_batch(const std::vector<AttackResult>& results,
                       const std::vector<std::uint64_t>& sample_ids, const std::string& json_path,
                       const std::string& blob_path, bool with_deltas) {
    if (results.empty()) throw PreconditionError("save_attack_batch: empty batch");
    if (results.size() != sample_ids.size())
        throw ShapeError("save_attack_batch: ids/results length mismatch");

    const std::vector<std::size_t>& shape = results.front().x_adv.shape();
    std::ofstream bin(blob_path, std::ios::binary);
    if (!bin) throw PreconditionError("cannot write " + blob_path);
    for (const AttackResult& r : results) {
        if (r.x_adv.shape() != shape) throw ShapeError("save_attack_batch: mixed shapes");
        bin.write(reinterpret_cast<const char*>(r.x_adv.data()),
                  static_cast<std::streamsize>(r.x_adv.size() * sizeof(double)));
    }
    bin.close();

    json j;
    j["format"] = "camolab-attacks-v1";
    j["count"] = results.size();
    j["image_shape"] = shape;
    j["blob_file"] = blob_path.substr(blob_path.find_last_of('/') + 1);
    j["sample_ids"] = sample_ids;
    json per = json::array();
    for (const AttackResult& r : results) {
        json e;
        e["success"] = r.success;
        e["final_prediction"] = r.final_prediction;
        e["iterations_used"] = r.iterations_used;
        e["final_objective"] = r.final_objective;
        if (with_deltas) e["deltas"] = r.deltas;
        per.push_back(std::move(e));
    }
    j["results"] = std::move(per);
    std::ofstream f(json_path);
    if (!f) throw PreconditionError("cannot write " + json_path);
    f << j.dump(2);
}

AttackBatch load_attack_batch(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw PreconditionError("cannot read " + json_path);
    json j = json::parse(f, nullptr, true);
    if (j.value("format", "") != "camolab-attacks-v1")
        throw ConfigError("attack batch: unknown format");

    const std::size_t count = j.at("count").get<std::size_t>();
    const std::vector<std::size_t> shape = j.at("image_shape").get<std::vector<std::size_t>>();
    std::size_t pixels = 1;
    for (std::size_t d : shape) pixels *= d;

    std::string dir;
    if (std::size_t slash = json_path.find_last_of('/'); slash != std::string::npos)
        dir = json_path.substr(0, slash + 1);
    std::ifstream bin(dir + j.at("blob_file").get<std::string>(), std::ios::binary);
    if (!bin) throw PreconditionError("attack batch: blob missing");

    AttackBatch out;
    out.sample_ids = j.at("sample_ids").get<std::vector<std::uint64_t>>();
    const json& per = j.at("results");
    for (std::size_t i = 0; i < count; ++i) {
        AttackResult r;
        r.x_adv = Tensor(shape);
        bin.read(reinterpret_cast<char*>(r.x_adv.data()),
                 static_cast<std::streamsize>(pixels * sizeof(double)));
        if (!bin) throw PreconditionError("attack batch: blob truncated");
        const json& e = per.at(i);
        r.success = e.at("success").get<bool>();
        r.final_prediction = e.at("final_prediction").get<std::size_t>();
        r.iterations_used = e.at("iterations_used").get<std::size_t>();
        r.final_objective = e.at("final_objective").get<double>();
        if (e.contains("deltas")) r.deltas = e.at("deltas").get<std::vector<std::vector<double>>>();
        out.results.push_back(std::move(r));
    }
    return out;
}

} // namespace camo::attacks
