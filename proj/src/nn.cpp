#include "camo/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "camo/errors.hpp"
#include "camo/hashing.hpp"
#include "camo/linalg.hpp"

namespace camo::nn {

using json = nlohmann::json;

LayerSpec LayerSpec::conv2d(std::size_t in_c, std::size_t out_c, std::size_t k,
                            std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel = k;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_units = in;
    s.out_units = out;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::global_pool() {
    LayerSpec s;
    s.kind = LayerKind::GlobalPool;
    return s;
}

namespace {

std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::vector<std::size_t> layer_output_shape(const LayerSpec& s,
                                            const std::vector<std::size_t>& in) {
    switch (s.kind) {
        case LayerKind::Conv2d: {
            if (in.size() != 3) throw ShapeError("conv2d: rank-3 input required");
            if (in[0] != s.in_channels) throw ShapeError("conv2d: channel count mismatch");
            if (in[1] < s.kernel || in[2] < s.kernel)
                throw ShapeError("conv2d: input smaller than kernel");
            if (s.stride == 0) throw ShapeError("conv2d: zero stride");
            std::size_t oh = (in[1] - s.kernel) / s.stride + 1;
            std::size_t ow = (in[2] - s.kernel) / s.stride + 1;
            return {s.out_channels, oh, ow};
        }
        case LayerKind::Dense:
            if (in.size() != 1 || in[0] != s.in_units)
                throw ShapeError("dense: expected rank-1 input of length " +
                                 std::to_string(s.in_units));
            return {s.out_units};
        case LayerKind::Relu:
        case LayerKind::Dropout:
            return in;
        case LayerKind::Flatten:
            return {numel(in)};
        case LayerKind::GlobalPool:
            if (in.size() != 3) throw ShapeError("global_pool: rank-3 input required");
            return {in[0]};
    }
    throw ShapeError("unknown layer kind");
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::GlobalPool: return "global_pool";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& s) {
    if (s == "conv2d") return LayerKind::Conv2d;
    if (s == "dense") return LayerKind::Dense;
    if (s == "relu") return LayerKind::Relu;
    if (s == "flatten") return LayerKind::Flatten;
    if (s == "dropout") return LayerKind::Dropout;
    if (s == "global_pool") return LayerKind::GlobalPool;
    throw ConfigError("unknown layer kind: " + s);
}

std::uint64_t arch_fingerprint(const std::vector<std::size_t>& input_shape,
                               const std::vector<LayerSpec>& specs) {
    std::ostringstream os;
    os << "in";
    for (std::size_t d : input_shape) os << ':' << d;
    for (const LayerSpec& s : specs) {
        os << '|' << kind_name(s.kind) << ':' << s.in_channels << ':' << s.out_channels << ':'
           << s.kernel << ':' << s.stride << ':' << s.in_units << ':' << s.out_units << ':'
           << s.rate;
    }
    return fnv1a64(os.str());
}

} // namespace

std::size_t Model::num_classes() const {
    if (layers.empty() || layers.back().kind != LayerKind::Dense)
        throw ShapeError("model: final layer must be dense");
    return layers.back().out_units;
}

std::vector<std::size_t> Model::activation_layer_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kind == LayerKind::Relu) idx.push_back(i);
    return idx;
}

std::size_t Model::activation_width(std::size_t act_layer) const {
    std::vector<std::size_t> shape = input_shape;
    std::size_t seen = 0;
    for (const LayerSpec& s : layers) {
        shape = layer_output_shape(s, shape);
        if (s.kind == LayerKind::Relu) {
            if (seen == act_layer) return shape[0]; // channels for rank-3, units for rank-1
            ++seen;
        }
    }
    throw ConfigError("activation_width: no such activation layer");
}

const Tensor& Model::final_dense_weights() const {
    if (layers.empty() || layers.back().kind != LayerKind::Dense)
        throw ShapeError("model: final layer must be dense");
    return weights.back();
}

Model build_model(std::vector<std::size_t> input_shape, std::vector<LayerSpec> specs, Rng& rng) {
    if (specs.empty()) throw ShapeError("build_model: empty spec list");
    if (input_shape.empty()) throw ShapeError("build_model: empty input shape");

    // Validate the whole chain before allocating anything.
    std::vector<std::size_t> shape = input_shape;
    for (const LayerSpec& s : specs) shape = layer_output_shape(s, shape);
    if (specs.back().kind != LayerKind::Dense)
        throw ShapeError("build_model: final layer must be dense");
    for (const LayerSpec& s : specs)
        if (s.kind == LayerKind::Dropout && (s.rate < 0.0 || s.rate >= 1.0))
            throw ConfigError("build_model: dropout rate must be in [0, 1)");

    Model m;
    m.input_shape = input_shape;
    m.layers = specs;
    m.fingerprint = arch_fingerprint(input_shape, specs);
    m.init_seed = rng.seed();
    m.weights.resize(specs.size());
    m.biases.resize(specs.size());

    // He-style uniform init, scaled by fan-in. Hidden biases start slightly
    // positive: every layer in this family sees non-negative inputs (pixels,
    // rectified activations), so a unit whose weights sum negative is silent
    // on the whole input distribution and never recovers. The head keeps zero
    // biases for symmetric logits, and its weights start near zero so the
    // first epochs align the head to the init-time features before sizeable
    // gradients reach the hidden layers — random early kicks are what push
    // entire rectified layers silent for good.
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        const bool head = i + 1 == specs.size();
        const double bias0 = head ? 0.0 : 0.05;
        const double scale = head ? 0.01 : 1.0;
        if (s.kind == LayerKind::Conv2d) {
            double limit = scale * std::sqrt(6.0 / static_cast<double>(s.in_channels * s.kernel * s.kernel));
            Tensor w({s.out_channels, s.in_channels, s.kernel, s.kernel});
            for (double& v : w.values()) v = rng.uniform(-limit, limit);
            m.weights[i] = std::move(w);
            m.biases[i] = Tensor({s.out_channels}, bias0);
        } else if (s.kind == LayerKind::Dense) {
            double limit = scale * std::sqrt(6.0 / static_cast<double>(s.in_units));
            Tensor w({s.in_units, s.out_units});
            for (double& v : w.values()) v = rng.uniform(-limit, limit);
            m.weights[i] = std::move(w);
            m.biases[i] = Tensor({s.out_units}, bias0);
        }
    }
    return m;
}

void offset_input_bias(Model& model, double input_mean) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& s = model.layers[i];
        if (s.kind == LayerKind::Conv2d) {
            const std::size_t per = s.in_channels * s.kernel * s.kernel;
            for (std::size_t o = 0; o < s.out_channels; ++o) {
                double sum = 0.0;
                for (std::size_t j = 0; j < per; ++j) sum += model.weights[i][o * per + j];
                model.biases[i][o] -= input_mean * sum;
            }
            return;
        }
        if (s.kind == LayerKind::Dense) {
            for (std::size_t o = 0; o < s.out_units; ++o) {
                double sum = 0.0;
                for (std::size_t n = 0; n < s.in_units; ++n)
                    sum += model.weights[i][n * s.out_units + o];
                model.biases[i][o] -= input_mean * sum;
            }
            return;
        }
    }
    throw ShapeError("offset_input_bias: model has no parametric layer");
}

namespace {

Tensor conv_forward(const LayerSpec& s, const Tensor& in, const Tensor& w, const Tensor& b) {
    const std::size_t ic = s.in_channels, oc = s.out_channels, k = s.kernel, st = s.stride;
    const std::size_t ih = in.dim(1), iw = in.dim(2);
    const std::size_t oh = (ih - k) / st + 1, ow = (iw - k) / st + 1;
    Tensor out({oc, oh, ow});
    for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double acc = b[o];
                for (std::size_t c = 0; c < ic; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx)
                            acc += w[((o * ic + c) * k + ky) * k + kx] *
                                   in.at(c, y * st + ky, x * st + kx);
                out.at(o, y, x) = acc;
            }
        }
    }
    return out;
}

Tensor dense_forward(const LayerSpec& s, const Tensor& in, const Tensor& w, const Tensor& b) {
    Tensor out({s.out_units});
    for (std::size_t n = 0; n < s.in_units; ++n) {
        const double v = in[n];
        if (v == 0.0) continue;
        for (std::size_t kk = 0; kk < s.out_units; ++kk) out[kk] += w[n * s.out_units + kk] * v;
    }
    for (std::size_t kk = 0; kk < s.out_units; ++kk) out[kk] += b[kk];
    return out;
}

} // namespace

FeatureTrace forward_trace(const Model& model, const Tensor& x, const FwdMode& mode) {
    if (x.shape() != model.input_shape) throw ShapeError("forward_trace: input shape mismatch");

    FeatureTrace tr;
    tr.act_layers = model.activation_layer_indices();
    tr.layer_values.reserve(model.layers.size() + 1);
    tr.dropout_masks.resize(model.layers.size());
    tr.layer_values.push_back(x);

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& s = model.layers[i];
        const Tensor& in = tr.layer_values.back();
        Tensor out;
        switch (s.kind) {
            case LayerKind::Conv2d:
                out = conv_forward(s, in, model.weights[i], model.biases[i]);
                break;
            case LayerKind::Dense:
                out = dense_forward(s, in, model.weights[i], model.biases[i]);
                break;
            case LayerKind::Relu: {
                out = in;
                for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::Flatten:
                out = in.reshaped({in.size()});
                break;
            case LayerKind::Dropout: {
                if (mode.mc_dropout && s.rate > 0.0) {
                    if (mode.rng == nullptr)
                        throw ConfigError("forward_trace: MC dropout needs an rng");
                    const double keep = 1.0 - s.rate;
                    Tensor mask(in.shape());
                    for (double& v : mask.values())
                        v = mode.rng->uniform01() < keep ? 1.0 / keep : 0.0;
                    out = in;
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= mask[j];
                    tr.dropout_masks[i] = std::move(mask);
                } else {
                    out = in; // inference mode: identity
                }
                break;
            }
            case LayerKind::GlobalPool: {
                const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
                out = Tensor({c});
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < hw; ++j) acc += in[ch * hw + j];
                    out[ch] = acc / static_cast<double>(hw);
                }
                break;
            }
        }
        tr.layer_values.push_back(std::move(out));
    }

    tr.logits = tr.layer_values.back().values();
    tr.probs = softmax(tr.logits);
    tr.layer_values.back().assert_finite("forward_trace logits");
    return tr;
}

const Tensor& FeatureTrace::activation(std::size_t act_layer) const {
    if (act_layer >= act_layers.size())
        throw ConfigError("trace: no activation layer " + std::to_string(act_layer));
    return layer_values[act_layers[act_layer] + 1];
}

std::vector<double> FeatureTrace::penultimate() const {
    if (act_layers.empty()) throw ShapeError("trace: model has no activation layers");
    return activation(act_layers.size() - 1).values();
}

std::size_t FeatureTrace::predicted_class() const {
    return static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
}

LossSpec LossSpec::cross_entropy_to(std::size_t target) { return {CrossEntropyTo{target}}; }
LossSpec LossSpec::cw_margin(std::size_t target, double kappa) { return {CwMargin{target, kappa}}; }
LossSpec LossSpec::feature_mean(std::size_t act_layer, int sign) {
    return {FeatureMean{act_layer, sign}};
}
LossSpec LossSpec::feature_match(std::shared_ptr<const FeatureTrace> guide,
                                 std::vector<std::size_t> act_layers) {
    return {FeatureMatch{std::move(guide), std::move(act_layers)}};
}
LossSpec LossSpec::penalty(std::shared_ptr<const FeaturePenalty> term) {
    return {Penalty{std::move(term)}};
}
LossSpec LossSpec::composite(std::vector<std::pair<double, LossSpec>> items) {
    return {Composite{std::move(items)}};
}

namespace {

void add_scaled(Tensor& into, const Tensor& t, double w) {
    if (into.size() == 0) {
        into = t;
        into *= w;
        return;
    }
    if (!into.same_shape(t)) throw ShapeError("loss: gradient shape mismatch");
    for (std::size_t i = 0; i < t.size(); ++i) into[i] += w * t[i];
}

void eval_loss_into(const Model& model, const FeatureTrace& trace, const LossSpec& spec,
                    bool want_grads, double weight, LossParts& out) {
    const std::size_t y = model.num_classes();
    std::visit(
        [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, LossSpec::CrossEntropyTo>) {
                if (node.target >= y) throw ConfigError("loss: target class out of range");
                double p = std::max(trace.probs[node.target], 1e-300);
                out.value += weight * -std::log(p);
                if (want_grads) {
                    if (out.d_logits.empty()) out.d_logits.assign(y, 0.0);
                    for (std::size_t k = 0; k < y; ++k) {
                        double g = trace.probs[k] - (k == node.target ? 1.0 : 0.0);
                        out.d_logits[k] += weight * g;
                    }
                }
            } else if constexpr (std::is_same_v<T, LossSpec::CwMargin>) {
                if (node.target >= y) throw ConfigError("loss: target class out of range");
                if (y < 2) throw ConfigError("loss: margin needs at least two classes");
                std::size_t best = node.target == 0 ? 1 : 0;
                for (std::size_t k = 0; k < y; ++k)
                    if (k != node.target && trace.logits[k] > trace.logits[best]) best = k;
                double margin = trace.logits[best] - trace.logits[node.target];
                if (margin > -node.kappa) {
                    out.value += weight * margin;
                    if (want_grads) {
                        if (out.d_logits.empty()) out.d_logits.assign(y, 0.0);
                        out.d_logits[best] += weight;
                        out.d_logits[node.target] -= weight;
                    }
                } else {
                    out.value += weight * -node.kappa; // at the floor; zero gradient
                }
            } else if constexpr (std::is_same_v<T, LossSpec::FeatureMean>) {
                if (node.sign != 1 && node.sign != -1)
                    throw ConfigError("loss: feature-mean sign must be +1 or -1");
                const Tensor& act = trace.activation(node.act_layer);
                double mean = 0.0;
                for (double v : act.values()) mean += v;
                mean /= static_cast<double>(act.size());
                out.value += weight * node.sign * mean;
                if (want_grads) {
                    Tensor g(act.shape(), node.sign / static_cast<double>(act.size()));
                    add_scaled(out.act_grads[node.act_layer], g, weight);
                }
            } else if constexpr (std::is_same_v<T, LossSpec::FeatureMatch>) {
                for (std::size_t l : node.act_layers) {
                    const Tensor& act = trace.activation(l);
                    const Tensor& guide = node.guide->activation(l);
                    if (!act.same_shape(guide))
                        throw ConfigError("loss: guide activation shape mismatch");
                    double v = 0.0;
                    for (std::size_t i = 0; i < act.size(); ++i) {
                        double d = act[i] - guide[i];
                        v += d * d;
                    }
                    out.value += weight * v;
                    if (want_grads) {
                        Tensor g(act.shape());
                        for (std::size_t i = 0; i < act.size(); ++i)
                            g[i] = 2.0 * (act[i] - guide[i]);
                        add_scaled(out.act_grads[l], g, weight);
                    }
                }
            } else if constexpr (std::is_same_v<T, LossSpec::Penalty>) {
                std::map<std::size_t, Tensor> grads;
                double v = node.term->eval(model, trace, want_grads ? &grads : nullptr);
                out.value += weight * v;
                for (auto& [l, g] : grads) add_scaled(out.act_grads[l], g, weight);
            } else if constexpr (std::is_same_v<T, LossSpec::Composite>) {
                for (const auto& [w, item] : node.items) {
                    if (!std::isfinite(w)) throw ConfigError("loss: non-finite composite weight");
                    if (w == 0.0) continue;
                    eval_loss_into(model, trace, item, want_grads, weight * w, out);
                }
            }
        },
        spec.node);
}

} // namespace

LossParts eval_loss(const Model& model, const FeatureTrace& trace, const LossSpec& spec,
                    bool want_grads) {
    LossParts parts;
    eval_loss_into(model, trace, spec, want_grads, 1.0, parts);
    return parts;
}

Gradients backward(const Model& model, const FeatureTrace& trace,
                   const std::vector<double>& d_logits,
                   const std::map<std::size_t, Tensor>& act_grads, bool want_weight_grads) {
    const std::size_t nl = model.layers.size();
    if (trace.layer_values.size() != nl + 1) throw ShapeError("backward: trace/model mismatch");

    Gradients g;
    if (want_weight_grads) {
        g.d_weights.resize(nl);
        g.d_biases.resize(nl);
    }
    g.act_out_grads.resize(trace.act_layers.size());

    Tensor grad(trace.layer_values.back().shape());
    if (!d_logits.empty()) {
        if (d_logits.size() != grad.size()) throw ShapeError("backward: d_logits length mismatch");
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = d_logits[i];
    }

    std::size_t act_idx = trace.act_layers.size();
    for (std::size_t ii = nl; ii-- > 0;) {
        const LayerSpec& s = model.layers[ii];
        const Tensor& in = trace.layer_values[ii];

        if (s.kind == LayerKind::Relu) {
            --act_idx;
            auto it = act_grads.find(act_idx);
            if (it != act_grads.end()) {
                if (!it->second.same_shape(grad))
                    throw ShapeError("backward: activation seed shape mismatch");
                grad += it->second;
            }
            g.act_out_grads[act_idx] = grad;
        }

        Tensor next;
        switch (s.kind) {
            case LayerKind::Relu: {
                next = Tensor(in.shape());
                for (std::size_t j = 0; j < in.size(); ++j)
                    next[j] = in[j] > 0.0 ? grad[j] : 0.0;
                break;
            }
            case LayerKind::Dense: {
                const Tensor& w = model.weights[ii];
                next = Tensor(in.shape());
                for (std::size_t n = 0; n < s.in_units; ++n) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < s.out_units; ++k)
                        acc += w[n * s.out_units + k] * grad[k];
                    next[n] = acc;
                }
                if (want_weight_grads) {
                    Tensor dw(w.shape());
                    Tensor db({s.out_units});
                    for (std::size_t n = 0; n < s.in_units; ++n)
                        for (std::size_t k = 0; k < s.out_units; ++k)
                            dw[n * s.out_units + k] = in[n] * grad[k];
                    for (std::size_t k = 0; k < s.out_units; ++k) db[k] = grad[k];
                    g.d_weights[ii] = std::move(dw);
                    g.d_biases[ii] = std::move(db);
                }
                break;
            }
            case LayerKind::Conv2d: {
                const Tensor& w = model.weights[ii];
                const std::size_t ic = s.in_channels, oc = s.out_channels, k = s.kernel,
                                  st = s.stride;
                const std::size_t oh = grad.dim(1), ow = grad.dim(2);
                next = Tensor(in.shape());
                Tensor dw, db;
                if (want_weight_grads) {
                    dw = Tensor(w.shape());
                    db = Tensor({oc});
                }
                for (std::size_t o = 0; o < oc; ++o) {
                    for (std::size_t y = 0; y < oh; ++y) {
                        for (std::size_t x = 0; x < ow; ++x) {
                            const double gv = grad.at(o, y, x);
                            if (want_weight_grads) db[o] += gv;
                            if (gv == 0.0) continue;
                            for (std::size_t c = 0; c < ic; ++c) {
                                for (std::size_t ky = 0; ky < k; ++ky) {
                                    for (std::size_t kx = 0; kx < k; ++kx) {
                                        const std::size_t wi = ((o * ic + c) * k + ky) * k + kx;
                                        next.at(c, y * st + ky, x * st + kx) += w[wi] * gv;
                                        if (want_weight_grads)
                                            dw[wi] += in.at(c, y * st + ky, x * st + kx) * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                if (want_weight_grads) {
                    g.d_weights[ii] = std::move(dw);
                    g.d_biases[ii] = std::move(db);
                }
                break;
            }
            case LayerKind::Flatten:
                next = grad.reshaped(in.shape());
                break;
            case LayerKind::Dropout: {
                const Tensor& mask = trace.dropout_masks[ii];
                next = grad;
                if (mask.size() != 0)
                    for (std::size_t j = 0; j < next.size(); ++j) next[j] *= mask[j];
                break;
            }
            case LayerKind::GlobalPool: {
                const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
                next = Tensor(in.shape());
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double gv = grad[ch] / static_cast<double>(hw);
                    for (std::size_t j = 0; j < hw; ++j) next[ch * hw + j] = gv;
                }
                break;
            }
        }
        grad = std::move(next);
    }

    g.d_input = std::move(grad);
    return g;
}

Tensor input_gradient(const Model& model, const Tensor& x, const LossSpec& loss) {
    FeatureTrace tr = forward_trace(model, x);
    LossParts parts = eval_loss(model, tr, loss, true);
    Gradients g = backward(model, tr, parts.d_logits, parts.act_grads, false);
    g.d_input.assert_finite("input_gradient");
    return std::move(g.d_input);
}

double loss_value(const Model& model, const Tensor& x, const LossSpec& loss) {
    FeatureTrace tr = forward_trace(model, x);
    return eval_loss(model, tr, loss, false).value;
}

std::vector<double> penultimate_gradient(const Model& model, const Tensor& x) {
    if (model.num_classes() != 2)
        throw ConfigError("penultimate_gradient: binary models only");
    FeatureTrace tr = forward_trace(model, x);
    LossParts parts = eval_loss(model, tr, LossSpec::cross_entropy_to(1), true);
    Gradients g = backward(model, tr, parts.d_logits, parts.act_grads, false);
    return g.act_out_grads.back().values();
}

std::vector<double> penultimate_gradient_closed_form(const Model& model, const Tensor& x) {
    if (model.num_classes() != 2)
        throw ConfigError("penultimate_gradient_closed_form: binary models only");
    FeatureTrace tr = forward_trace(model, x);
    const Tensor& w = model.final_dense_weights();
    const double p1 = tr.probs[1];
    std::vector<double> out(w.dim(0));
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = (1.0 - p1) * (w.at(n, 0) - w.at(n, 1));
    return out;
}

std::vector<double> train_sgd(Model& model, const std::vector<Tensor>& images,
                              const std::vector<std::size_t>& labels, const TrainHyper& hyper) {
    if (images.empty()) throw ConfigError("train_sgd: empty dataset");
    if (images.size() != labels.size()) throw ShapeError("train_sgd: images/labels mismatch");
    const std::size_t y = model.num_classes();
    for (std::size_t lab : labels)
        if (lab >= y) throw ConfigError("train_sgd: label out of range");
    if (hyper.batch == 0) throw ConfigError("train_sgd: zero batch size");
    if (hyper.momentum < 0.0 || hyper.momentum >= 1.0)
        throw ConfigError("train_sgd: momentum must be in [0, 1)");

    Rng rng(hyper.seed);
    std::vector<std::vector<std::size_t>> by_class(y);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<std::size_t> order;
    order.reserve(images.size());

    std::vector<Tensor> vel_w(model.layers.size()), vel_b(model.layers.size());

    std::vector<double> history;
    history.reserve(hyper.epochs);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Class-stratified order: shuffle each class, then interleave in
        // proportion so every minibatch carries the dataset's class mix.
        // When the class evidence is much smaller than shared background
        // structure, per-batch class-count fluctuation multiplied by the
        // background response is the dominant gradient noise; stratifying
        // removes that term instead of averaging it down.
        for (std::vector<std::size_t>& group : by_class) rng.shuffle(group);
        order.clear();
        std::vector<std::size_t> pos(y, 0);
        for (std::size_t step = 0; step < images.size(); ++step) {
            std::size_t pick = y;
            double best = 2.0;
            for (std::size_t c = 0; c < y; ++c) {
                if (pos[c] == by_class[c].size()) continue;
                const double progress = (static_cast<double>(pos[c]) + 0.5) /
                                        static_cast<double>(by_class[c].size());
                if (progress < best) {
                    best = progress;
                    pick = c;
                }
            }
            order.push_back(by_class[pick][pos[pick]++]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t end = std::min(start + hyper.batch, order.size());
            std::vector<Tensor> acc_w(model.layers.size());
            std::vector<Tensor> acc_b(model.layers.size());
            for (std::size_t s = start; s < end; ++s) {
                const std::size_t i = order[s];
                FeatureTrace tr = forward_trace(model, images[i]);
                LossParts parts =
                    eval_loss(model, tr, LossSpec::cross_entropy_to(labels[i]), true);
                epoch_loss += parts.value;
                Gradients g = backward(model, tr, parts.d_logits, parts.act_grads, true);
                for (std::size_t li = 0; li < model.layers.size(); ++li) {
                    if (g.d_weights[li].size() == 0) continue;
                    if (acc_w[li].size() == 0) {
                        acc_w[li] = std::move(g.d_weights[li]);
                        acc_b[li] = std::move(g.d_biases[li]);
                    } else {
                        acc_w[li] += g.d_weights[li];
                        acc_b[li] += g.d_biases[li];
                    }
                }
            }
            const double scale = hyper.lr / static_cast<double>(end - start);
            for (std::size_t li = 0; li < model.layers.size(); ++li) {
                if (acc_w[li].size() == 0) continue;
                if (vel_w[li].size() == 0) {
                    vel_w[li] = Tensor(acc_w[li].shape());
                    vel_b[li] = Tensor(acc_b[li].shape());
                }
                for (std::size_t j = 0; j < model.weights[li].size(); ++j) {
                    vel_w[li][j] = hyper.momentum * vel_w[li][j] - scale * acc_w[li][j];
                    model.weights[li][j] += vel_w[li][j];
                }
                for (std::size_t j = 0; j < model.biases[li].size(); ++j) {
                    vel_b[li][j] = hyper.momentum * vel_b[li][j] - scale * acc_b[li][j];
                    model.biases[li][j] += vel_b[li][j];
                }
            }
        }
        history.push_back(epoch_loss / static_cast<double>(images.size()));
    }

    model.trained = true;
    return history;
}

std::size_t predict(const Model& model, const Tensor& x) {
    return forward_trace(model, x).predicted_class();
}

std::vector<LayerSpec> default_arch() {
    return {
        LayerSpec::conv2d(1, 8, 3),          LayerSpec::relu(),
        LayerSpec::conv2d(8, 16, 3, 2),      LayerSpec::relu(),
        LayerSpec::flatten(),                LayerSpec::dense(16 * 6 * 6, 8),
        LayerSpec::relu(),                   LayerSpec::dense(8, 8),
        LayerSpec::relu(),                   LayerSpec::dropout(0.2),
        LayerSpec::dense(8, 2),
    };
}

std::vector<std::size_t> default_input_shape() { return {1, 16, 16}; }

std::string model_to_json(const Model& model) {
    json j;
    j["format"] = "camolab-model-v1";
    j["input_shape"] = model.input_shape;
    json layers = json::array();
    for (const LayerSpec& s : model.layers) {
        json l;
        l["kind"] = kind_name(s.kind);
        switch (s.kind) {
            case LayerKind::Conv2d:
                l["in_channels"] = s.in_channels;
                l["out_channels"] = s.out_channels;
                l["kernel"] = s.kernel;
                l["stride"] = s.stride;
                break;
            case LayerKind::Dense:
                l["in_units"] = s.in_units;
                l["out_units"] = s.out_units;
                break;
            case LayerKind::Dropout:
                l["rate"] = s.rate;
                break;
            default:
                break;
        }
        layers.push_back(std::move(l));
    }
    j["layers"] = std::move(layers);
    json weights = json::array(), biases = json::array();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        weights.push_back(model.weights[i].values());
        biases.push_back(model.biases[i].values());
    }
    j["weights"] = std::move(weights);
    j["biases"] = std::move(biases);
    j["trained"] = model.trained;
    j["init_seed"] = model.init_seed;
    j["fingerprint"] = hex64(model.fingerprint);
    return j.dump(2);
}

Model model_from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("format", "") != "camolab-model-v1")
        throw ConfigError("model file: unknown format");

    std::vector<LayerSpec> specs;
    for (const json& l : j.at("layers")) {
        LayerSpec s;
        s.kind = kind_from_name(l.at("kind").get<std::string>());
        switch (s.kind) {
            case LayerKind::Conv2d:
                s.in_channels = l.at("in_channels").get<std::size_t>();
                s.out_channels = l.at("out_channels").get<std::size_t>();
                s.kernel = l.at("kernel").get<std::size_t>();
                s.stride = l.at("stride").get<std::size_t>();
                break;
            case LayerKind::Dense:
                s.in_units = l.at("in_units").get<std::size_t>();
                s.out_units = l.at("out_units").get<std::size_t>();
                break;
            case LayerKind::Dropout:
                s.rate = l.at("rate").get<double>();
                break;
            default:
                break;
        }
        specs.push_back(s);
    }

    Rng rng(j.at("init_seed").get<std::uint64_t>());
    Model m = build_model(j.at("input_shape").get<std::vector<std::size_t>>(), specs, rng);
    const json& weights = j.at("weights");
    const json& biases = j.at("biases");
    if (weights.size() != m.layers.size() || biases.size() != m.layers.size())
        throw ConfigError("model file: weight array count mismatch");
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        std::vector<double> w = weights[i].get<std::vector<double>>();
        std::vector<double> b = biases[i].get<std::vector<double>>();
        if (w.size() != m.weights[i].size() || b.size() != m.biases[i].size())
            throw ConfigError("model file: weight shape mismatch at layer " + std::to_string(i));
        std::copy(w.begin(), w.end(), m.weights[i].values().begin());
        std::copy(b.begin(), b.end(), m.biases[i].values().begin());
    }
    m.trained = j.at("trained").get<bool>();
    if (hex64(m.fingerprint) != j.at("fingerprint").get<std::string>())
        throw ConfigError("model file: fingerprint mismatch");
    return m;
}

void save_model(const Model& model, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw PreconditionError("cannot write " + path);
    f << model_to_json(model);
}

Model load_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw PreconditionError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return model_from_json(ss.str());
}

} // namespace camo::nn
