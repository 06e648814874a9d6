#include "camo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "camo/errors.hpp"
#include "camo/rng.hpp"

namespace camo::data {

using json = nlohmann::json;

void LabeledSet::validate() const {
    if (images.size() != labels.size() || images.size() != ids.size())
        throw ShapeError("labeled set: images/labels/ids length mismatch");
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] > 1) throw ConfigError("labeled set: label out of {0,1}");
        if (!seen.insert(ids[i]).second) throw ConfigError("labeled set: duplicate id");
    }
}

double class_template(std::size_t y, std::size_t x, std::size_t image_size) {
    constexpr double kPi = 3.14159265358979323846;
    const double s = static_cast<double>(image_size);
    const double u = 2.0 * kPi * 2.0 * (static_cast<double>(x) + 0.5) / s;
    const double v = 2.0 * kPi * 2.0 * (static_cast<double>(y) + 0.5) / s;
    // Sign-quantized two-cycle product wave: a +/-1 checkerboard of
    // (image_size/4)-pixel blocks. Flat magnitude maximizes the L1/L2 norm
    // ratio, which is what lets a sign-budgeted attack cross the class
    // margin at the smallest budgets.
    return (std::sin(u) < 0.0 ? -1.0 : 1.0) * (std::sin(v) < 0.0 ? -1.0 : 1.0);
}

LabeledSet gen_synthetic(std::size_t n, std::size_t image_size, std::uint64_t seed) {
    if (n == 0) throw ConfigError("gen_synthetic: n must be positive");
    if (n % 2 != 0) throw ConfigError("gen_synthetic: n must be even");
    if (image_size < 6) throw ConfigError("gen_synthetic: image size too small");

    const double sz = static_cast<double>(image_size);
    Rng base(seed);
    LabeledSet out;
    out.images.reserve(n);
    out.labels.reserve(n);
    out.ids.reserve(n);

    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = base.derive(i);
        const std::size_t label = i % 2;

        // Mid-gray base so the texture trough stays inside [0,1].
        Tensor img({1, image_size, image_size}, kBaseGray);

        // Smooth background: a few broad Gaussian bumps, class-independent.
        // Their amplitude band is kept narrow on purpose — the natural
        // image-to-image spread is what adversarial feature shifts must be
        // measured against, and a loud background drowns them.
        const std::size_t bumps = 2 + rng.below(2);
        for (std::size_t b = 0; b < bumps; ++b) {
            double cy = rng.uniform(0.0, sz);
            double cx = rng.uniform(0.0, sz);
            double amp = rng.uniform(0.03, 0.07);
            double width = rng.uniform(sz / 3.0, sz / 2.0);
            double inv2w2 = 1.0 / (2.0 * width * width);
            for (std::size_t y = 0; y < image_size; ++y)
                for (std::size_t x = 0; x < image_size; ++x) {
                    double dy = static_cast<double>(y) - cy;
                    double dx = static_cast<double>(x) - cx;
                    img.at(0, y, x) += amp * std::exp(-(dy * dy + dx * dx) * inv2w2);
                }
        }

        // Frame-truncated bumps leak into every frequency band, so project
        // the template component back out of the background: the label must
        // be the only source of template-aligned energy besides pixel noise.
        {
            double q = 0.0, p2 = 0.0;
            for (std::size_t y = 0; y < image_size; ++y)
                for (std::size_t x = 0; x < image_size; ++x) {
                    const double t = class_template(y, x, image_size);
                    q += img.at(0, y, x) * t;
                    p2 += t * t;
                }
            q /= p2;
            for (std::size_t y = 0; y < image_size; ++y)
                for (std::size_t x = 0; x < image_size; ++x)
                    img.at(0, y, x) -= q * class_template(y, x, image_size);
        }

        // The class signal: the fixed template added with class-signed,
        // per-sample severity. The amplitude is a fraction of a gray level —
        // evidence spread thin across every pixel, so a small L-inf budget
        // moves the matched-filter response across the whole class gap.
        const double severity = rng.uniform(0.7, 0.9) * (label == 0 ? -1.0 : 1.0);
        for (std::size_t y = 0; y < image_size; ++y)
            for (std::size_t x = 0; x < image_size; ++x)
                img.at(0, y, x) += 0.002 * severity * class_template(y, x, image_size);

        // Pixel noise.
        for (double& v : img.values()) v += rng.uniform(-0.005, 0.005);

        for (double& v : img.values()) v = std::clamp(v, 0.0, 1.0);

        out.images.push_back(std::move(img));
        out.labels.push_back(label);
        out.ids.push_back(i);
    }
    return out;
}

namespace {

LabeledSet take(const LabeledSet& src, const std::vector<std::size_t>& idx) {
    LabeledSet out;
    out.images.reserve(idx.size());
    out.labels.reserve(idx.size());
    out.ids.reserve(idx.size());
    for (std::size_t i : idx) {
        out.images.push_back(src.images[i]);
        out.labels.push_back(src.labels[i]);
        out.ids.push_back(src.ids[i]);
    }
    return out;
}

} // namespace

SplitBundle make_splits(const LabeledSet& data, const nn::Model& model,
                        const SplitFractions& fractions, std::uint64_t seed) {
    data.validate();
    if (!model.trained) throw PreconditionError("make_splits: model is not trained");
    if (fractions.train <= 0.0 || fractions.train >= 1.0 ||
        fractions.adv_train_of_test <= 0.0 || fractions.adv_train_of_test >= 1.0)
        throw ConfigError("make_splits: fractions must lie in (0,1)");
    if (data.size() < 2) throw ConfigError("make_splits: dataset too small");

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const std::size_t n_train = static_cast<std::size_t>(
        std::llround(fractions.train * static_cast<double>(data.size())));

    SplitBundle out;
    out.seed = seed;
    out.train = take(data, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)});

    std::vector<std::size_t> kept;
    for (std::size_t k = n_train; k < order.size(); ++k) {
        std::size_t i = order[k];
        if (nn::predict(model, data.images[i]) == data.labels[i]) kept.push_back(i);
    }

    const std::size_t n_adv_train = static_cast<std::size_t>(
        std::llround(fractions.adv_train_of_test * static_cast<double>(kept.size())));
    if (kept.size() == 0 || n_adv_train == kept.size())
        throw ConfigError("make_splits: adv_test empty after filtering");

    out.adv_train = take(data, {kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(n_adv_train)});
    out.adv_test = take(data, {kept.begin() + static_cast<std::ptrdiff_t>(n_adv_train), kept.end()});
    return out;
}

void save_set(const LabeledSet& set, const std::string& json_path,
              const std::string& pixels_path) {
    set.validate();
    if (set.size() == 0) throw PreconditionError("save_set: empty set");

    const std::vector<std::size_t>& shape = set.images.front().shape();
    for (const Tensor& t : set.images)
        if (t.shape() != shape) throw ShapeError("save_set: mixed image shapes");

    std::ofstream bin(pixels_path, std::ios::binary);
    if (!bin) throw PreconditionError("cannot write " + pixels_path);
    for (const Tensor& t : set.images)
        bin.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    bin.close();

    json j;
    j["format"] = "camolab-set-v1";
    j["count"] = set.size();
    j["image_shape"] = shape;
    j["labels"] = set.labels;
    j["ids"] = set.ids;
    j["pixels_file"] = pixels_path.substr(pixels_path.find_last_of('/') + 1);
    std::ofstream f(json_path);
    if (!f) throw PreconditionError("cannot write " + json_path);
    f << j.dump(2);
}

LabeledSet load_set(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw PreconditionError("cannot read " + json_path);
    json j = json::parse(f, nullptr, true);
    if (j.value("format", "") != "camolab-set-v1") throw ConfigError("set file: unknown format");

    const std::size_t count = j.at("count").get<std::size_t>();
    const std::vector<std::size_t> shape = j.at("image_shape").get<std::vector<std::size_t>>();
    std::size_t pixels = 1;
    for (std::size_t d : shape) pixels *= d;

    std::string dir;
    if (std::size_t slash = json_path.find_last_of('/'); slash != std::string::npos)
        dir = json_path.substr(0, slash + 1);
    const std::string pixels_path = dir + j.at("pixels_file").get<std::string>();

    std::ifstream bin(pixels_path, std::ios::binary);
    if (!bin) throw PreconditionError("cannot read " + pixels_path);

    LabeledSet out;
    out.labels = j.at("labels").get<std::vector<std::size_t>>();
    out.ids = j.at("ids").get<std::vector<std::uint64_t>>();
    out.images.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Tensor t(shape);
        bin.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(pixels * sizeof(double)));
        if (!bin) throw PreconditionError("set file: pixel data truncated");
        out.images.push_back(std::move(t));
    }
    out.validate();
    return out;
}

} // namespace camo::data
