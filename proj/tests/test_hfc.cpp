#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

#include "camo/data.hpp"
#include "camo/errors.hpp"
#include "camo/hfc.hpp"
#include "camo/nn.hpp"
#include "camo/rng.hpp"

using namespace camo;

namespace {

nn::Model small_model(std::uint64_t seed) {
    Rng rng(seed);
    return nn::build_model(nn::default_input_shape(), nn::default_arch(), rng);
}

} // namespace

TEST_CASE("reduce_features: channel means for conv, passthrough for dense") {
    nn::Model model = small_model(3);
    data::LabeledSet set = data::gen_synthetic(2, 16, 1);
    nn::FeatureTrace trace = nn::forward_trace(model, set.images[0]);

    // first activation layer is conv output: 8 x 14 x 14
    std::vector<double> reduced = hfc::reduce_features(trace, 0);
    const Tensor& act = trace.activation(0);
    REQUIRE(act.rank() == 3);
    REQUIRE(reduced.size() == act.dim(0));
    for (std::size_t c = 0; c < act.dim(0); ++c) {
        double mean = 0.0;
        for (std::size_t y = 0; y < act.dim(1); ++y)
            for (std::size_t x = 0; x < act.dim(2); ++x) mean += act.at(c, y, x);
        mean /= static_cast<double>(act.dim(1) * act.dim(2));
        CHECK(reduced[c] == doctest::Approx(mean).epsilon(1e-15));
    }

    // deepest activation layer is dense output: copied verbatim
    const std::size_t last = trace.num_activation_layers() - 1;
    std::vector<double> dense = hfc::reduce_features(trace, last);
    const Tensor& dact = trace.activation(last);
    REQUIRE(dact.rank() == 1);
    REQUIRE(dense.size() == dact.size());
    for (std::size_t i = 0; i < dense.size(); ++i) CHECK(dense[i] == dact[i]);

    CHECK_THROWS_AS(hfc::reduce_features(trace, trace.num_activation_layers()), ConfigError);
}

TEST_CASE("fit_hfc: one mixture per layer, weights 1/width") {
    nn::Model model = small_model(4);
    model.trained = true;
    data::LabeledSet set = data::gen_synthetic(120, 16, 9);
    hfc::HfcModel h = hfc::fit_hfc(model, set, 1, 2, {}, {.seed = 11});

    REQUIRE(h.act_layers.size() == 4);
    REQUIRE(h.mixtures.size() == 4);
    REQUIRE(h.lambdas.size() == 4);
    const std::size_t widths[] = {8, 16, 8, 8};
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(h.act_layers[l] == l);
        CHECK(h.mixtures[l].k == 2);
        CHECK(h.mixtures[l].dim == widths[l]);
        CHECK(h.lambdas[l] == doctest::Approx(1.0 / static_cast<double>(widths[l])).epsilon(1e-15));
    }
    CHECK(h.target_class == 1);

    // subset of layers
    hfc::HfcModel partial = hfc::fit_hfc(model, set, 0, 2, {1, 3}, {.seed = 11});
    CHECK(partial.act_layers == std::vector<std::size_t>{1, 3});
    CHECK(partial.mixtures.size() == 2);
}

TEST_CASE("fit_hfc: validation") {
    nn::Model model = small_model(4);
    model.trained = true;
    data::LabeledSet set = data::gen_synthetic(120, 16, 9);
    CHECK_THROWS_AS(hfc::fit_hfc(model, set, 2, 2, {}, {}), ConfigError);   // bad class
    CHECK_THROWS_AS(hfc::fit_hfc(model, set, 0, 0, {}, {}), ConfigError);   // k = 0
    CHECK_THROWS_AS(hfc::fit_hfc(model, set, 0, 2, {9}, {}), ConfigError);  // bad layer
    data::LabeledSet tiny = data::gen_synthetic(8, 16, 9);
    CHECK_THROWS_AS(hfc::fit_hfc(model, tiny, 0, 2, {}, {}), ConfigError);  // too few samples
}

TEST_CASE("hfc penalty value assembled from its parts") {
    nn::Model model = small_model(5);
    model.trained = true;
    data::LabeledSet set = data::gen_synthetic(120, 16, 2);
    hfc::HfcModel h = hfc::fit_hfc(model, set, 0, 2, {}, {.seed = 3});

    nn::FeatureTrace trace = nn::forward_trace(model, set.images[3]);
    double expected = 0.0;
    for (std::size_t l = 0; l < h.act_layers.size(); ++l) {
        std::vector<double> f = hfc::reduce_features(trace, h.act_layers[l]);
        const hfc::GaussianMixture& g = h.mixtures[l];
        const std::size_t kp = hfc::select_component(g, f);
        expected += 0.5 * h.lambdas[l] * mahalanobis_sq(f, g.means[kp], g.chols[kp]);
    }
    CHECK(hfc::hfc_loss(trace, h) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(h.eval(model, trace, nullptr) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hfc penalty gradient agrees with finite differences") {
    nn::Model model = small_model(6);
    model.trained = true;
    data::LabeledSet set = data::gen_synthetic(60, 16, 8);
    auto h = std::make_shared<hfc::HfcModel>(hfc::fit_hfc(model, set, 1, 2, {}, {.seed = 5}));
    nn::LossSpec spec = nn::LossSpec::penalty(h);

    Tensor x = set.images[1];
    Tensor grad = nn::input_gradient(model, x, spec);

    const double step = 1e-5;
    Rng pick(77);
    double max_rel = 0.0;
    for (int t = 0; t < 40; ++t) {
        const std::size_t i = pick.below(x.size());
        Tensor xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        const double fd = (nn::loss_value(model, xp, spec) - nn::loss_value(model, xm, spec)) /
                          (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
        max_rel = std::max(max_rel, std::abs(fd - grad[i]) / denom);
    }
    CHECK(max_rel < 1e-4);
}

TEST_CASE("hfc json round trip preserves the loss exactly") {
    nn::Model model = small_model(7);
    model.trained = true;
    data::LabeledSet set = data::gen_synthetic(100, 16, 12);
    hfc::HfcModel h = hfc::fit_hfc(model, set, 1, 2, {}, {.seed = 21});

    const std::string path = "test_hfc.json";
    hfc::save_hfc(h, path);
    std::shared_ptr<hfc::HfcModel> loaded = hfc::load_hfc(path);
    std::remove(path.c_str());

    REQUIRE(loaded->act_layers == h.act_layers);
    REQUIRE(loaded->target_class == h.target_class);
    CHECK(loaded->lambdas == h.lambdas);
    for (std::size_t l = 0; l < h.mixtures.size(); ++l) {
        CHECK(loaded->mixtures[l].weights == h.mixtures[l].weights);
        CHECK(loaded->mixtures[l].means == h.mixtures[l].means);
        CHECK(loaded->mixtures[l].covariances[0].values() == h.mixtures[l].covariances[0].values());
    }
    for (std::size_t s = 0; s < 5; ++s) {
        nn::FeatureTrace trace = nn::forward_trace(model, set.images[s]);
        CHECK(hfc::hfc_loss(trace, *loaded) == hfc::hfc_loss(trace, h));
    }
}
