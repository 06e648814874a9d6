#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "camo/data.hpp"
#include "camo/detectors.hpp"
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

Tensor rows_from(const std::vector<std::vector<double>>& rows) {
    Tensor t({rows.size(), rows.front().size()});
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) t.at(i, j) = rows[i][j];
    return t;
}

} // namespace

TEST_CASE("kd: bandwidth heuristic and hand-computed score") {
    std::vector<Tensor> banks = {rows_from({{0.0}, {1.0}}), rows_from({{10.0}, {11.0}})};
    detectors::KdModel m = detectors::fit_kd(banks);
    CHECK(m.sigma == 1.0); // both within-class pairs sit at distance 1

    // z = 0.5 under class 0: two kernels at squared distance 0.25 each
    const double expected =
        -(std::log(2.0 * std::exp(-0.25 / 2.0)) - std::log(2.0) -
          0.5 * std::log(2.0 * 3.14159265358979323846));
    CHECK(detectors::score_kd(m, {0.5}, 0) == doctest::Approx(expected).epsilon(1e-12));

    // farther points score strictly higher (more adversarial)
    CHECK(detectors::score_kd(m, {5.0}, 0) > detectors::score_kd(m, {0.5}, 0));

    detectors::KdModel fixed = detectors::fit_kd(banks, 2.5);
    CHECK(fixed.sigma == 2.5);

    CHECK_THROWS_AS(detectors::fit_kd({}), ConfigError);
    CHECK_THROWS_AS(detectors::score_kd(m, {0.5}, 2), ConfigError);
    CHECK_THROWS_AS(detectors::score_kd(m, {0.5, 0.5}, 0), ShapeError);
}

TEST_CASE("maha: tied covariance against a hand calculation") {
    // class 0 at {0,2}, class 1 at {4,8}: pooled centered scatter 10/4
    std::vector<std::vector<Tensor>> banks = {
        {rows_from({{0.0}, {2.0}}), rows_from({{4.0}, {8.0}})}};
    detectors::MahaModel m = detectors::fit_maha(banks, 0.0);

    REQUIRE(m.layers.size() == 1);
    CHECK(m.layers[0].means[0][0] == 1.0);
    CHECK(m.layers[0].means[0].size() == 1);
    CHECK(m.layers[0].means[1][0] == 6.0);
    CHECK(m.layers[0].covariance.at(0, 0) == doctest::Approx(2.5).epsilon(1e-12));

    // z = 2: nearest class is 0 with (2-1)^2 / 2.5
    const std::vector<std::vector<double>> z2 = {{2.0}};
    CHECK(detectors::score_maha(m, z2) == doctest::Approx(0.4).epsilon(1e-10));
    // z = 5: nearest class is 1 with (5-6)^2 / 2.5
    const std::vector<std::vector<double>> z5 = {{5.0}};
    CHECK(detectors::score_maha(m, z5) == doctest::Approx(0.4).epsilon(1e-10));
    const std::vector<std::vector<double>> extra_layer = {{1.0}, {2.0}};
    CHECK_THROWS_AS(detectors::score_maha(m, extra_layer), ShapeError);
}

TEST_CASE("maha: scores are invariant under feature rotation") {
    Rng rng(17);
    auto blob = [&](double cx, double cy, std::size_t n) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < n; ++i)
            rows.push_back({cx + rng.normal(), cy + 0.5 * rng.normal() + 0.3 * rows.size()});
        return rows;
    };
    std::vector<std::vector<double>> c0 = blob(0.0, 0.0, 30);
    std::vector<std::vector<double>> c1 = blob(3.0, 1.0, 30);

    const double th = 0.7;
    auto rotate = [&](const std::vector<double>& v) {
        return std::vector<double>{std::cos(th) * v[0] - std::sin(th) * v[1],
                                   std::sin(th) * v[0] + std::cos(th) * v[1]};
    };
    auto rotate_all = [&](const std::vector<std::vector<double>>& rows) {
        std::vector<std::vector<double>> out;
        for (const auto& v : rows) out.push_back(rotate(v));
        return out;
    };

    detectors::MahaModel plain = detectors::fit_maha({{rows_from(c0), rows_from(c1)}}, 1e-9);
    detectors::MahaModel spun =
        detectors::fit_maha({{rows_from(rotate_all(c0)), rows_from(rotate_all(c1))}}, 1e-9);

    Rng probe_rng(5);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> z = {probe_rng.uniform(-2.0, 5.0), probe_rng.uniform(-2.0, 4.0)};
        const std::vector<std::vector<double>> plain_feats = {z};
        const std::vector<std::vector<double>> spun_feats = {rotate(z)};
        const double a = detectors::score_maha(plain, plain_feats);
        const double b = detectors::score_maha(spun, spun_feats);
        CHECK(a == doctest::Approx(b).epsilon(1e-7));
    }
}

TEST_CASE("mgm: negative best class log-density, by hand in 1-d") {
    std::vector<Tensor> banks = {rows_from({{0.0}, {2.0}}), rows_from({{10.0}, {14.0}})};
    detectors::MgmModel m = detectors::fit_mgm(banks, 0.0);

    // class 0: mean 1, var 1; class 1: mean 12, var 4
    auto logn = [](double z, double mu, double var) {
        return -0.5 * (std::log(2.0 * 3.14159265358979323846) + std::log(var) +
                       (z - mu) * (z - mu) / var);
    };
    for (double z : {0.3, 1.8, 6.0, 11.0}) {
        const double expected = -std::max(logn(z, 1.0, 1.0), logn(z, 12.0, 4.0));
        CHECK(detectors::score_mgm(m, {z}) == doctest::Approx(expected).epsilon(1e-10));
    }
    CHECK_THROWS_AS(detectors::fit_mgm({}), ConfigError);
}

TEST_CASE("lid estimate: geometric reference values") {
    // neighbours on a line at distances 1, 2, 4, 8 from the query
    Tensor refs = rows_from({{1.0}, {2.0}, {4.0}, {8.0}, {50.0}});
    const double expected = 2.0 / (3.0 * std::log(2.0));
    CHECK(detectors::lid_estimate(refs, {0.0}, 4) == doctest::Approx(expected).epsilon(1e-12));

    // identical radii collapse the estimator onto its cap
    Tensor ring = rows_from({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
    CHECK(detectors::lid_estimate(ring, {0.0, 0.0}, 2) == 1e6);

    CHECK_THROWS_AS(detectors::lid_estimate(refs, {0.0}, 1), ConfigError);
    CHECK_THROWS_AS(detectors::lid_estimate(refs, {0.0}, 5), ConfigError);
    CHECK_THROWS_AS(detectors::lid_estimate(refs, {0.0, 0.0}, 2), ShapeError);
}

TEST_CASE("lid estimate: recovers the dimension of a uniform ball") {
    const std::size_t d = 4, n = 2000;
    Rng rng(23);
    auto ball_point = [&](double radius) {
        std::vector<double> v(d);
        double norm = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        const double r = radius * std::pow(rng.uniform01(), 1.0 / static_cast<double>(d));
        for (double& x : v) x *= r / norm;
        return v;
    };
    Tensor refs({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v = ball_point(1.0);
        for (std::size_t j = 0; j < d; ++j) refs.at(i, j) = v[j];
    }
    double mean_lid = 0.0;
    const int probes = 100;
    for (int t = 0; t < probes; ++t) mean_lid += detectors::lid_estimate(refs, ball_point(0.5), 40);
    mean_lid /= probes;
    CHECK(mean_lid > 0.7 * static_cast<double>(d));
    CHECK(mean_lid < 1.3 * static_cast<double>(d));
}

TEST_CASE("logistic head separates separable scores") {
    Tensor rows = rows_from({{-2.0}, {-1.5}, {-1.0}, {1.0}, {1.5}, {2.0}});
    std::vector<int> labels = {0, 0, 0, 1, 1, 1};
    detectors::LogisticHead h = detectors::fit_logistic(rows, labels);
    CHECK(detectors::head_logit(h, {-2.0}) < 0.0);
    CHECK(detectors::head_logit(h, {2.0}) > 0.0);
    CHECK(detectors::head_logit(h, {2.0}) > detectors::head_logit(h, {0.5}));
    CHECK_THROWS_AS(detectors::fit_logistic(rows, {0, 1}), ShapeError);
}

TEST_CASE("rbf svm: kernel properties and separable fit") {
    Rng rng(31);
    std::vector<std::vector<double>> pts;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        pts.push_back({0.1 * rng.normal(), 0.1 * rng.normal()});
        labels.push_back(-1);
        pts.push_back({3.0 + 0.1 * rng.normal(), 3.0 + 0.1 * rng.normal()});
        labels.push_back(+1);
    }
    Tensor feats = rows_from(pts);

    Tensor k = detectors::rbf_kernel_matrix(feats, 0.5);
    for (std::size_t i = 0; i < k.dim(0); ++i) {
        CHECK(k.at(i, i) == 1.0);
        for (std::size_t j = 0; j < k.dim(1); ++j) {
            CHECK(k.at(i, j) == k.at(j, i));
            CHECK(k.at(i, j) > 0.0);
            CHECK(k.at(i, j) <= 1.0);
        }
    }

    detectors::SvmModel m = detectors::fit_rbf_svm(feats, labels);
    CHECK(m.gamma > 0.0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double s = detectors::score_svm(m, pts[i]);
        if ((s > 0.0) == (labels[i] > 0)) ++correct;
    }
    CHECK(correct == pts.size());

    CHECK_THROWS_AS(detectors::fit_rbf_svm(feats, std::vector<int>(40, 0)), ConfigError);
}

TEST_CASE("dnn ensemble: per-layer heads, score is the logit sum") {
    nn::Model model = small_model(3);
    data::LabeledSet set = data::gen_synthetic(20, 16, 6);

    std::vector<nn::FeatureTrace> clean, adv;
    for (std::size_t i = 0; i < set.size(); ++i) {
        clean.push_back(nn::forward_trace(model, set.images[i]));
        Tensor shifted = set.images[i];
        for (std::size_t p = 0; p < shifted.size(); ++p)
            shifted[p] = std::min(1.0, shifted[p] + 0.3);
        adv.push_back(nn::forward_trace(model, shifted));
    }

    detectors::DnnModel m = detectors::fit_dnn(clean, adv);
    REQUIRE(m.heads.size() == model.num_activation_layers());

    const nn::FeatureTrace& probe = clean[0];
    double expected = 0.0;
    for (std::size_t l = 0; l < m.heads.size(); ++l)
        expected += detectors::head_logit(m.heads[l], hfc::reduce_features(probe, l));
    CHECK(detectors::score_dnn(m, probe) == expected);

    // the big constant shift must be separable on its own training data
    std::size_t ranked = 0;
    for (std::size_t i = 0; i < clean.size(); ++i)
        if (detectors::score_dnn(m, adv[i]) > detectors::score_dnn(m, clean[i])) ++ranked;
    CHECK(ranked >= 18);

    CHECK_THROWS_AS(detectors::fit_dnn({}, adv), ConfigError);
}

TEST_CASE("lid detector: vector shape, consistency, validation") {
    nn::Model model = small_model(4);
    data::LabeledSet set = data::gen_synthetic(30, 16, 7);

    std::vector<nn::FeatureTrace> clean, adv;
    for (std::size_t i = 0; i < set.size(); ++i) {
        clean.push_back(nn::forward_trace(model, set.images[i]));
        Tensor shifted = set.images[i];
        for (std::size_t p = 0; p < shifted.size(); ++p)
            shifted[p] = std::min(1.0, shifted[p] + 0.2);
        adv.push_back(nn::forward_trace(model, shifted));
    }

    std::vector<Tensor> refs;
    for (std::size_t l = 0; l < model.num_activation_layers(); ++l) {
        const std::size_t w = hfc::reduce_features(clean[0], l).size();
        Tensor bank({clean.size(), w});
        for (std::size_t i = 0; i < clean.size(); ++i) {
            std::vector<double> f = hfc::reduce_features(clean[i], l);
            for (std::size_t j = 0; j < w; ++j) bank.at(i, j) = f[j];
        }
        refs.push_back(std::move(bank));
    }

    detectors::LidModel m = detectors::fit_lid(refs, 10, clean, adv);
    std::vector<double> v = detectors::lid_vector(m, clean[3]);
    REQUIRE(v.size() == model.num_activation_layers());
    CHECK(detectors::score_lid(m, clean[3]) == detectors::head_logit(m.head, v));

    CHECK_THROWS_AS(detectors::fit_lid(refs, 30, clean, adv), ConfigError); // k >= bank size
    CHECK_THROWS_AS(detectors::fit_lid(refs, 10, {}, adv), ConfigError);
}

TEST_CASE("bu: dropout variance statistic") {
    nn::Model model = small_model(5);
    data::LabeledSet set = data::gen_synthetic(2, 16, 8);

    const double a = detectors::score_bu(model, set.images[0], 20, 77);
    const double b = detectors::score_bu(model, set.images[0], 20, 77);
    CHECK(a == b);
    CHECK(a >= 0.0);

    CHECK_THROWS_AS(detectors::score_bu(model, set.images[0], 1, 77), ConfigError);

    std::vector<nn::LayerSpec> no_dropout = {nn::LayerSpec::conv2d(1, 4, 3), nn::LayerSpec::relu(),
                                             nn::LayerSpec::global_pool(),
                                             nn::LayerSpec::dense(4, 2)};
    Rng rng(1);
    nn::Model plain = nn::build_model({1, 16, 16}, no_dropout, rng);
    CHECK_THROWS_AS(detectors::score_bu(plain, set.images[0], 20, 77), ConfigError);

    CHECK(detectors::variance({1.0, 1.0, 1.0}) == 0.0);
    CHECK(detectors::variance({0.0, 2.0}) == 1.0);
    CHECK_THROWS_AS(detectors::variance({}), ConfigError);
}

TEST_CASE("detector json round trips preserve scores exactly") {
    nn::Model model = small_model(6);
    data::LabeledSet set = data::gen_synthetic(30, 16, 9);

    std::vector<nn::FeatureTrace> clean, adv;
    for (std::size_t i = 0; i < set.size(); ++i) {
        clean.push_back(nn::forward_trace(model, set.images[i]));
        Tensor shifted = set.images[i];
        for (std::size_t p = 0; p < shifted.size(); ++p)
            shifted[p] = std::min(1.0, shifted[p] + 0.2);
        adv.push_back(nn::forward_trace(model, shifted));
    }

    // penultimate class banks and per-layer class banks
    std::vector<std::vector<std::vector<double>>> pen(2);
    for (std::size_t i = 0; i < set.size(); ++i)
        pen[set.labels[i]].push_back(clean[i].penultimate());
    std::vector<Tensor> pen_banks;
    for (const auto& rows : pen) pen_banks.push_back(rows_from(rows));

    std::vector<std::vector<Tensor>> layer_banks;
    for (std::size_t l = 0; l < model.num_activation_layers(); ++l) {
        std::vector<std::vector<std::vector<double>>> by_class(2);
        for (std::size_t i = 0; i < set.size(); ++i)
            by_class[set.labels[i]].push_back(hfc::reduce_features(clean[i], l));
        layer_banks.push_back({rows_from(by_class[0]), rows_from(by_class[1])});
    }
    std::vector<Tensor> refs;
    for (std::size_t l = 0; l < model.num_activation_layers(); ++l) {
        std::vector<std::vector<double>> rows;
        for (const auto& t : clean) rows.push_back(hfc::reduce_features(t, l));
        refs.push_back(rows_from(rows));
    }

    const nn::FeatureTrace& probe = adv[4];

    detectors::KdModel kd = detectors::fit_kd(pen_banks);
    detectors::KdModel kd2 = detectors::kd_from_json(detectors::kd_to_json(kd));
    CHECK(detectors::score_kd(kd2, probe) == detectors::score_kd(kd, probe));

    detectors::MahaModel maha = detectors::fit_maha(layer_banks);
    detectors::MahaModel maha2 = detectors::maha_from_json(detectors::maha_to_json(maha));
    CHECK(detectors::score_maha(maha2, probe) == detectors::score_maha(maha, probe));

    detectors::MgmModel mgm = detectors::fit_mgm(pen_banks);
    detectors::MgmModel mgm2 = detectors::mgm_from_json(detectors::mgm_to_json(mgm));
    CHECK(detectors::score_mgm(mgm2, probe) == detectors::score_mgm(mgm, probe));

    detectors::LidModel lid = detectors::fit_lid(refs, 10, clean, adv);
    detectors::LidModel lid2 = detectors::lid_from_json(detectors::lid_to_json(lid));
    CHECK(detectors::score_lid(lid2, probe) == detectors::score_lid(lid, probe));

    std::vector<std::vector<double>> svm_rows;
    std::vector<int> svm_labels;
    for (const auto& t : clean) {
        svm_rows.push_back(t.penultimate());
        svm_labels.push_back(-1);
    }
    for (const auto& t : adv) {
        svm_rows.push_back(t.penultimate());
        svm_labels.push_back(+1);
    }
    detectors::SvmModel svm = detectors::fit_rbf_svm(rows_from(svm_rows), svm_labels);
    detectors::SvmModel svm2 = detectors::svm_from_json(detectors::svm_to_json(svm));
    CHECK(detectors::score_svm(svm2, probe) == detectors::score_svm(svm, probe));

    detectors::DnnModel dnn = detectors::fit_dnn(clean, adv);
    detectors::DnnModel dnn2 = detectors::dnn_from_json(detectors::dnn_to_json(dnn));
    CHECK(detectors::score_dnn(dnn2, probe) == detectors::score_dnn(dnn, probe));

    CHECK_THROWS_AS(detectors::kd_from_json(detectors::mgm_to_json(mgm)), ConfigError);
}
