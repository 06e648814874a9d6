#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "camo/attacks.hpp"
#include "camo/data.hpp"
#include "camo/detectors.hpp"
#include "camo/errors.hpp"
#include "camo/nn.hpp"
#include "camo/rng.hpp"

using namespace camo;

namespace {

nn::Model small_model(std::uint64_t seed) {
    Rng rng(seed);
    return nn::build_model(nn::default_input_shape(), nn::default_arch(), rng);
}

bool in_ball(const Tensor& x_adv, const Tensor& x, double eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x_adv[i] < 0.0 || x_adv[i] > 1.0) return false;
        if (std::abs(x_adv[i] - x[i]) > eps + 1e-12) return false;
    }
    return true;
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

TEST_CASE("clip_ball clamps into the intersection of ball and unit box") {
    Tensor x = Tensor::vector({0.5, 0.05, 0.95, 0.4});
    Tensor moved = Tensor::vector({0.8, -0.3, 1.4, 0.45});
    Tensor out = attacks::clip_ball(moved, x, 0.1);
    CHECK(out[0] == 0.6);  // ball cap
    CHECK(out[1] == 0.0);  // box floor wins over ball floor -0.05
    CHECK(out[2] == 1.0);  // box ceiling wins over ball ceiling 1.05
    CHECK(out[3] == 0.45); // untouched
    CHECK_THROWS_AS(attacks::clip_ball(Tensor::vector({1.0}), x, 0.1), ShapeError);
}

TEST_CASE("attack config validation") {
    attacks::AttackConfig cfg;
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.kappa = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    CHECK(cfg.resolved_steps() == 100); // 2 * eps / alpha
    cfg.steps = 7;
    CHECK(cfg.resolved_steps() == 7);
}

TEST_CASE("fgsm matches its closed form") {
    nn::Model model = small_model(2);
    data::LabeledSet set = data::gen_synthetic(2, 16, 5);
    const Tensor& x = set.images[0];

    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 256;
    cfg.target = 1;
    attacks::AttackResult res = attacks::fgsm(model, x, cfg);

    Tensor g = nn::input_gradient(model, x, nn::LossSpec::cross_entropy_to(1));
    Tensor expected = x;
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] -= cfg.epsilon * sign_of(g[i]);
    expected = attacks::clip_ball(expected, x, cfg.epsilon);

    CHECK(res.x_adv.values() == expected.values());
    CHECK(res.iterations_used == 1);
    CHECK(res.deltas.size() == 1);
    CHECK(res.success == (res.final_prediction == cfg.target));
    CHECK(in_ball(res.x_adv, x, cfg.epsilon));
}

TEST_CASE("bim replays as manual sign-gradient descent") {
    nn::Model model = small_model(3);
    data::LabeledSet set = data::gen_synthetic(2, 16, 6);
    const Tensor& x = set.images[1];

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 6;
    cfg.target = 0;
    attacks::AttackResult res = attacks::bim(model, x, cfg);

    Tensor x_t = x;
    nn::LossSpec objective = nn::LossSpec::cross_entropy_to(0);
    for (std::size_t t = 0; t < 6; ++t) {
        Tensor g = nn::input_gradient(model, x_t, objective);
        for (std::size_t i = 0; i < x_t.size(); ++i) x_t[i] -= cfg.alpha * sign_of(g[i]);
        x_t = attacks::clip_ball(x_t, x, cfg.epsilon);
    }
    CHECK(res.x_adv.values() == x_t.values());
    CHECK(res.iterations_used == 6);
    CHECK(res.deltas.size() == 6);
    CHECK(in_ball(res.x_adv, x, cfg.epsilon));

    // each recorded delta is against the clean penultimate features
    std::vector<double> z0 = nn::forward_trace(model, x).penultimate();
    std::vector<double> z_final = nn::forward_trace(model, res.x_adv).penultimate();
    for (std::size_t j = 0; j < z0.size(); ++j)
        CHECK(res.deltas.back()[j] == doctest::Approx(z_final[j] - z0[j]).epsilon(1e-12));
}

TEST_CASE("pgd random start: seeded, in-ball, and actually random") {
    nn::Model model = small_model(4);
    data::LabeledSet set = data::gen_synthetic(2, 16, 7);
    const Tensor& x = set.images[0];

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 4;
    cfg.target = 1;
    CHECK_THROWS_AS(attacks::pgd(model, x, cfg), ConfigError); // random_start off

    cfg.random_start = true;
    cfg.seed = 11;
    attacks::AttackResult a = attacks::pgd(model, x, cfg);
    attacks::AttackResult b = attacks::pgd(model, x, cfg);
    CHECK(a.x_adv.values() == b.x_adv.values());
    CHECK(in_ball(a.x_adv, x, cfg.epsilon));

    cfg.seed = 12;
    attacks::AttackResult c = attacks::pgd(model, x, cfg);
    CHECK(a.x_adv.values() != c.x_adv.values());
}

TEST_CASE("cw margin: early stop without an add-on, full run with one") {
    nn::Model model = small_model(5);
    data::LabeledSet set = data::gen_synthetic(2, 16, 8);
    const Tensor& x = set.images[0];
    const std::size_t already = nn::predict(model, x);

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 10;
    cfg.target = already; // margin <= 0 before the first step
    cfg.kappa = 0.0;

    attacks::AttackResult res = attacks::cw_inf(model, x, cfg);
    CHECK(res.iterations_used == 0);
    CHECK(res.deltas.empty());
    CHECK(res.success);
    CHECK(res.x_adv.values() == x.values());

    // a present add-on disables the early exit
    cfg.addon = {{1e-12, nn::LossSpec::feature_mean(0, 1)}};
    attacks::AttackResult full = attacks::cw_inf(model, x, cfg);
    CHECK(full.iterations_used == 10);
    CHECK(full.deltas.size() == 10);

    // attacking the other class: no early exit until the margin is met
    cfg.addon.reset();
    cfg.target = 1 - already;
    cfg.epsilon = 16.0 / 256;
    cfg.alpha = 4.0 / 256;
    cfg.steps = 40;
    attacks::AttackResult flip = attacks::cw_inf(model, x, cfg);
    CHECK(in_ball(flip.x_adv, x, cfg.epsilon));
    if (!flip.success) CHECK(flip.iterations_used == 40);
    if (flip.iterations_used < 40) CHECK(flip.success);
}

TEST_CASE("stress pushes the layer mean in the requested direction") {
    nn::Model model = small_model(6);
    data::LabeledSet set = data::gen_synthetic(2, 16, 9);
    const Tensor& x = set.images[0];

    attacks::AttackConfig cfg;
    cfg.epsilon = 8.0 / 256;
    cfg.alpha = 2.0 / 256;
    cfg.steps = 8;

    attacks::StressOutcome up = attacks::stress(model, x, 0, true, cfg);
    attacks::StressOutcome down = attacks::stress(model, x, 0, false, cfg);
    CHECK(up.mean_after > up.mean_before);
    CHECK(down.mean_after < down.mean_before);
    CHECK(up.mean_before == down.mean_before);

    CHECK_THROWS_AS(attacks::stress(model, x, 9, true, cfg), ConfigError);
}

TEST_CASE("guide attack replays as a feature-match composite") {
    nn::Model model = small_model(7);
    data::LabeledSet pool = data::gen_synthetic(10, 16, 10);
    data::LabeledSet probe = data::gen_synthetic(2, 16, 44);
    const Tensor& x = probe.images[0];

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 5;
    cfg.target = 1;
    cfg.seed = 21;
    cfg.addon_weight = 0.5;

    SUBCASE("random guide comes from the seeded pick") {
        attacks::AttackResult res = attacks::guide_attack(model, x, pool, attacks::GuideMode::Random, cfg);

        Rng rng(cfg.seed);
        const auto pick = static_cast<std::size_t>(rng.below(pool.size()));
        auto guide = std::make_shared<nn::FeatureTrace>(nn::forward_trace(model, pool.images[pick]));
        std::vector<std::size_t> layers;
        for (std::size_t l = 0; l < guide->num_activation_layers(); ++l) layers.push_back(l);
        attacks::AttackConfig manual = cfg;
        manual.addon = {{cfg.addon_weight, nn::LossSpec::feature_match(guide, layers)}};
        attacks::AttackResult ref = attacks::bim(model, x, manual);

        CHECK(res.x_adv.values() == ref.x_adv.values());
        CHECK(in_ball(res.x_adv, x, cfg.epsilon));
    }

    SUBCASE("closest guide minimizes the penultimate distance") {
        data::LabeledSet rigged = pool;
        rigged.images[3] = x; // distance zero, strictly minimal
        attacks::AttackResult res =
            attacks::guide_attack(model, x, rigged, attacks::GuideMode::Closest, cfg);

        auto guide = std::make_shared<nn::FeatureTrace>(nn::forward_trace(model, rigged.images[3]));
        std::vector<std::size_t> layers;
        for (std::size_t l = 0; l < guide->num_activation_layers(); ++l) layers.push_back(l);
        attacks::AttackConfig manual = cfg;
        manual.addon = {{cfg.addon_weight, nn::LossSpec::feature_match(guide, layers)}};
        attacks::AttackResult ref = attacks::bim(model, x, manual);

        CHECK(res.x_adv.values() == ref.x_adv.values());
    }

    SUBCASE("empty pool is rejected") {
        data::LabeledSet empty;
        CHECK_THROWS_AS(attacks::guide_attack(model, x, empty, attacks::GuideMode::Random, cfg),
                        ConfigError);
    }
}

TEST_CASE("kde-adaptive attack lowers the detector's own score") {
    nn::Model model = small_model(8);
    data::LabeledSet bank_set = data::gen_synthetic(40, 16, 13);

    // class-conditional penultimate banks for the detector
    std::vector<std::vector<std::vector<double>>> rows(2);
    for (std::size_t i = 0; i < bank_set.size(); ++i)
        rows[bank_set.labels[i]].push_back(nn::forward_trace(model, bank_set.images[i]).penultimate());
    std::vector<Tensor> banks;
    for (const auto& r : rows) {
        Tensor bank({r.size(), r.front().size()});
        for (std::size_t i = 0; i < r.size(); ++i)
            for (std::size_t j = 0; j < r.front().size(); ++j) bank.at(i, j) = r[i][j];
        banks.push_back(std::move(bank));
    }
    detectors::KdModel kd = detectors::fit_kd(banks);

    data::LabeledSet probe = data::gen_synthetic(2, 16, 14);
    const Tensor& x = probe.images[0];
    attacks::AttackConfig cfg;
    cfg.epsilon = 16.0 / 256;
    cfg.alpha = 2.0 / 256;
    cfg.steps = 16;
    cfg.target = 1;
    cfg.addon_weight = 1e4; // dominate the objective with the detector term

    attacks::AttackResult res = attacks::kde_adaptive(model, x, kd, cfg);
    CHECK(in_ball(res.x_adv, x, cfg.epsilon));

    const double before = detectors::score_kd(kd, nn::forward_trace(model, x).penultimate(), 1);
    const double after =
        detectors::score_kd(kd, nn::forward_trace(model, res.x_adv).penultimate(), 1);
    CHECK(after < before);
}

TEST_CASE("lid-adaptive attack validates its reference batch") {
    nn::Model model = small_model(9);
    data::LabeledSet probe = data::gen_synthetic(2, 16, 15);
    const Tensor& x = probe.images[0];

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 4;
    cfg.target = 1;
    cfg.lid_k = 5;

    const std::size_t width = nn::forward_trace(model, x).penultimate().size();
    Rng rng(3);
    Tensor refs({12, width});
    for (std::size_t i = 0; i < refs.size(); ++i) refs[i] = rng.normal();

    attacks::AttackResult res = attacks::lid_adaptive(model, x, refs, cfg);
    CHECK(in_ball(res.x_adv, x, cfg.epsilon));
    CHECK(res.iterations_used == 4);

    cfg.lid_k = 12; // k must stay below the batch size
    CHECK_THROWS_AS(attacks::lid_adaptive(model, x, refs, cfg), ConfigError);
    cfg.lid_k = 1;
    CHECK_THROWS_AS(attacks::lid_adaptive(model, x, refs, cfg), ConfigError);
}

TEST_CASE("attack batch persistence round trip") {
    nn::Model model = small_model(10);
    data::LabeledSet set = data::gen_synthetic(4, 16, 17);

    attacks::AttackConfig cfg;
    cfg.epsilon = 4.0 / 256;
    cfg.alpha = 1.0 / 256;
    cfg.steps = 3;
    cfg.target = 1;

    std::vector<attacks::AttackResult> results;
    for (std::size_t i = 0; i < set.size(); ++i)
        results.push_back(attacks::bim(model, set.images[i], cfg));

    const std::string json_path = "test_batch.json";
    const std::string blob_path = "test_batch.bin";
    attacks::save_attack_batch(results, set.ids, json_path, blob_path, true);
    attacks::AttackBatch loaded = attacks::load_attack_batch(json_path);
    std::remove(json_path.c_str());
    std::remove(blob_path.c_str());

    REQUIRE(loaded.results.size() == results.size());
    CHECK(loaded.sample_ids == set.ids);
    for (std::size_t i = 0; i < results.size(); ++i) {
        CHECK(loaded.results[i].x_adv.values() == results[i].x_adv.values());
        CHECK(loaded.results[i].x_adv.shape() == results[i].x_adv.shape());
        CHECK(loaded.results[i].success == results[i].success);
        CHECK(loaded.results[i].final_prediction == results[i].final_prediction);
        CHECK(loaded.results[i].iterations_used == results[i].iterations_used);
        CHECK(loaded.results[i].deltas == results[i].deltas);
    }
}
