#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <vector>

#include "camo/data.hpp"
#include "camo/errors.hpp"
#include "camo/nn.hpp"

using namespace camo;

namespace {

nn::Model tiny_model(std::uint64_t seed, std::size_t image_size) {
    std::vector<nn::LayerSpec> arch = {
        nn::LayerSpec::conv2d(1, 4, 3), nn::LayerSpec::relu(), nn::LayerSpec::global_pool(),
        nn::LayerSpec::dense(4, 2)};
    Rng rng(seed);
    return nn::build_model({1, image_size, image_size}, arch, rng);
}

} // namespace

TEST_CASE("synthetic set: determinism, balance, range") {
    data::LabeledSet a = data::gen_synthetic(40, 12, 7);
    data::LabeledSet b = data::gen_synthetic(40, 12, 7);
    data::LabeledSet c = data::gen_synthetic(40, 12, 8);

    a.validate();
    REQUIRE(a.size() == 40);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.labels[i] == i % 2);
        ones += a.labels[i];
        CHECK(a.images[i].shape() == std::vector<std::size_t>{1, 12, 12});
        for (double v : a.images[i].values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(a.images[i].values() == b.images[i].values());
    }
    CHECK(ones == 20);

    bool different = false;
    for (std::size_t i = 0; i < a.size() && !different; ++i)
        different = a.images[i].values() != c.images[i].values();
    CHECK(different);
}

TEST_CASE("synthetic set: per-sample streams do not depend on n") {
    data::LabeledSet small = data::gen_synthetic(4, 10, 3);
    data::LabeledSet big = data::gen_synthetic(12, 10, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(small.images[i].values() == big.images[i].values());
        CHECK(small.ids[i] == big.ids[i]);
    }
}

TEST_CASE("synthetic set: template projection separates the classes") {
    data::LabeledSet set = data::gen_synthetic(200, 16, 11);

    // matched filter on the label-carrying pattern: backgrounds, grating and
    // noise are (near-)orthogonal to it, the signed severity is not
    std::size_t sign_hits = 0;
    double mean0 = 0.0, mean1 = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        double proj = 0.0;
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                proj += set.images[i].at(0, y, x) * data::class_template(y, x, 16);
        (set.labels[i] == 0 ? mean0 : mean1) += proj;
        if ((proj > 0.0) == (set.labels[i] == 1)) ++sign_hits;
    }
    mean0 /= 100.0;
    mean1 /= 100.0;
    CHECK(mean1 > 0.0);
    CHECK(mean0 < 0.0);
    CHECK(sign_hits >= 190); // near-separable by the template sign alone

    // amplitude calibration: the class gap along the template is
    // 2 * mean severity (0.8) * amplitude (0.002) * pixel count (256)
    CHECK(mean1 - mean0 > 0.7);
    CHECK(mean1 - mean0 < 1.0);

    // per-pixel class evidence stays tiny: no pixel's class-mean gap comes
    // close to the bright-landmark regime
    Tensor gap({1, 16, 16});
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double w = set.labels[i] == 1 ? 0.01 : -0.01; // 1/100 per class
        for (std::size_t j = 0; j < gap.size(); ++j) gap[j] += w * set.images[i][j];
    }
    double max_gap = 0.0;
    for (double v : gap.values()) max_gap = std::max(max_gap, std::abs(v));
    CHECK(max_gap < 0.03);
}

TEST_CASE("synthetic set: input validation") {
    CHECK_THROWS_AS(data::gen_synthetic(0, 12, 1), ConfigError);
    CHECK_THROWS_AS(data::gen_synthetic(7, 12, 1), ConfigError);
    CHECK_THROWS_AS(data::gen_synthetic(10, 5, 1), ConfigError);
}

TEST_CASE("splits: partition, counts, and correctness filter") {
    data::LabeledSet set = data::gen_synthetic(100, 8, 21);
    nn::Model model = tiny_model(5, 8);
    model.trained = true; // split logic only needs a deterministic predictor

    data::SplitBundle bundle = data::make_splits(set, model, {}, 77);

    CHECK(bundle.train.size() == 80);
    const std::size_t kept = bundle.adv_train.size() + bundle.adv_test.size();
    CHECK(kept <= 20);
    CHECK(bundle.adv_test.size() >= 1);
    CHECK(bundle.adv_train.size() ==
          static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(kept))));

    // every id appears at most once across the three splits
    std::set<std::uint64_t> seen;
    for (const data::LabeledSet* part : {&bundle.train, &bundle.adv_train, &bundle.adv_test})
        for (std::uint64_t id : part->ids) CHECK(seen.insert(id).second);
    CHECK(seen.size() == 80 + kept);

    // the adversarial pools hold only correctly predicted samples
    for (const data::LabeledSet* part : {&bundle.adv_train, &bundle.adv_test})
        for (std::size_t i = 0; i < part->size(); ++i)
            CHECK(nn::predict(model, part->images[i]) == part->labels[i]);

    // deterministic in the seed
    data::SplitBundle again = data::make_splits(set, model, {}, 77);
    CHECK(again.train.ids == bundle.train.ids);
    CHECK(again.adv_train.ids == bundle.adv_train.ids);
    CHECK(again.adv_test.ids == bundle.adv_test.ids);
    data::SplitBundle other = data::make_splits(set, model, {}, 78);
    CHECK(other.train.ids != bundle.train.ids);
}

TEST_CASE("splits: fraction rounding is nearest, not floor") {
    data::LabeledSet set = data::gen_synthetic(200, 8, 4);
    nn::Model model = tiny_model(6, 8);
    model.trained = true;
    data::SplitBundle bundle = data::make_splits(set, model, {}, 9);
    // 0.8 * 200 in floating point falls a hair under 160
    CHECK(bundle.train.size() == 160);
}

TEST_CASE("splits: error paths") {
    data::LabeledSet set = data::gen_synthetic(20, 8, 2);
    nn::Model model = tiny_model(5, 8);

    CHECK_THROWS_AS(data::make_splits(set, model, {}, 1), PreconditionError); // untrained
    model.trained = true;
    CHECK_THROWS_AS(data::make_splits(set, model, {1.0, 0.7}, 1), ConfigError);
    CHECK_THROWS_AS(data::make_splits(set, model, {0.8, 0.0}, 1), ConfigError);

    // force the classifier to predict class 0 everywhere, then demand class 1
    nn::Model stubborn = tiny_model(5, 8);
    stubborn.trained = true;
    Tensor& w = stubborn.weights.back();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
    stubborn.biases.back() = Tensor::vector({10.0, 0.0});
    data::LabeledSet all_ones = set;
    for (auto& label : all_ones.labels) label = 1;
    CHECK_THROWS_AS(data::make_splits(all_ones, stubborn, {}, 1), ConfigError);
}

TEST_CASE("set persistence round trip") {
    data::LabeledSet set = data::gen_synthetic(10, 8, 15);
    const std::string json_path = "test_set.json";
    const std::string blob_path = "test_set_pixels.bin";
    data::save_set(set, json_path, blob_path);
    data::LabeledSet loaded = data::load_set(json_path);

    REQUIRE(loaded.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(loaded.images[i].shape() == set.images[i].shape());
        CHECK(loaded.images[i].values() == set.images[i].values());
        CHECK(loaded.labels[i] == set.labels[i]);
        CHECK(loaded.ids[i] == set.ids[i]);
    }

    // truncated blob must be rejected, not silently zero-padded
    {
        std::ofstream trunc(blob_path, std::ios::binary | std::ios::trunc);
        std::vector<char> junk(100, 0);
        trunc.write(junk.data(), static_cast<std::streamsize>(junk.size()));
    }
    CHECK_THROWS_AS(data::load_set(json_path), PreconditionError);
    std::remove(json_path.c_str());
    std::remove(blob_path.c_str());
}
