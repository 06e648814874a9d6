// Synthetic two-class "lesion present / absent" image sets and the split
// protocol used by the rest of the pipeline: Train for fitting the
// classifier, AdvTrain for fitting detectors, AdvTest for scoring them.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camo/nn.hpp"
#include "camo/tensor.hpp"

namespace camo::data {

struct LabeledSet {
    std::vector<Tensor> images;       // each in [0,1]
    std::vector<std::size_t> labels;  // 0 or 1
    std::vector<std::uint64_t> ids;   // stable, unique

    std::size_t size() const { return images.size(); }
    void validate() const; // length agreement, label range, id uniqueness
};

struct SplitBundle {
    LabeledSet train;
    LabeledSet adv_train;
    LabeledSet adv_test;
    std::uint64_t seed = 0;
};

struct SplitFractions {
    double train = 0.8;
    double adv_train_of_test = 0.7;
};

// Background gray level every image is built on.
inline constexpr double kBaseGray = 0.35;

// The fixed spatial pattern whose signed, per-sample-scaled copy carries the
// class label. A +/-1 block checkerboard, zero-mean on the pixel grid.
double class_template(std::size_t y, std::size_t x, std::size_t image_size);

// Both classes: kBaseGray base, smooth Gaussian-bump background, pixel noise.
// The label enters as +/- severity (0.7..0.9, amplitude 0.002) times
// class_template. Balanced classes, deterministic per seed.
LabeledSet gen_synthetic(std::size_t n, std::size_t image_size, std::uint64_t seed);

// 80% -> train; the rest is filtered to the model's correct predictions and
// split 70/30 into adv_train / adv_test.
SplitBundle make_splits(const LabeledSet& data, const nn::Model& model,
                        const SplitFractions& fractions, std::uint64_t seed);

// JSON metadata next to a flat little-endian float64 pixel file.
void save_set(const LabeledSet& set, const std::string& json_path,
              const std::string& pixels_path);
LabeledSet load_set(const std::string& json_path);

} // namespace camo::data
