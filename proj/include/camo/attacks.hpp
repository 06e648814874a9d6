// L-infinity attack family (FGSM, BIM, PGD, CW) around one sign-gradient
// engine, plus the feature stress test and the adaptive baselines that fold
// detector knowledge into the objective. Every attack accepts an optional
// add-on loss; that hook is how the feature-constraint penalty rides along.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "camo/data.hpp"
#include "camo/nn.hpp"
#include "camo/tensor.hpp"

namespace camo::detectors {
struct KdModel;
}

namespace camo::attacks {

struct AttackConfig {
    double epsilon = 1.0 / 256;
    double alpha = 0.02 / 256;
    std::size_t steps = 0; // 0 -> round(2 * epsilon / alpha)
    std::size_t target = 0;
    double kappa = 0.0;
    bool random_start = false; // PGD
    std::uint64_t seed = 0;    // PGD start noise, random guide choice
    std::optional<std::pair<double, nn::LossSpec>> addon;
    double addon_weight = 1.0; // guide / kde / lid builders
    std::size_t lid_k = 20;
    bool record_deltas = true;      // per-step penultimate z_t - z_0
    bool record_trajectory = false; // per-step x_t snapshots

    std::size_t resolved_steps() const;
    void validate() const;
};

struct AttackResult {
    Tensor x_adv;
    bool success = false; // final prediction == target
    std::size_t final_prediction = 0;
    std::size_t iterations_used = 0;
    std::vector<std::vector<double>> deltas; // z after step t, minus clean z
    std::vector<Tensor> trajectory;          // filled only when requested
    double final_objective = 0.0;
};

// Elementwise clamp into [x - eps, x + eps] intersected with [0, 1].
Tensor clip_ball(const Tensor& x_adv, const Tensor& x, double epsilon);

AttackResult fgsm(const nn::Model& model, const Tensor& x, const AttackConfig& cfg);
AttackResult bim(const nn::Model& model, const Tensor& x, const AttackConfig& cfg);
AttackResult pgd(const nn::Model& model, const Tensor& x, const AttackConfig& cfg);
// Margin objective max(l_best_other - l_target, -kappa); stops early once
// the margin reaches the floor, unless an add-on keeps the attack running.
AttackResult cw_inf(const nn::Model& model, const Tensor& x, const AttackConfig& cfg);

struct StressOutcome {
    double mean_before = 0.0;
    double mean_after = 0.0;
};

// BIM on the mean activation of one layer: up pushes the features higher,
// down pushes them lower. Reports the layer mean before and after.
StressOutcome stress(const nn::Model& model, const Tensor& x, std::size_t act_layer, bool up,
                     const AttackConfig& cfg);

enum class GuideMode { Random, Closest };

// Match the guide's activations at every hidden layer while steering the
// prediction to the target. The guide comes from the pool: uniformly random
// or the one with the nearest penultimate features.
AttackResult guide_attack(const nn::Model& model, const Tensor& x, const data::LabeledSet& pool,
                          GuideMode mode, const AttackConfig& cfg);

// Cross-entropy plus the detector's own score as a penalty.
AttackResult kde_adaptive(const nn::Model& model, const Tensor& x,
                          const detectors::KdModel& kd, const AttackConfig& cfg);
AttackResult lid_adaptive(const nn::Model& model, const Tensor& x, const Tensor& ref_batch,
                          const AttackConfig& cfg);

// Batch persistence: JSON index next to a raw float64 image blob.
void save_attack_batch(const std::vector<AttackResult>& results,
                       const std::vector<std::uint64_t>& sample_ids, const std::string& json_path,
                       const std::string& blob_path, bool with_deltas = false);
struct AttackBatch {
    std::vector<AttackResult> results;
    std::vector<std::uint64_t> sample_ids;
};
AttackBatch load_attack_batch(const std::string& json_path);

} // namespace camo::attacks
