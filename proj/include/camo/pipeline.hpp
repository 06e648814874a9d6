// Experiment orchestration: stage functions behind the command-line tool.
// Every stage reads its inputs from the output directory, writes its
// artifacts there, and stamps emitted tables with the config hash so results
// from different configurations can never be aggregated by accident.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace camo::pipeline {

struct TrainParams {
    double lr = 0.01;
    std::size_t epochs = 60;
    std::size_t batch = 16;
};

struct AttackParams {
    double epsilon = 8.0 / 256; // the potent main budget
    // Step size doubles as the landing precision of the constrained attack:
    // each sign step moves the template-matched response by alpha times the
    // pixel count, and that quantum has to fit inside the clean clusters.
    double alpha = 0.125 / 256;
    std::size_t steps = 0; // 0 -> round(2 * epsilon / alpha)
    double kappa = 0.0;
};

struct HfcParams {
    std::size_t k = 2;
    std::vector<std::size_t> layers; // empty = every activation layer
    double weight = 1.0;             // add-on weight next to CE's 1.0
    std::size_t gmm_max_iter = 100;
    double gmm_tol = 1e-6;
    double gmm_reg = 1e-6;
};

struct StressParams {
    double epsilon = 8.0 / 256;
    double alpha = 0.5 / 256;
    std::size_t steps = 0;
    std::size_t samples = 16; // images drawn from the front of AdvTest
};

struct ExperimentConfig {
    // master seed; the named seeds are derived from it unless set explicitly
    std::uint64_t seed = 1;
    std::uint64_t data_seed = 0;
    std::uint64_t model_seed = 0;
    std::uint64_t shadow_seed = 0;
    std::uint64_t split_seed = 0;
    std::uint64_t attack_seed = 0;
    std::uint64_t detector_seed = 0;

    std::size_t n_samples = 1000;
    std::size_t image_size = 16;
    std::string arch = "desk-cnn-v1"; // the only registered architecture

    TrainParams train;
    AttackParams attack;
    std::vector<std::string> grid_attacks = {"fgsm", "bim", "pgd", "cw"};
    std::vector<double> sweep_epsilons = {0.5 / 256, 1.0 / 256, 2.0 / 256, 4.0 / 256};
    double semiwhitebox_epsilon = 4.0 / 256;
    HfcParams hfc;
    StressParams stress;

    std::vector<std::string> detectors = {"kd", "bu", "lid", "maha", "mgm", "svm", "dnn"};
    std::size_t bu_samples = 20;
    std::size_t lid_k = 20;

    std::string out_dir = "out";
    std::size_t workers = 0; // 0 -> hardware concurrency (capped at 8)

    void validate() const;
    void derive_seeds(); // fills any zero named seed from the master seed
};

// JSON round trip; unknown keys are rejected so typos cannot silently fall
// back to defaults. from_json starts from defaults and overlays.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

// Hash of the experiment identity: everything except out_dir and workers.
std::uint64_t config_hash(const ExperimentConfig& cfg);

// Well-known artifact locations under cfg.out_dir.
struct Paths {
    explicit Paths(const ExperimentConfig& cfg);
    std::string root;
    std::string config() const;
    std::string model() const;
    std::string shadow_model() const;
    std::string split_json(const std::string& name) const;  // train / adv_train / adv_test
    std::string split_pixels(const std::string& name) const;
    std::string hfc_model(std::size_t target_class) const;
    std::string shadow_hfc_model(std::size_t target_class) const;
    std::string attack_json(const std::string& tag) const;
    std::string attack_blob(const std::string& tag) const;
    std::string detector_json(const std::string& eps_tag, const std::string& name) const;
    std::string csv(const std::string& name) const;
};

// Stage entry points. Each refuses to overwrite existing primary outputs
// unless force is set, and throws PreconditionError when inputs are missing.
void cmd_train(const ExperimentConfig& cfg, bool force);
void cmd_attack(const ExperimentConfig& cfg, bool force);
void cmd_detect(const ExperimentConfig& cfg, bool force);
void cmd_stress(const ExperimentConfig& cfg, bool force);
void cmd_sweep(const ExperimentConfig& cfg, bool force);
void cmd_baselines(const ExperimentConfig& cfg, bool force);
void cmd_semiwhitebox(const ExperimentConfig& cfg, bool force);
void cmd_project(const ExperimentConfig& cfg, bool force);
void cmd_report(const ExperimentConfig& cfg, bool force);

// train through report, in dependency order.
void run_all(const ExperimentConfig& cfg, bool force);

// Epsilon tag used in file names: eps8 for 8/256, eps0.5 for 0.5/256.
std::string eps_tag(double epsilon);

} // namespace camo::pipeline
