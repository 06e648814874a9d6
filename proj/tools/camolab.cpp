// Command-line front end: one subcommand per experiment stage. Exit codes:
// 0 success, 2 configuration error, 3 failed precondition or degenerate data.

#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "camo/errors.hpp"
#include "camo/pipeline.hpp"

namespace {

using camo::pipeline::ExperimentConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
};

// Flag overrides land in the raw JSON before seed derivation, so a --seed
// override rederives the named seeds instead of keeping the file's.
ExperimentConfig resolve_config(const CommonFlags& flags) {
    nlohmann::json j = nlohmann::json::object();
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw camo::ConfigError("config: cannot open '" + flags.config_path + "'");
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw camo::ConfigError("config: invalid JSON in '" + flags.config_path +
                                    "': " + e.what());
        }
    }
    if (flags.seed_set) {
        j["seed"] = flags.seed;
        // named seeds rederive from the new master unless the file pinned them
        for (const char* k : {"data_seed", "model_seed", "shadow_seed", "split_seed",
                              "attack_seed", "detector_seed"})
            if (j.contains(k) && j[k].get<std::uint64_t>() == 0) j.erase(k);
    }
    if (!flags.out_dir.empty()) j["out_dir"] = flags.out_dir;
    return camo::pipeline::config_from_json(j);
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file (defaults apply without it)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", flags.seed, "master seed override")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_flag("--force", flags.force, "overwrite existing outputs");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale adversarial-camouflage laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;
    using Stage = void (*)(const ExperimentConfig&, bool);
    const std::pair<const char*, Stage> stages[] = {
        {"train", camo::pipeline::cmd_train},
        {"attack", camo::pipeline::cmd_attack},
        {"detect", camo::pipeline::cmd_detect},
        {"stress", camo::pipeline::cmd_stress},
        {"sweep", camo::pipeline::cmd_sweep},
        {"baselines", camo::pipeline::cmd_baselines},
        {"semiwhitebox", camo::pipeline::cmd_semiwhitebox},
        {"project", camo::pipeline::cmd_project},
        {"report", camo::pipeline::cmd_report},
    };
    const char* descriptions[] = {
        "train the classifier, carve the splits, fit the feature constraint",
        "run the attack grid with and without the constraint",
        "fit the detector suite and score every attack variant",
        "push per-layer feature means up and down under a pixel budget",
        "detector AUC across perturbation budgets",
        "adaptive attack baselines against the fitted detectors",
        "transfer attack through a shadow model onto the victim",
        "project penultimate features onto the top-2 clean PCs",
        "verify stage tables against the config hash and summarize",
    };

    std::function<void()> selected;
    for (std::size_t i = 0; i < std::size(stages); ++i) {
        CLI::App* cmd = app.add_subcommand(stages[i].first, descriptions[i]);
        add_common(cmd, flags);
        Stage fn = stages[i].second;
        cmd->callback([&, fn] { selected = [&, fn] { fn(resolve_config(flags), flags.force); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2; // bad usage is a configuration error
    }

    try {
        selected();
    } catch (const camo::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
