#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "confikd/augment.hpp"
#include "confikd/distill.hpp"
#include "confikd/metrics.hpp"
#include "confikd/models.hpp"
#include "confikd/synthworld.hpp"
#include "confikd/theory.hpp"

namespace confikd {

// Every emitted number is a function of (config, seed); the config is dumped
// into each output directory so runs stay self-documenting.
struct ExperimentConfig {
    // world; scales tuned so spurious-only students reach low training risk
    int num_spurious_bits = 1;
    double class_scale = 1.0;
    double spurious_scale = 2.0;
    double noise_std = 0.5;
    std::uint64_t world_seed = 7;
    std::size_t n_train = 500, n_val = 400, n_test = 4000;

    // teacher
    std::string teacher = "exact_bayes";  // exact_bayes | noisy_bayes
    double teacher_corruption = 0.0;
    std::string teacher_split = "test";

    // student architecture (hidden widths; input/output sizes come from the world)
    std::vector<int> hidden = {32, 32};
    std::string activation = "relu";

    TrainConfig aux_train;    // stage-1 auxiliary student (distillation on real data)
    TrainConfig final_train;  // stage-3 final student

    // augmentation
    std::string method = "config";  // none | config | unconditional | noise-resample | latent-perturb | student-adversarial
    int multiplicity = 2;
    // latent ascent budget large enough to cross the spurious gap at this scale
    ConfigParams config_params{40, 0.15, 2.0};
    BaselineParams baseline_params;
    std::string generator = "affine";  // affine | mlp

    // theory verification
    std::size_t probe_budget = 4000;
    std::size_t risk_samples = 20000;
    double alpha_override = -1.0;  // < 0 means use min{1, omega/(2 theta)} / 2

    std::string checkpoint;  // eval input
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    static ExperimentConfig load(const std::string& path);
    void save(const std::string& path) const;
    std::string to_json_string() const;
    static ExperimentConfig from_json_string(const std::string& text);
};

World build_world(const ExperimentConfig& cfg);
Teacher build_teacher(const ExperimentConfig& cfg, const World& world);

struct PipelineResult {
    double worst_group = 0.0;
    double group_mean = 0.0;
    double sample_mean = 0.0;
    double agreement_present = 0.0;  // teacher agreement on train-present groups
    double agreement_absent = 0.0;
    double aux_worst_group = 0.0;
};

int cmd_bench(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_augment(const ExperimentConfig& cfg);
int cmd_pipeline(const ExperimentConfig& cfg, PipelineResult* result = nullptr);
int cmd_sweep_multiplicity(const ExperimentConfig& cfg, const std::vector<int>& m_list);
int cmd_verify_theory(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg);

}  // namespace confikd
