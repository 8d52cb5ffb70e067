#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "confikd/pipeline.hpp"

using namespace confikd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

ExperimentConfig tiny_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.n_train = 60;
    cfg.n_val = 60;
    cfg.n_test = 200;
    cfg.hidden = {8};
    cfg.aux_train.epochs = 4;
    cfg.final_train.epochs = 4;
    cfg.multiplicity = 1;
    cfg.config_params.steps = 5;
    cfg.probe_budget = 200;
    cfg.risk_samples = 1000;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("experiment config json round trip preserves every field") {
    ExperimentConfig cfg;
    cfg.num_spurious_bits = 2;
    cfg.class_scale = 1.25;
    cfg.spurious_scale = 0.75;
    cfg.noise_std = 0.4;
    cfg.world_seed = 99;
    cfg.n_train = 123;
    cfg.teacher = "noisy_bayes";
    cfg.teacher_corruption = 0.03;
    cfg.hidden = {5, 7};
    cfg.activation = "tanh";
    cfg.aux_train.loss_mode = LossMode::erm_plus_edrm;
    cfg.aux_train.edrm_form = EdrmForm::cross_entropy;
    cfg.aux_train.epochs = 17;
    cfg.aux_train.mix_mode = MixMode::mask_mix;
    cfg.aux_train.mix_probability = 0.25;
    cfg.final_train.base_lr = 0.005;
    cfg.method = "latent-perturb";
    cfg.multiplicity = 7;
    cfg.config_params.steps = 11;
    cfg.config_params.lr = 0.2;
    cfg.config_params.gamma = 3.0;
    cfg.baseline_params.rho = 0.45;
    cfg.generator = "mlp";
    cfg.probe_budget = 333;
    cfg.risk_samples = 444;
    cfg.alpha_override = 0.4;
    cfg.checkpoint = "ckpt.txt";
    cfg.seed = 31;
    cfg.out_dir = "elsewhere";

    ExperimentConfig back = ExperimentConfig::from_json_string(cfg.to_json_string());
    CHECK(back.to_json_string() == cfg.to_json_string());
    CHECK(back.num_spurious_bits == 2);
    CHECK(back.noise_std == 0.4);
    CHECK(back.teacher == "noisy_bayes");
    CHECK(back.hidden == std::vector<int>{5, 7});
    CHECK(back.aux_train.loss_mode == LossMode::erm_plus_edrm);
    CHECK(back.aux_train.mix_mode == MixMode::mask_mix);
    CHECK(back.aux_train.mix_probability == 0.25);
    CHECK(back.final_train.base_lr == 0.005);
    CHECK(back.method == "latent-perturb");
    CHECK(back.multiplicity == 7);
    CHECK(back.config_params.gamma == 3.0);
    CHECK(back.baseline_params.rho == 0.45);
    CHECK(back.alpha_override == 0.4);
    CHECK(back.seed == 31);

    CHECK_THROWS(ExperimentConfig::from_json_string("not json"));
    CHECK_THROWS(ExperimentConfig::load("/nonexistent/path.json"));
}

TEST_CASE("config file save and load round trip") {
    fs::path dir = fs::temp_directory_path() / "confikd_cfg_test";
    fs::create_directories(dir);
    ExperimentConfig cfg;
    cfg.seed = 1234;
    cfg.save((dir / "cfg.json").string());
    ExperimentConfig back = ExperimentConfig::load((dir / "cfg.json").string());
    CHECK(back.to_json_string() == cfg.to_json_string());
    fs::remove_all(dir);
}

TEST_CASE("world and teacher construction follow the config") {
    ExperimentConfig cfg;
    cfg.num_spurious_bits = 1;
    World w = build_world(cfg);
    CHECK(w.spec().num_classes == 2);
    CHECK(w.spec().input_dim == 3);
    CHECK(w.groups().size() == 4);

    Teacher t = build_teacher(cfg, w);
    CHECK(t.kind() == Teacher::Kind::exact_bayes);

    cfg.teacher = "noisy_bayes";
    cfg.teacher_corruption = 0.05;
    Teacher nt = build_teacher(cfg, w);
    CHECK(nt.declared_delta_t() == 0.05);

    cfg.teacher = "unknown";
    CHECK_THROWS(build_teacher(cfg, w));
}

TEST_CASE("pipeline reruns are byte identical and seeds matter") {
    fs::path base = fs::temp_directory_path() / "confikd_pipe_test";
    fs::remove_all(base);
    ExperimentConfig a = tiny_config((base / "a").string());
    ExperimentConfig b = tiny_config((base / "b").string());
    ExperimentConfig c = tiny_config((base / "c").string());
    c.seed = 2;

    PipelineResult ra, rb, rc;
    CHECK(cmd_pipeline(a, &ra) == 0);
    CHECK(cmd_pipeline(b, &rb) == 0);
    CHECK(cmd_pipeline(c, &rc) == 0);

    int compared = 0;
    for (const auto& entry : fs::directory_iterator(base / "a")) {
        const auto name = entry.path().filename();
        if (name == "config.json") continue;  // records out_dir, which differs by design
        CHECK(slurp(entry.path()) == slurp(base / "b" / name));
        ++compared;
    }
    CHECK(compared > 3);
    CHECK(ra.worst_group == rb.worst_group);
    CHECK(ra.sample_mean == rb.sample_mean);
    // a different seed must actually change the run
    CHECK(slurp(base / "a" / "summary.txt") != slurp(base / "c" / "summary.txt"));
    fs::remove_all(base);
}

TEST_CASE("skipping augmentation trains on the raw data only") {
    fs::path base = fs::temp_directory_path() / "confikd_none_test";
    fs::remove_all(base);
    ExperimentConfig cfg = tiny_config((base / "none").string());
    cfg.method = "none";
    PipelineResult r;
    CHECK(cmd_pipeline(cfg, &r) == 0);
    const std::string summary = slurp(base / "none" / "summary.txt");
    CHECK(summary.find("method none") != std::string::npos);
    CHECK(summary.find("final_dataset_size 60") != std::string::npos);
    CHECK(summary.find("alpha 0") != std::string::npos);
    fs::remove_all(base);
}
