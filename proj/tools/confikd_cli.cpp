#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "confikd/pipeline.hpp"

using confikd::ExperimentConfig;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string method;
    std::string loss;
    std::string mix;
    std::string checkpoint;
    long long seed = -1;
    int multiplicity = -1;
};

void add_common(CLI::App* cmd, CommonFlags& fl) {
    cmd->add_option("--config", fl.config_path, "configuration file (json)");
    cmd->add_option("--seed", fl.seed, "master seed override");
    cmd->add_option("--out", fl.out_dir, "output directory override");
    cmd->add_option("--method", fl.method,
                    "augmentation method: none, config, unconditional, noise-resample, "
                    "latent-perturb, student-adversarial");
    cmd->add_option("--multiplicity", fl.multiplicity, "augmentations per real example");
    cmd->add_option("--loss", fl.loss, "final-student loss: erm, edrm, erm+edrm");
    cmd->add_option("--mix", fl.mix, "input mixing: none, mask, convex");
    cmd->add_option("--checkpoint", fl.checkpoint, "checkpoint path (eval)");
}

ExperimentConfig make_config(const CommonFlags& fl) {
    ExperimentConfig cfg;
    if (!fl.config_path.empty()) cfg = ExperimentConfig::load(fl.config_path);
    if (fl.seed >= 0) cfg.seed = (std::uint64_t)fl.seed;
    if (!fl.out_dir.empty()) cfg.out_dir = fl.out_dir;
    if (!fl.method.empty()) cfg.method = fl.method;
    if (fl.multiplicity >= 0) cfg.multiplicity = fl.multiplicity;
    if (!fl.loss.empty()) cfg.final_train.loss_mode = confikd::loss_mode_from_name(fl.loss);
    if (!fl.mix.empty()) cfg.final_train.mix_mode = confikd::mix_mode_from_name(fl.mix);
    if (!fl.checkpoint.empty()) cfg.checkpoint = fl.checkpoint;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group-shift distillation benchmark and confidence-guided augmentation"};
    app.require_subcommand(1);

    CommonFlags bench_fl, train_fl, augment_fl, pipeline_fl, sweep_fl, theory_fl, eval_fl;
    std::vector<int> m_list{0, 1, 2, 5, 10};

    add_common(app.add_subcommand("bench", "generate the synthetic benchmark datasets"), bench_fl);
    add_common(app.add_subcommand("train", "train a single student"), train_fl);
    add_common(app.add_subcommand("augment", "generate an augmentation batch"), augment_fl);
    add_common(app.add_subcommand("pipeline", "auxiliary student, augmentation, final student"),
               pipeline_fl);
    CLI::App* sweep = app.add_subcommand("sweep-multiplicity", "pipeline across multiplicities");
    add_common(sweep, sweep_fl);
    sweep->add_option("--m-list", m_list, "multiplicities to sweep");
    add_common(app.add_subcommand("verify-theory", "numerical check of the risk-gap bound"),
               theory_fl);
    add_common(app.add_subcommand("eval", "evaluate a saved checkpoint"), eval_fl);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("bench")) return confikd::cmd_bench(make_config(bench_fl));
        if (app.got_subcommand("train")) return confikd::cmd_train(make_config(train_fl));
        if (app.got_subcommand("augment")) return confikd::cmd_augment(make_config(augment_fl));
        if (app.got_subcommand("pipeline")) return confikd::cmd_pipeline(make_config(pipeline_fl));
        if (app.got_subcommand("sweep-multiplicity"))
            return confikd::cmd_sweep_multiplicity(make_config(sweep_fl), m_list);
        if (app.got_subcommand("verify-theory"))
            return confikd::cmd_verify_theory(make_config(theory_fl));
        if (app.got_subcommand("eval")) return confikd::cmd_eval(make_config(eval_fl));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
