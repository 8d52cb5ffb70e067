#include "confikd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "confikd/rng.hpp"

namespace confikd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string edrm_form_name(EdrmForm f) {
    return f == EdrmForm::kl ? "kl" : "cross_entropy";
}
EdrmForm edrm_form_from_name(const std::string& s) {
    if (s == "kl") return EdrmForm::kl;
    if (s == "cross_entropy") return EdrmForm::cross_entropy;
    throw std::invalid_argument("unknown distillation loss form: " + s);
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"loss", loss_mode_name(c.loss_mode)},
                {"edrm_form", edrm_form_name(c.edrm_form)},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"base_lr", c.base_lr},
                {"weight_decay", c.weight_decay},
                {"mix", mix_mode_name(c.mix_mode)},
                {"mix_probability", c.mix_probability}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig base) {
    if (j.contains("loss")) base.loss_mode = loss_mode_from_name(j.at("loss"));
    if (j.contains("edrm_form")) base.edrm_form = edrm_form_from_name(j.at("edrm_form"));
    if (j.contains("epochs")) base.epochs = j.at("epochs");
    if (j.contains("batch_size")) base.batch_size = j.at("batch_size");
    if (j.contains("base_lr")) base.base_lr = j.at("base_lr");
    if (j.contains("weight_decay")) base.weight_decay = j.at("weight_decay");
    if (j.contains("mix")) base.mix_mode = mix_mode_from_name(j.at("mix"));
    if (j.contains("mix_probability")) base.mix_probability = j.at("mix_probability");
    return base;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<int> full_widths(const ExperimentConfig& cfg, const World& world) {
    std::vector<int> w;
    w.push_back(world.spec().input_dim);
    for (int h : cfg.hidden) w.push_back(h);
    w.push_back(world.spec().num_classes);
    return w;
}

Generator build_generator(const ExperimentConfig& cfg, const World& world) {
    if (cfg.generator == "affine")
        return Generator::affine_for_world(world, derive_seed(cfg.seed, "generator"));
    if (cfg.generator == "mlp") {
        const int d = world.spec().input_dim;
        return Generator::make_mlp({d, 8, d}, derive_seed(cfg.seed, "generator"), 1e-3);
    }
    throw std::invalid_argument("unknown generator kind: " + cfg.generator);
}

struct StageData {
    GroupedDataset train, val_restricted, test;
};

StageData sample_stage_data(const ExperimentConfig& cfg, const World& world) {
    StageData d;
    d.train = world.sample_split(Split::train, cfg.n_train, derive_seed(cfg.seed, "data-train"));
    d.val_restricted = world.sample_split(Split::val_restricted, cfg.n_val,
                                          derive_seed(cfg.seed, "data-val-restricted"));
    d.test = world.sample_split(Split::test, cfg.n_test, derive_seed(cfg.seed, "data-test"));
    return d;
}

MlpClassifier train_stage(const ExperimentConfig& cfg, const World& world,
                          const GroupedDataset& data, const GroupedDataset& val,
                          const Teacher& teacher, const TrainConfig& base,
                          std::string_view seed_tag, TrainReport* report_out) {
    TrainConfig tc = base;
    tc.seed = derive_seed(cfg.seed, seed_tag);
    MlpClassifier student(full_widths(cfg, world),
                          activation_from_name(cfg.activation),
                          derive_seed(cfg.seed, std::string(seed_tag) + "-init"));
    const Teacher* t = tc.loss_mode == LossMode::erm ? nullptr : &teacher;
    TrainReport rep = train_student(student, data, t, val, tc);
    if (report_out) *report_out = rep;
    return student;
}

void write_agreement(const AgreementReport& rep, const World& world, const std::string& path,
                     double* present_out, double* absent_out) {
    double present_sum = 0.0, absent_sum = 0.0;
    std::size_t present_n = 0, absent_n = 0;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "# schema: confikd.agreement.v1\n";
    f << "group,size,agreement,in_train\n";
    for (const auto& g : world.groups()) {
        const std::string key = g.key.str();
        auto it = rep.per_group.find(key);
        if (it == rep.per_group.end()) continue;
        const bool present = g.train_prior > 0.0;
        f << key << "," << rep.group_sizes.at(key) << "," << fmt(it->second) << ","
          << (present ? 1 : 0) << "\n";
        (present ? present_sum : absent_sum) += it->second;
        (present ? present_n : absent_n) += 1;
    }
    f << "overall,," << fmt(rep.overall) << ",\n";
    if (present_out) *present_out = present_n ? present_sum / (double)present_n : 0.0;
    if (absent_out) *absent_out = absent_n ? absent_sum / (double)absent_n : 0.0;
}

}  // namespace

std::string ExperimentConfig::to_json_string() const {
    json j{{"num_spurious_bits", num_spurious_bits},
           {"class_scale", class_scale},
           {"spurious_scale", spurious_scale},
           {"noise_std", noise_std},
           {"world_seed", world_seed},
           {"n_train", n_train},
           {"n_val", n_val},
           {"n_test", n_test},
           {"teacher", teacher},
           {"teacher_corruption", teacher_corruption},
           {"teacher_split", teacher_split},
           {"hidden", hidden},
           {"activation", activation},
           {"aux_train", train_config_to_json(aux_train)},
           {"final_train", train_config_to_json(final_train)},
           {"method", method},
           {"multiplicity", multiplicity},
           {"config_steps", config_params.steps},
           {"config_lr", config_params.lr},
           {"config_gamma", config_params.gamma},
           {"baseline_rho", baseline_params.rho},
           {"baseline_steps", baseline_params.steps},
           {"baseline_lr", baseline_params.lr},
           {"generator", generator},
           {"probe_budget", probe_budget},
           {"risk_samples", risk_samples},
           {"alpha_override", alpha_override},
           {"checkpoint", checkpoint},
           {"seed", seed},
           {"out_dir", out_dir}};
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("num_spurious_bits", c.num_spurious_bits);
    get("class_scale", c.class_scale);
    get("spurious_scale", c.spurious_scale);
    get("noise_std", c.noise_std);
    get("world_seed", c.world_seed);
    get("n_train", c.n_train);
    get("n_val", c.n_val);
    get("n_test", c.n_test);
    get("teacher", c.teacher);
    get("teacher_corruption", c.teacher_corruption);
    get("teacher_split", c.teacher_split);
    get("hidden", c.hidden);
    get("activation", c.activation);
    if (j.contains("aux_train")) c.aux_train = train_config_from_json(j.at("aux_train"), c.aux_train);
    if (j.contains("final_train"))
        c.final_train = train_config_from_json(j.at("final_train"), c.final_train);
    get("method", c.method);
    get("multiplicity", c.multiplicity);
    get("config_steps", c.config_params.steps);
    get("config_lr", c.config_params.lr);
    get("config_gamma", c.config_params.gamma);
    get("baseline_rho", c.baseline_params.rho);
    get("baseline_steps", c.baseline_params.steps);
    get("baseline_lr", c.baseline_params.lr);
    get("generator", c.generator);
    get("probe_budget", c.probe_budget);
    get("risk_samples", c.risk_samples);
    get("alpha_override", c.alpha_override);
    get("checkpoint", c.checkpoint);
    get("seed", c.seed);
    get("out_dir", c.out_dir);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_json_string(ss.str());
}

void ExperimentConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << to_json_string();
}

World build_world(const ExperimentConfig& cfg) {
    WorldSpec spec = WorldSpec::celeba_toy(cfg.num_spurious_bits);
    spec.class_scale = cfg.class_scale;
    spec.spurious_scale = cfg.spurious_scale;
    spec.noise_std = cfg.noise_std;
    return World(spec, cfg.world_seed);
}

Teacher build_teacher(const ExperimentConfig& cfg, const World& world) {
    const Split split = split_from_name(cfg.teacher_split);
    if (cfg.teacher == "exact_bayes") return Teacher::exact_bayes(world, split);
    if (cfg.teacher == "noisy_bayes")
        return Teacher::noisy_bayes(world, split, cfg.teacher_corruption);
    throw std::invalid_argument("unknown teacher kind: " + cfg.teacher);
}

int cmd_bench(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    const World world = build_world(cfg);
    const StageData d = sample_stage_data(cfg, world);
    const GroupedDataset val =
        world.sample_split(Split::val, cfg.n_val, derive_seed(cfg.seed, "data-val"));
    write_dataset_csv(d.train, join(cfg.out_dir, "train.csv"));
    write_dataset_csv(val, join(cfg.out_dir, "val.csv"));
    write_dataset_csv(d.val_restricted, join(cfg.out_dir, "val_restricted.csv"));
    write_dataset_csv(d.test, join(cfg.out_dir, "test.csv"));

    std::ofstream f(join(cfg.out_dir, "world.txt"));
    f << "# schema: confikd.world.v1\n";
    f << "groups " << world.groups().size() << "\n";
    for (const auto& g : world.groups()) {
        f << g.key.str() << " train_prior " << fmt(g.train_prior) << " test_prior "
          << fmt(g.test_prior) << "\n";
    }
    f << "posterior_discrepancy "
      << fmt(world.posterior_discrepancy(1000, derive_seed(cfg.seed, "discrepancy"))) << "\n";
    std::cout << "bench: wrote " << cfg.out_dir << " (" << d.train.size() << " train, "
              << d.test.size() << " test)\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    const World world = build_world(cfg);
    const Teacher teacher = build_teacher(cfg, world);
    const StageData d = sample_stage_data(cfg, world);
    TrainReport rep;
    MlpClassifier student =
        train_stage(cfg, world, d.train, d.val_restricted, teacher, cfg.final_train, "train", &rep);
    save_checkpoint(student, join(cfg.out_dir, "student.ckpt"));
    write_train_report_csv(rep, join(cfg.out_dir, "train_report.csv"));
    write_group_metrics_csv(group_metrics(student, d.test), join(cfg.out_dir, "metrics_test.csv"));
    std::cout << "train: worst-group acc " << fmt(worst_group_acc(student, d.test)) << "\n";
    return 0;
}

int cmd_augment(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    if (cfg.method == "none") throw std::invalid_argument("augment: method none generates nothing");
    const World world = build_world(cfg);
    const Teacher teacher = build_teacher(cfg, world);
    const StageData d = sample_stage_data(cfg, world);

    TrainConfig aux_cfg = cfg.aux_train;
    aux_cfg.loss_mode = LossMode::edrm;
    MlpClassifier aux =
        train_stage(cfg, world, d.train, d.val_restricted, teacher, aux_cfg, "aux", nullptr);
    save_checkpoint(aux, join(cfg.out_dir, "aux_student.ckpt"));

    const Generator gen = build_generator(cfg, world);
    AugmentationBatch batch = generate_batch(aug_method_from_name(cfg.method), d.train, &teacher,
                                             &aux, gen, cfg.multiplicity, cfg.config_params,
                                             cfg.baseline_params, derive_seed(cfg.seed, "augment"));
    write_batch_csv(batch, join(cfg.out_dir, "batch.csv"));
    write_traces(batch, join(cfg.out_dir, "traces.csv"));

    const DifficultyScores ds = difficulty_scores(aux, batch, teacher);
    std::ofstream f(join(cfg.out_dir, "difficulty.txt"));
    f << "# schema: confikd.difficulty.v1\n";
    f << "acc_s " << fmt(ds.acc_s) << "\nmean_R " << fmt(ds.mean_R) << "\nmean_R_D "
      << fmt(ds.mean_R_D) << "\nskipped " << batch.skipped << "\n";
    std::cout << "augment: " << batch.size() << " samples, acc_s " << fmt(ds.acc_s) << "\n";
    return 0;
}

int cmd_pipeline(const ExperimentConfig& cfg, PipelineResult* result) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    const World world = build_world(cfg);
    const Teacher teacher = build_teacher(cfg, world);
    const StageData d = sample_stage_data(cfg, world);
    write_dataset_csv(d.train, join(cfg.out_dir, "train.csv"));
    write_dataset_csv(d.val_restricted, join(cfg.out_dir, "val_restricted.csv"));
    write_dataset_csv(d.test, join(cfg.out_dir, "test.csv"));

    const bool augmented_run = cfg.method != "none" && cfg.multiplicity > 0;
    PipelineResult res;
    double alpha = 0.0;
    GroupedDataset final_data = d.train;

    if (augmented_run) {
        // stage 1: auxiliary student, distilled on real data only
        TrainConfig aux_cfg = cfg.aux_train;
        aux_cfg.loss_mode = LossMode::edrm;
        TrainReport aux_rep;
        MlpClassifier aux;
        try {
            aux = train_stage(cfg, world, d.train, d.val_restricted, teacher, aux_cfg, "aux",
                              &aux_rep);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("pipeline stage 1 (auxiliary student): ") + e.what());
        }
        save_checkpoint(aux, join(cfg.out_dir, "aux_student.ckpt"));
        write_train_report_csv(aux_rep, join(cfg.out_dir, "aux_train_report.csv"));
        write_group_metrics_csv(group_metrics(aux, d.test), join(cfg.out_dir, "metrics_aux.csv"));
        res.aux_worst_group = worst_group_acc(aux, d.test);

        // stage 2: m augmentations per real example
        AugmentationBatch batch;
        try {
            const Generator gen = build_generator(cfg, world);
            batch = generate_batch(aug_method_from_name(cfg.method), d.train, &teacher, &aux, gen,
                                   cfg.multiplicity, cfg.config_params, cfg.baseline_params,
                                   derive_seed(cfg.seed, "augment"));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("pipeline stage 2 (augmentation): ") + e.what());
        }
        write_batch_csv(batch, join(cfg.out_dir, "batch.csv"));
        write_traces(batch, join(cfg.out_dir, "traces.csv"));
        const DifficultyScores ds = difficulty_scores(aux, batch, teacher);
        {
            std::ofstream f(join(cfg.out_dir, "difficulty.txt"));
            f << "# schema: confikd.difficulty.v1\n";
            f << "acc_s " << fmt(ds.acc_s) << "\nmean_R " << fmt(ds.mean_R) << "\nmean_R_D "
              << fmt(ds.mean_R_D) << "\nskipped " << batch.skipped << "\n";
        }
        const AugmentedDataset joint = build_augmented_dataset(d.train, batch, cfg.multiplicity);
        final_data = joint.data;
        alpha = joint.alpha;
    }

    // stage 3: final student on the joint set
    TrainReport final_rep;
    MlpClassifier final_student;
    try {
        final_student = train_stage(cfg, world, final_data, d.val_restricted, teacher,
                                    cfg.final_train, "final", &final_rep);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("pipeline stage 3 (final student): ") + e.what());
    }
    save_checkpoint(final_student, join(cfg.out_dir, "final_student.ckpt"));
    write_train_report_csv(final_rep, join(cfg.out_dir, "final_train_report.csv"));
    const GroupMetricsReport gm = group_metrics(final_student, d.test);
    write_group_metrics_csv(gm, join(cfg.out_dir, "metrics_final.csv"));

    const AgreementReport agr = agreement(final_student, teacher, d.test);
    write_agreement(agr, world, join(cfg.out_dir, "agreement.csv"), &res.agreement_present,
                    &res.agreement_absent);

    res.worst_group = gm.worst_group;
    res.group_mean = gm.group_mean;
    res.sample_mean = gm.sample_mean;

    {
        std::ofstream f(join(cfg.out_dir, "summary.txt"));
        f << "# schema: confikd.pipeline_summary.v1\n";
        f << "method " << cfg.method << "\nmultiplicity " << cfg.multiplicity << "\nalpha "
          << fmt(alpha) << "\n";
        f << "final_dataset_size " << final_data.size() << "\n";
        f << "worst_group " << fmt(res.worst_group) << "\ngroup_mean " << fmt(res.group_mean)
          << "\nsample_mean " << fmt(res.sample_mean) << "\n";
        f << "aux_worst_group " << fmt(res.aux_worst_group) << "\n";
        f << "teacher_agreement_present_groups " << fmt(res.agreement_present) << "\n";
        f << "teacher_agreement_absent_groups " << fmt(res.agreement_absent) << "\n";
        f << "final_R_train " << fmt(final_rep.final_R_train) << "\nfinal_R_D_train "
          << fmt(final_rep.final_R_D_train) << "\n";
    }
    if (result) *result = res;
    std::cout << "pipeline: method " << cfg.method << " m " << cfg.multiplicity << " worst-group "
              << fmt(res.worst_group) << "\n";
    return 0;
}

int cmd_sweep_multiplicity(const ExperimentConfig& cfg, const std::vector<int>& m_list) {
    if (m_list.empty()) throw std::invalid_argument("sweep-multiplicity: empty multiplicity list");
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    std::ofstream f(join(cfg.out_dir, "sweep.csv"));
    if (!f) throw std::runtime_error("cannot write sweep.csv");
    f << "# schema: confikd.multiplicity_sweep.v1\n";
    f << "m,seed,worst_group,group_mean,sample_mean\n";
    for (int m : m_list) {
        ExperimentConfig sub = cfg;
        sub.multiplicity = m;
        if (m == 0) sub.method = "none";
        sub.out_dir = join(cfg.out_dir, "m_" + std::to_string(m));
        PipelineResult r;
        cmd_pipeline(sub, &r);
        f << m << "," << cfg.seed << "," << fmt(r.worst_group) << "," << fmt(r.group_mean) << ","
          << fmt(r.sample_mean) << "\n";
    }
    std::cout << "sweep-multiplicity: wrote " << join(cfg.out_dir, "sweep.csv") << "\n";
    return 0;
}

int cmd_verify_theory(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    const World world = build_world(cfg);
    const Teacher teacher = build_teacher(cfg, world);
    const StageData d = sample_stage_data(cfg, world);

    TrainConfig aux_cfg = cfg.aux_train;
    aux_cfg.loss_mode = LossMode::edrm;
    MlpClassifier student =
        train_stage(cfg, world, d.train, d.val_restricted, teacher, aux_cfg, "aux", nullptr);
    save_checkpoint(student, join(cfg.out_dir, "student.ckpt"));

    const Generator gen = build_generator(cfg, world);
    AugmentationBatch batch = generate_batch(AugMethod::config, d.train, &teacher, &student, gen,
                                             std::max(1, cfg.multiplicity), cfg.config_params,
                                             cfg.baseline_params, derive_seed(cfg.seed, "augment"));
    write_batch_csv(batch, join(cfg.out_dir, "batch.csv"));

    TheoryScenario sc;
    sc.world = &world;
    sc.teacher = &teacher;
    sc.student = &student;
    sc.q_batch = &batch;
    sc.probe_budget = cfg.probe_budget;
    sc.risk_samples = cfg.risk_samples;
    sc.seed = derive_seed(cfg.seed, "theory");

    double alpha = cfg.alpha_override;
    if (alpha < 0.0) {
        // pilot pass to get omega and theta, then the admissible midpoint
        sc.alpha = 0.0;
        const TheoryReport pilot = verify_proposition(sc);
        alpha = 0.5;
        if (pilot.theta_positive && pilot.omega.value > 0.0)
            alpha = 0.5 * std::min(1.0, pilot.omega.value / (2.0 * pilot.theta));
    }
    sc.alpha = alpha;
    const TheoryReport rep = verify_proposition(sc);
    write_theory_report(rep, join(cfg.out_dir, "theory_report.txt"));

    std::cout << "verify-theory: alpha " << fmt(rep.alpha) << " omega " << fmt(rep.omega.value)
              << " theta " << fmt(rep.theta) << "\n";
    std::cout << "assumptions " << (rep.assumptions_ok ? "satisfied" : "unsatisfied")
              << ", risk-gap bound "
              << (rep.bound_checked ? (rep.bound_holds ? "holds" : "VIOLATED") : "not checked")
              << ", deviation bound "
              << (rep.lemma_applicable ? (rep.lemma_holds ? "holds" : "VIOLATED") : "not applicable")
              << "\n";

    const bool prop_fail = rep.bound_checked && !rep.bound_holds;
    const bool lemma_fail = rep.lemma_applicable && !rep.lemma_holds;
    return (prop_fail || lemma_fail) ? 1 : 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("eval: no checkpoint given");
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    const World world = build_world(cfg);
    const MlpClassifier model = load_checkpoint(cfg.checkpoint);
    const GroupedDataset test =
        world.sample_split(Split::test, cfg.n_test, derive_seed(cfg.seed, "data-test"));
    const GroupMetricsReport gm = group_metrics(model, test);
    write_group_metrics_csv(gm, join(cfg.out_dir, "metrics_eval.csv"));
    std::cout << "eval: worst-group " << fmt(gm.worst_group) << " sample-mean "
              << fmt(gm.sample_mean) << "\n";
    return 0;
}

}  // namespace confikd
