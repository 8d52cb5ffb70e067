#include <doctest.h>

#include <cmath>
#include <sstream>

#include "confikd/augment.hpp"
#include "confikd/rng.hpp"

using namespace confikd;

TEST_CASE("confidence objective hand values") {
    CHECK(config_objective(1.0, 0.0, 2.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(config_objective(0.9, 0.9, 2.0) == doctest::Approx(0.82).epsilon(1e-15));
    // gamma = 1 reduces to t + (1 - f)
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const double t = rng.uniform(), f = rng.uniform();
        CHECK(config_objective(t, f, 1.0) == doctest::Approx(t + (1.0 - f)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(config_objective(0.5, 0.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(config_objective(0.5, 0.5, -1.0), std::invalid_argument);
}

TEST_CASE("method names round trip") {
    for (auto m : {AugMethod::config, AugMethod::unconditional, AugMethod::noise_resample,
                   AugMethod::latent_perturb, AugMethod::student_adversarial})
        CHECK(aug_method_from_name(aug_method_name(m)) == m);
    CHECK_THROWS_AS(aug_method_from_name("nope"), std::invalid_argument);
}

TEST_CASE("affine generator is orthogonal and exactly invertible") {
    World w(WorldSpec::celeba_toy(1), 1);
    Generator g = Generator::affine_for_world(w, 5);
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        Vec z = rng.gaussian_vec(3);
        Vec x = g.decode(z);
        // orthogonal map preserves length
        double nz = 0.0, nx = 0.0;
        for (double v : z) nz += v * v;
        for (double v : x) nx += v * v;
        CHECK(nx == doctest::Approx(nz).epsilon(1e-10));

        auto inv = g.invert(x);
        CHECK(inv.ok);
        CHECK(inv.reconstruction_error < 1e-10);
        for (int j = 0; j < 3; ++j) CHECK(inv.z[j] == doctest::Approx(z[j]).epsilon(1e-10));
    }
    CHECK_THROWS_AS(g.decode({1.0}), std::invalid_argument);
    CHECK_THROWS_AS(g.invert({1.0}), std::invalid_argument);
}

TEST_CASE("decode subgraph matches the direct decode") {
    World w(WorldSpec::celeba_toy(1), 1);
    for (auto g : {Generator::affine_for_world(w, 3), Generator::make_mlp({3, 8, 3}, 3, 1e-3)}) {
        Rng rng(4);
        Vec z = rng.gaussian_vec(3);
        Vec direct = g.decode(z);
        Tape t;
        auto zid = t.leaf(Tensor::vec(z));
        const Tensor& v = t.forward(g.emit_decode(t, zid));
        for (int i = 0; i < 3; ++i) CHECK(v.at(i) == doctest::Approx(direct[i]).epsilon(1e-14));
    }
}

TEST_CASE("mlp generator inversion recovers decoded points or flags failure") {
    Generator g = Generator::make_mlp({2, 8, 2}, 11, 1e-3);
    Rng rng(13);
    Vec z = rng.gaussian_vec(2);
    Vec x = g.decode(z);
    auto inv = g.invert(x);
    CHECK(inv.ok);
    CHECK(inv.reconstruction_error <= 1e-3);
    Vec rec = g.decode(inv.z);
    for (int i = 0; i < 2; ++i) CHECK(rec[i] == doctest::Approx(x[i]).epsilon(1e-2));

    // an unreachable tolerance turns into a flagged failure, not a throw
    Generator strict = Generator::make_mlp({2, 8, 2}, 11, 1e-15);
    auto bad = strict.invert({50.0, -50.0});
    CHECK_FALSE(bad.ok);
}

TEST_CASE("zero-scale baselines reproduce the source input") {
    World w(WorldSpec::celeba_toy(1), 1);
    Generator g = Generator::affine_for_world(w, 5);
    BaselineParams p;
    p.rho = 0.0;
    Vec x{0.4, -1.2, 0.7};
    for (auto kind : {AugMethod::noise_resample, AugMethod::latent_perturb}) {
        AugSample s = baseline_generate(kind, x, 1, nullptr, g, p, nullptr, 77);
        for (int i = 0; i < 3; ++i) CHECK(s.x[i] == doctest::Approx(x[i]).epsilon(1e-10));
        CHECK(s.y == 1);
    }
}

TEST_CASE("baseline preconditions") {
    World w(WorldSpec::celeba_toy(1), 1);
    Generator g = Generator::affine_for_world(w, 5);
    BaselineParams p;
    Vec x{0.0, 0.0, 0.0};
    CHECK_THROWS_AS(baseline_generate(AugMethod::unconditional, x, 0, nullptr, g, p, nullptr, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(baseline_generate(AugMethod::student_adversarial, x, 0, nullptr, g, p, nullptr, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(baseline_generate(AugMethod::config, x, 0, nullptr, g, p, nullptr, 1),
                    std::invalid_argument);
}

TEST_CASE("latent prior matches the training latents under the affine map") {
    World w(WorldSpec::celeba_toy(1), 1);
    Generator g = Generator::affine_for_world(w, 5);
    GroupedDataset train = w.sample_split(Split::train, 400, 3);
    LatentPrior prior = LatentPrior::fit(train, g, 2);
    REQUIRE(prior.mean_per_class.size() == 2);

    // recompute class means by hand through the exact inverse
    for (int c = 0; c < 2; ++c) {
        Vec mean(3, 0.0);
        std::size_t n = 0;
        for (const auto& e : train.examples) {
            if (e.y != c) continue;
            Vec z = g.invert(e.x).z;
            for (int i = 0; i < 3; ++i) mean[i] += z[i];
            ++n;
        }
        for (int i = 0; i < 3; ++i) {
            mean[i] /= (double)n;
            CHECK(prior.mean_per_class[c][i] == doctest::Approx(mean[i]).epsilon(1e-10));
            CHECK(prior.std_per_class[c][i] > 0.0);
        }
    }

    GroupedDataset one_class;
    one_class.examples = {train.examples[0]};
    CHECK_THROWS_AS(LatentPrior::fit(one_class, g, 2), std::invalid_argument);
}

TEST_CASE("confidence-guided ascent increases the objective") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher teacher = Teacher::exact_bayes(w, Split::test);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 16, 2}, Activation::relu, 21);
    ConfigParams p;
    p.steps = 30;
    p.lr = 0.05;

    GroupedDataset train = w.sample_split(Split::train, 20, 17);
    int improved = 0, monotone_steps = 0, total_steps = 0, label_kept = 0;
    for (const auto& e : train.examples) {
        AugSample s = config_generate(e.x, e.y, teacher, student, g, p, 1);
        REQUIRE(s.trace.size() == (std::size_t)p.steps + 1);
        if (s.trace.back().objective >= s.trace.front().objective) ++improved;
        for (std::size_t i = 1; i < s.trace.size(); ++i) {
            monotone_steps += s.trace[i].objective >= s.trace[i - 1].objective - 1e-9 ? 1 : 0;
            ++total_steps;
        }
        // label preservation: the exact posterior still favors the source class
        if (teacher.predict_probs(s.x)[e.y] > 0.5) ++label_kept;
    }
    CHECK(improved >= 19);             // the endpoint beats the start almost always
    CHECK(monotone_steps * 10 >= total_steps * 9);
    CHECK(label_kept >= 18);
}

TEST_CASE("confidence-guided ascent rejects non-differentiable teachers") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher noisy = Teacher::noisy_bayes(w, Split::test, 0.05);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 8, 2}, Activation::relu, 1);
    ConfigParams p;
    CHECK_THROWS_AS(config_generate({0.0, 0.0, 0.0}, 0, noisy, student, g, p, 1),
                    std::invalid_argument);
}

TEST_CASE("adversarial baseline lowers the student confidence") {
    World w(WorldSpec::celeba_toy(1), 1);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 16, 2}, Activation::relu, 9);
    BaselineParams p;
    p.steps = 20;
    p.lr = 0.05;
    GroupedDataset train = w.sample_split(Split::train, 20, 23);
    int lowered = 0;
    for (const auto& e : train.examples) {
        const double before = student.predict_probs(e.x)[e.y];
        AugSample s = baseline_generate(AugMethod::student_adversarial, e.x, e.y, &student, g, p,
                                        nullptr, 31);
        if (student.predict_probs(s.x)[e.y] <= before + 1e-12) ++lowered;
    }
    CHECK(lowered >= 18);
}

TEST_CASE("batch generation fans out deterministically") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher teacher = Teacher::exact_bayes(w, Split::test);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 8, 2}, Activation::relu, 4);
    GroupedDataset train = w.sample_split(Split::train, 10, 3);
    ConfigParams cp;
    cp.steps = 5;
    BaselineParams bp;

    AugmentationBatch a = generate_batch(AugMethod::config, train, &teacher, &student, g, 2, cp, bp, 9);
    AugmentationBatch b = generate_batch(AugMethod::config, train, &teacher, &student, g, 2, cp, bp, 9);
    REQUIRE(a.size() == 20);
    CHECK(a.skipped == 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].x == b.samples[i].x);
        CHECK(a.samples[i].y == train.examples[a.samples[i].source_index].y);
    }
    // replicas of the same source are distinct points
    CHECK(a.samples[0].x != a.samples[1].x);

    AugmentationBatch empty = generate_batch(AugMethod::config, train, &teacher, &student, g, 0, cp, bp, 9);
    CHECK(empty.empty());
    CHECK_THROWS_AS(generate_batch(AugMethod::config, train, nullptr, nullptr, g, 1, cp, bp, 9),
                    std::invalid_argument);

    for (auto kind : {AugMethod::unconditional, AugMethod::noise_resample, AugMethod::latent_perturb,
                      AugMethod::student_adversarial}) {
        AugmentationBatch bb = generate_batch(kind, train, &teacher, &student, g, 1, cp, bp, 9);
        CHECK(bb.size() == 10);
    }
}

TEST_CASE("augmented dataset size and weighting follow the multiplicity") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher teacher = Teacher::exact_bayes(w, Split::test);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 8, 2}, Activation::relu, 4);
    GroupedDataset train = w.sample_split(Split::train, 12, 3);
    ConfigParams cp;
    cp.steps = 2;
    BaselineParams bp;

    AugmentationBatch b2 = generate_batch(AugMethod::config, train, &teacher, &student, g, 2, cp, bp, 9);
    AugmentedDataset d2 = build_augmented_dataset(train, b2, 2);
    CHECK(d2.data.size() == 36);  // N real + 2N synthetic
    CHECK(d2.alpha == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    AugmentationBatch b10 = generate_batch(AugMethod::latent_perturb, train, &teacher, &student, g, 10, cp, bp, 9);
    AugmentedDataset d10 = build_augmented_dataset(train, b10, 10);
    CHECK(d10.data.size() == 132);
    CHECK(d10.alpha == doctest::Approx(10.0 / 11.0).epsilon(1e-15));

    CHECK_THROWS_AS(build_augmented_dataset(train, b2, 3), std::invalid_argument);
    CHECK_THROWS_AS(build_augmented_dataset(train, b2, -1), std::invalid_argument);

    // synthetic rows keep the source label and group
    for (std::size_t i = train.size(); i < d2.data.size(); ++i) {
        const auto& e = d2.data.examples[i];
        const auto& s = b2.samples[i - train.size()];
        CHECK(e.y == s.y);
        CHECK(e.group.cls == s.source_group.cls);
    }
}

TEST_CASE("batch and trace serialization carry the schema header") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher teacher = Teacher::exact_bayes(w, Split::test);
    Generator g = Generator::affine_for_world(w, 5);
    MlpClassifier student({3, 8, 2}, Activation::relu, 4);
    GroupedDataset train = w.sample_split(Split::train, 4, 3);
    ConfigParams cp;
    cp.steps = 3;
    BaselineParams bp;
    AugmentationBatch b = generate_batch(AugMethod::config, train, &teacher, &student, g, 1, cp, bp, 9);

    std::stringstream ss;
    write_batch_csv(b, ss);
    std::string line;
    std::getline(ss, line);
    CHECK(line == "# schema: confikd.augbatch.v1");
    std::getline(ss, line);
    CHECK(line.find("# method=config") == 0);
    std::getline(ss, line);
    CHECK(line == "x0,x1,x2,y,source_index,method,steps,teacher_conf,student_conf");

    std::stringstream ts;
    write_traces(b, ts);
    std::getline(ts, line);
    CHECK(line == "# schema: confikd.augtrace.v1");
    std::getline(ts, line);
    CHECK(line == "sample,step,teacher_conf,student_conf,objective");
    int rows = 0;
    while (std::getline(ts, line)) ++rows;
    CHECK(rows == 4 * 4);  // (steps + 1) rows per sample
}
