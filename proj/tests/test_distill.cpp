#include <doctest.h>

#include <cmath>

#include "confikd/distill.hpp"
#include "confikd/rng.hpp"

using namespace confikd;

TEST_CASE("name round trips for loss and mix modes") {
    for (auto m : {LossMode::erm, LossMode::edrm, LossMode::erm_plus_edrm})
        CHECK(loss_mode_from_name(loss_mode_name(m)) == m);
    for (auto m : {MixMode::none, MixMode::mask_mix, MixMode::convex_mix})
        CHECK(mix_mode_from_name(mix_mode_name(m)) == m);
    CHECK_THROWS_AS(loss_mode_from_name("nope"), std::invalid_argument);
    CHECK_THROWS_AS(mix_mode_from_name("nope"), std::invalid_argument);
}

TEST_CASE("hand-computed loss values") {
    Vec half{0.5, 0.5};
    CHECK(erm_loss(half, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(erm_loss_soft(half, {0.25, 0.75}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(edrm_loss(half, half, EdrmForm::cross_entropy) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(edrm_loss(half, half, EdrmForm::kl) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(edrm_loss({0.25, 0.75}, {1.0, 0.0}, EdrmForm::cross_entropy) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(combined_loss(half, 0, half) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(erm_loss(half, 2), std::invalid_argument);
    CHECK_THROWS_AS(edrm_loss(half, {1.0}, EdrmForm::kl), std::invalid_argument);
}

TEST_CASE("kl and cross-entropy forms differ by the teacher entropy only") {
    Rng rng(5);
    auto simplex = [&rng]() {
        Vec v{rng.uniform() + 1e-3, rng.uniform() + 1e-3, rng.uniform() + 1e-3};
        const double s = v[0] + v[1] + v[2];
        for (auto& x : v) x /= s;
        return v;
    };
    for (int i = 0; i < 50; ++i) {
        Vec t = simplex();
        Vec p1 = simplex();
        Vec p2 = simplex();
        double h = 0.0;
        for (double v : t)
            if (v > 0.0) h -= v * std::log(v);
        const double gap1 = edrm_loss(p1, t, EdrmForm::cross_entropy) - edrm_loss(p1, t, EdrmForm::kl);
        const double gap2 = edrm_loss(p2, t, EdrmForm::cross_entropy) - edrm_loss(p2, t, EdrmForm::kl);
        // same prediction-independent offset, so both forms share gradients
        CHECK(gap1 == doctest::Approx(h).epsilon(1e-12));
        CHECK(gap1 == doctest::Approx(gap2).epsilon(1e-12));
        CHECK(edrm_loss(t, t, EdrmForm::kl) >= -1e-15);  // KL(t||t) = 0 is the minimum
    }
}

TEST_CASE("zero predicted probability is clamped and counted") {
    const long before = clamp_warnings();
    const double v = erm_loss({1.0, 0.0}, 1);
    CHECK(v == doctest::Approx(-std::log(1e-300)).epsilon(1e-12));
    CHECK(clamp_warnings() > before);
}

TEST_CASE("mask mix keeps coordinates from the parents") {
    Vec x1{1.0, 2.0, 3.0}, x2{-1.0, -2.0, -3.0};
    MixedExample m = mask_mix(x1, 0, x2, 1, 2, (std::uint64_t)9);
    for (std::size_t i = 0; i < 3; ++i) CHECK((m.x[i] == x1[i] || m.x[i] == x2[i]));
    CHECK(m.soft_label[0] + m.soft_label[1] == doctest::Approx(1.0).epsilon(1e-15));
    // label weight equals the fraction of coordinates taken from x1
    int ones = 0;
    for (std::size_t i = 0; i < 3; ++i) ones += m.x[i] == x1[i] ? 1 : 0;
    CHECK(m.soft_label[0] == doctest::Approx(ones / 3.0).epsilon(1e-15));

    // identical parents reproduce the input regardless of the mask
    MixedExample same = mask_mix(x1, 0, x1, 0, 2, (std::uint64_t)9);
    CHECK(same.x == x1);
    CHECK(same.soft_label[0] == doctest::Approx(1.0).epsilon(1e-15));

    MixedExample a = mask_mix(x1, 0, x2, 1, 2, (std::uint64_t)4);
    MixedExample b = mask_mix(x1, 0, x2, 1, 2, (std::uint64_t)4);
    CHECK(a.x == b.x);
    CHECK(a.soft_label == b.soft_label);
    CHECK_THROWS_AS(mask_mix(x1, 0, {1.0}, 1, 2, (std::uint64_t)1), std::invalid_argument);
}

TEST_CASE("convex mix interpolates inputs and labels with the same weight") {
    Vec x1{1.0, 0.0}, x2{0.0, 1.0};
    MixedExample m = convex_mix(x1, 0, x2, 1, 2, (std::uint64_t)3);
    const double lambda = m.soft_label[0];
    CHECK(lambda >= 0.0);
    CHECK(lambda <= 1.0);
    CHECK(m.x[0] == doctest::Approx(lambda).epsilon(1e-15));
    CHECK(m.x[1] == doctest::Approx(1.0 - lambda).epsilon(1e-15));

    // same class on both sides collapses to a hard label
    MixedExample same = convex_mix(x1, 1, x2, 1, 2, (std::uint64_t)3);
    CHECK(same.soft_label[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(convex_mix(x1, 0, {1.0}, 1, 2, (std::uint64_t)1), std::invalid_argument);
}

TEST_CASE("train_student rejects bad setups") {
    World w(WorldSpec::celeba_toy(1), 1);
    GroupedDataset train = w.sample_split(Split::train, 32, 1);
    GroupedDataset val = w.sample_split(Split::val_restricted, 32, 2);
    MlpClassifier m({3, 4, 2}, Activation::relu, 1);
    TrainConfig tc;
    tc.epochs = 1;

    GroupedDataset empty;
    CHECK_THROWS_AS(train_student(m, empty, nullptr, val, tc), std::invalid_argument);

    tc.loss_mode = LossMode::edrm;
    CHECK_THROWS_AS(train_student(m, train, nullptr, val, tc), std::invalid_argument);

    tc.loss_mode = LossMode::erm;
    tc.mix_probability = 1.5;
    CHECK_THROWS_AS(train_student(m, train, nullptr, val, tc), std::invalid_argument);
}

TEST_CASE("erm training fits the restricted validation split") {
    World w(WorldSpec::celeba_toy(1), 1);
    GroupedDataset train = w.sample_split(Split::train, 200, 11);
    GroupedDataset val = w.sample_split(Split::val_restricted, 200, 12);
    MlpClassifier m({3, 16, 2}, Activation::relu, 21);
    TrainConfig tc;
    tc.loss_mode = LossMode::erm;
    tc.epochs = 30;
    tc.seed = 3;
    TrainReport r = train_student(m, train, nullptr, val, tc);
    CHECK(r.best_val_acc > 0.85);
    CHECK(r.epochs.size() == 30);
    CHECK(r.selected_epoch >= 0);
    CHECK(r.selected_epoch < 30);

    // report fields are consistent with the returned parameters
    double max_acc = 0.0;
    for (const auto& e : r.epochs) max_acc = std::max(max_acc, e.val_restricted_acc);
    CHECK(r.best_val_acc == max_acc);
    double r_train = 0.0;
    for (const auto& e : train.examples) r_train += erm_loss(m.predict_probs(e.x), e.y);
    CHECK(r.final_R_train == doctest::Approx(r_train / train.size()).epsilon(1e-12));

    // schedule decays across the run
    CHECK(r.epochs.front().lr > r.epochs.back().lr);
}

TEST_CASE("distillation shrinks the empirical distilled risk") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher t = Teacher::exact_bayes(w, Split::test);
    GroupedDataset train = w.sample_split(Split::train, 200, 31);
    GroupedDataset val = w.sample_split(Split::val_restricted, 200, 32);
    MlpClassifier m({3, 16, 2}, Activation::relu, 41);

    double before = 0.0;
    for (const auto& e : train.examples)
        before += edrm_loss(m.predict_probs(e.x), t.predict_probs(e.x), EdrmForm::cross_entropy);
    before /= (double)train.size();

    TrainConfig tc;
    tc.loss_mode = LossMode::edrm;
    tc.epochs = 30;
    tc.seed = 5;
    TrainReport r = train_student(m, train, &t, val, tc);
    CHECK(r.final_R_D_train < before);
    CHECK(r.final_R_D_train > 0.0);

    // recompute the distilled risk from the returned parameters
    double after = 0.0;
    for (const auto& e : train.examples)
        after += edrm_loss(m.predict_probs(e.x), t.predict_probs(e.x), EdrmForm::cross_entropy);
    CHECK(r.final_R_D_train == doctest::Approx(after / train.size()).epsilon(1e-12));
}

TEST_CASE("training is bit-deterministic in the seed") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher t = Teacher::exact_bayes(w, Split::test);
    GroupedDataset train = w.sample_split(Split::train, 120, 51);
    GroupedDataset val = w.sample_split(Split::val_restricted, 120, 52);
    TrainConfig tc;
    tc.loss_mode = LossMode::erm_plus_edrm;
    tc.mix_mode = MixMode::convex_mix;
    tc.epochs = 8;
    tc.seed = 77;

    MlpClassifier a({3, 8, 2}, Activation::tanh, 1);
    MlpClassifier b({3, 8, 2}, Activation::tanh, 1);
    TrainReport ra = train_student(a, train, &t, val, tc);
    TrainReport rb = train_student(b, train, &t, val, tc);
    for (std::size_t i = 0; i < a.params().size(); ++i)
        CHECK(a.params()[i].data == b.params()[i].data);
    for (std::size_t i = 0; i < ra.epochs.size(); ++i)
        CHECK(ra.epochs[i].train_loss == rb.epochs[i].train_loss);

    tc.seed = 78;
    MlpClassifier c({3, 8, 2}, Activation::tanh, 1);
    train_student(c, train, &t, val, tc);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size(); ++i)
        any_diff |= a.params()[i].data != c.params()[i].data;
    CHECK(any_diff);
}

TEST_CASE("mixing with probability one still trains") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher t = Teacher::exact_bayes(w, Split::test);
    GroupedDataset train = w.sample_split(Split::train, 100, 61);
    GroupedDataset val = w.sample_split(Split::val_restricted, 100, 62);
    MlpClassifier m({3, 8, 2}, Activation::relu, 9);
    TrainConfig tc;
    tc.loss_mode = LossMode::edrm;
    tc.mix_mode = MixMode::mask_mix;
    tc.mix_probability = 1.0;
    tc.epochs = 10;
    TrainReport r = train_student(m, train, &t, val, tc);
    CHECK(r.epochs.size() == 10);
    for (const auto& e : r.epochs) CHECK(std::isfinite(e.train_loss));
}
