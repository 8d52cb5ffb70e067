#include <doctest.h>

#include <cmath>
#include <sstream>

#include "confikd/models.hpp"
#include "confikd/rng.hpp"

using namespace confikd;

namespace {

WorldSpec plain_2d_spec() {
    WorldSpec s;
    s.num_classes = 2;
    s.num_spurious_bits = 0;
    s.input_dim = 2;
    s.latent_dim = 2;
    s.class_directions = {{1.0, 0.0}, {0.0, 1.0}};
    s.class_scale = 1.0;
    s.spurious_scale = 1.0;
    s.noise_std = 1.0;
    s.train_priors = {0.5, 0.5};
    s.test_priors = {0.5, 0.5};
    return s;
}

// Linear network computing the exact posterior of plain_2d_spec:
// logit_c = x . mu_c - |mu_c|^2 / 2 with unit noise.
MlpClassifier exact_linear_model() {
    MlpClassifier m({2, 2}, Activation::relu, 0);
    m.params()[0] = Tensor::zeros({2, 2});
    m.params()[0].at2(0, 0) = 1.0;
    m.params()[0].at2(1, 1) = 1.0;
    m.params()[1] = Tensor::vec({-0.5, -0.5});
    return m;
}

}  // namespace

TEST_CASE("mlp construction is seeded and deterministic") {
    MlpClassifier a({3, 8, 2}, Activation::relu, 5);
    MlpClassifier b({3, 8, 2}, Activation::relu, 5);
    MlpClassifier c({3, 8, 2}, Activation::relu, 6);
    CHECK(a.params()[0].data == b.params()[0].data);
    CHECK(a.params()[0].data != c.params()[0].data);
    CHECK_THROWS_AS(MlpClassifier({3}, Activation::relu, 1), std::invalid_argument);
    CHECK_THROWS_AS(MlpClassifier({3, 0, 2}, Activation::relu, 1), std::invalid_argument);
}

TEST_CASE("log_probs normalizes and emit reproduces it on a tape") {
    MlpClassifier m({3, 6, 4, 2}, Activation::tanh, 9);
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Vec x = rng.gaussian_vec(3);
        Vec lp = m.log_probs(x);
        double s = 0.0;
        for (double v : lp) s += std::exp(v);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

        Tape t;
        auto params = m.emit_params(t);
        auto xid = t.leaf(Tensor::vec(x));
        auto out = m.emit(t, xid, params);
        const Tensor& v = t.forward(out);
        for (int c = 0; c < 2; ++c) CHECK(v.at(c) == doctest::Approx(lp[c]).epsilon(1e-12));
    }
}

TEST_CASE("mlp loss gradients pass the finite-difference check") {
    MlpClassifier m({3, 5, 2}, Activation::relu, 12);
    Tape t;
    auto params = m.emit_params(t);
    auto x = t.leaf(Tensor::vec({0.4, -0.1, 0.8}));
    auto loss = t.dot_const(m.emit(t, x, params), {0.0, -1.0});
    t.forward(loss);
    CHECK(t.check_gradient(loss, params, 1e-5) < 1e-4);
}

TEST_CASE("temperature rescales confidence but preserves the argmax") {
    MlpClassifier m({2, 4, 2}, Activation::tanh, 3);
    Vec x{0.7, -0.3};
    const int cls = (int)m.predict_class(x);
    const double conf = m.predict_probs(x)[cls];
    m.set_temperature(5.0);
    CHECK((int)m.predict_class(x) == cls);
    CHECK(m.predict_probs(x)[cls] < conf);  // softer at higher temperature
    CHECK(m.predict_probs(x)[cls] > 0.5 - 1e-12);
}

TEST_CASE("exact bayes teacher equals the world posterior") {
    World w(plain_2d_spec(), 1);
    Teacher t = Teacher::exact_bayes(w, Split::test);
    CHECK(t.differentiable());
    CHECK(t.declared_delta_t() == 0.0);
    auto xs = w.sample_inputs(Split::test, 50, 8);
    for (const auto& x : xs) {
        Vec a = t.predict_probs(x);
        Vec b = w.bayes_posterior(x, Split::test);
        CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-14));
    }
}

TEST_CASE("noisy bayes teacher stays within its declared deviation bound") {
    World w(plain_2d_spec(), 1);
    const double c = 0.1;
    Teacher t = Teacher::noisy_bayes(w, Split::test, c);
    CHECK(t.declared_delta_t() == c);
    CHECK_FALSE(t.differentiable());
    double sup = 0.0;
    auto xs = w.sample_inputs(Split::test, 2000, 13);
    for (const auto& x : xs) {
        Vec noisy = t.predict_probs(x);
        Vec clean = w.bayes_posterior(x, Split::test);
        for (std::size_t i = 0; i < noisy.size(); ++i)
            sup = std::max(sup, std::fabs(noisy[i] - clean[i]));
    }
    CHECK(sup <= c + 1e-12);
    CHECK(sup > 0.0);

    // identical input gives identical noise (keyed by the point, not a stream)
    Vec probe{0.3, 0.4};
    CHECK(t.predict_probs(probe) == t.predict_probs(probe));
    CHECK_THROWS_AS(Teacher::noisy_bayes(w, Split::test, -0.5), std::invalid_argument);
}

TEST_CASE("differentiable posterior subgraph matches the closed form") {
    World w(WorldSpec::celeba_toy(1), 1);
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        Vec x = rng.gaussian_vec(3);
        Tape t;
        auto xid = t.leaf(Tensor::vec(x), "x");
        auto out = emit_bayes_log_posterior(t, xid, w, Split::test);
        const Tensor& v = t.forward(out);
        Vec expect = w.log_bayes_posterior(x, Split::test);
        for (int c = 0; c < 2; ++c) CHECK(v.at(c) == doctest::Approx(expect[c]).epsilon(1e-10));

        // gradient check on the train-split posterior: the group shift makes
        // every input coordinate matter, so no exact zeros meet fd noise
        Tape t2;
        auto xid2 = t2.leaf(Tensor::vec(x), "x");
        auto out2 = emit_bayes_log_posterior(t2, xid2, w, Split::train);
        auto obj = t2.dot_const(out2, {0.6, -1.4});
        t2.forward(obj);
        CHECK(t2.check_gradient(obj, {xid2}, 1e-5) < 1e-4);
    }
}

TEST_CASE("bayes classifier is optimal among 20 random students") {
    World w(WorldSpec::celeba_toy(1), 1);
    Teacher bayes = Teacher::exact_bayes(w, Split::test);
    RiskEstimate best = w.true_risk(bayes, Split::test, RiskLoss::ce_vs_pstar, 8000, 31);
    for (int i = 0; i < 20; ++i) {
        MlpClassifier m({3, 6, 2}, i % 2 ? Activation::relu : Activation::tanh, 100 + i);
        RiskEstimate r = w.true_risk(m, Split::test, RiskLoss::ce_vs_pstar, 8000, 31);
        CHECK(best.value <= r.value + 3.0 * (best.std_error + r.std_error));
    }
}

TEST_CASE("adamw single step matches the hand recursion") {
    std::vector<Tensor> params{Tensor::vec({1.0})};
    std::vector<Tensor> grads{Tensor::vec({0.5})};
    OptimizerState st;
    st.lr = 0.1;
    st.weight_decay = 0.1;
    st.init(params);
    optimizer_step(st, params, grads);
    // mhat = g, vhat = g^2 after bias correction at step 1
    const double expect = 1.0 - 0.1 * (0.5 / (std::sqrt(0.25) + 1e-8) + 0.1 * 1.0);
    CHECK(params[0].at(0) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(st.step == 1);

    std::vector<Tensor> bad{Tensor::vec({1.0, 2.0})};
    CHECK_THROWS_AS(optimizer_step(st, params, bad), std::invalid_argument);
}

TEST_CASE("adamw without decay shrinks a quadratic objective") {
    std::vector<Tensor> params{Tensor::vec({2.0, -3.0})};
    OptimizerState st;
    st.lr = 0.05;
    st.init(params);
    for (int i = 0; i < 400; ++i) {
        std::vector<Tensor> grads{Tensor::vec({2.0 * params[0].at(0), 2.0 * params[0].at(1)})};
        optimizer_step(st, params, grads);
    }
    CHECK(std::fabs(params[0].at(0)) < 1e-2);
    CHECK(std::fabs(params[0].at(1)) < 1e-2);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(0.1, -1, 100), std::invalid_argument);
    CHECK_THROWS_AS(cosine_lr(0.1, 5, 0), std::invalid_argument);
}

TEST_CASE("temperature calibration recovers the logit scale") {
    World w(plain_2d_spec(), 1);
    GroupedDataset val = w.sample_split(Split::test, 3000, 55);

    MlpClassifier calibrated = exact_linear_model();
    CalibrationResult r1 = calibrate_temperature(calibrated, val);
    CHECK_FALSE(r1.degenerate);
    CHECK(r1.temperature == doctest::Approx(1.0).epsilon(0.15));

    MlpClassifier sharp = exact_linear_model();
    for (auto& p : sharp.params())
        for (auto& v : p.data) v *= 10.0;
    CalibrationResult r10 = calibrate_temperature(sharp, val);
    CHECK(r10.temperature == doctest::Approx(10.0).epsilon(0.15));

    GroupedDataset degenerate;
    degenerate.examples = {val.examples[0], val.examples[0]};
    CalibrationResult rd = calibrate_temperature(calibrated, degenerate);
    CHECK(rd.degenerate);
    CHECK(rd.temperature == 1.0);
}

TEST_CASE("checkpoint round trip is exact") {
    MlpClassifier m({3, 7, 2}, Activation::tanh, 31);
    m.set_temperature(1.7);
    std::stringstream ss;
    write_checkpoint(m, ss);
    MlpClassifier back = read_checkpoint(ss);
    CHECK(back.widths() == m.widths());
    CHECK(back.activation() == m.activation());
    CHECK(back.temperature() == m.temperature());
    for (std::size_t i = 0; i < m.params().size(); ++i)
        CHECK(back.params()[i].data == m.params()[i].data);

    std::stringstream truncated("# schema: confikd.checkpoint.v1\nkind mlp\nwidths 2 2\nactivation relu\ntemperature 1\nparams 6\n1\n2\n");
    CHECK_THROWS_AS(read_checkpoint(truncated), std::runtime_error);
}
