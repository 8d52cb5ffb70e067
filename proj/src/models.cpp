#include "confikd/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "confikd/rng.hpp"

namespace confikd {

std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

MlpClassifier::MlpClassifier(std::vector<int> widths, Activation act, std::uint64_t seed)
    : widths_(std::move(widths)), act_(act) {
    if (widths_.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output widths");
    for (int w : widths_)
        if (w < 1) throw std::invalid_argument("init_mlp: width < 1");
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l];
        const int fan_out = widths_[l + 1];
        const double bound = 1.0 / std::sqrt((double)fan_in);
        Tensor W = Tensor::zeros({(std::size_t)fan_out, (std::size_t)fan_in});
        for (auto& v : W.data) v = rng.uniform(-bound, bound);
        Tensor b = Tensor::zeros({(std::size_t)fan_out});
        for (auto& v : b.data) v = rng.uniform(-bound, bound);
        params_.push_back(std::move(W));
        params_.push_back(std::move(b));
    }
}

Vec MlpClassifier::log_probs(const Vec& x) const {
    if ((int)x.size() != widths_.front())
        throw std::invalid_argument("MlpClassifier: input dim mismatch");
    Vec h = x;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const Tensor& W = params_[2 * l];
        const Tensor& b = params_[2 * l + 1];
        Vec out(W.shape[0]);
        for (std::size_t r = 0; r < W.shape[0]; ++r) {
            double s = b.at(r);
            const double* wr = W.data.data() + r * W.shape[1];
            for (std::size_t c = 0; c < W.shape[1]; ++c) s += wr[c] * h[c];
            out[r] = s;
        }
        h = std::move(out);
        const bool last = (l + 2 == widths_.size());
        if (!last) {
            if (act_ == Activation::relu)
                for (auto& v : h) v = v > 0.0 ? v : 0.0;
            else
                for (auto& v : h) v = std::tanh(v);
        }
    }
    if (temperature_ != 1.0)
        for (auto& v : h) v /= temperature_;
    // max-subtracted log-softmax
    double mx = h[0];
    for (double v : h) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : h) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (auto& v : h) v -= lse;
    return h;
}

std::vector<Tape::Id> MlpClassifier::emit_params(Tape& tape) const {
    std::vector<Tape::Id> ids;
    ids.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
        ids.push_back(tape.leaf(params_[i], "p" + std::to_string(i)));
    return ids;
}

Tape::Id MlpClassifier::emit(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& param_ids) const {
    Tape::Id h = x;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        h = tape.affine(param_ids[2 * l], h, param_ids[2 * l + 1]);
        const bool last = (l + 2 == widths_.size());
        if (!last) h = (act_ == Activation::relu) ? tape.relu(h) : tape.tanh_(h);
    }
    if (temperature_ != 1.0) h = tape.scale_shift(h, 1.0 / temperature_, 0.0);
    return tape.log_softmax(h);
}

void MlpClassifier::load_params_from(const Tape& tape, const std::vector<Tape::Id>& param_ids) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = tape.value(param_ids[i]);
}

// --- Teacher ---------------------------------------------------------------

Teacher Teacher::exact_bayes(const World& world, Split split) {
    Teacher t;
    t.kind_ = Kind::exact_bayes;
    t.world_ = &world;
    t.split_ = split;
    return t;
}

Teacher Teacher::noisy_bayes(const World& world, Split split, double corruption_level) {
    if (corruption_level < 0.0) throw std::invalid_argument("noisy_bayes: negative corruption");
    Teacher t;
    t.kind_ = Kind::noisy_bayes;
    t.world_ = &world;
    t.split_ = split;
    t.corruption_ = corruption_level;
    t.kappa_ = 0.5 * std::log1p(corruption_level);
    return t;
}

Teacher Teacher::frozen_mlp(MlpClassifier model, double temperature) {
    Teacher t;
    t.kind_ = Kind::frozen_mlp;
    t.frozen_ = std::move(model);
    t.temperature_ = temperature;
    t.frozen_.set_temperature(temperature);
    return t;
}

namespace {
std::uint64_t hash_point(const Vec& x) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : x) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}
}  // namespace

Vec Teacher::log_probs(const Vec& x) const {
    switch (kind_) {
        case Kind::exact_bayes:
            return world_->log_bayes_posterior(x, split_);
        case Kind::noisy_bayes: {
            Vec lp = world_->log_bayes_posterior(x, split_);
            const std::uint64_t hx = hash_point(x);
            for (std::size_t c = 0; c < lp.size(); ++c) {
                std::uint64_t s = hx ^ (0x9e3779b97f4a7c15ULL * (c + 1));
                const double u = 2.0 * (double)(splitmix64(s) >> 11) * 0x1.0p-53 - 1.0;
                lp[c] += kappa_ * u;
            }
            double mx = lp[0];
            for (double v : lp) mx = std::max(mx, v);
            double z = 0.0;
            for (double v : lp) z += std::exp(v - mx);
            const double lse = mx + std::log(z);
            for (auto& v : lp) v -= lse;
            return lp;
        }
        case Kind::frozen_mlp:
            return frozen_.log_probs(x);
    }
    throw std::logic_error("unreachable");
}

Vec teacher_predict(const Teacher& t, const Vec& x) { return t.predict_probs(x); }

Tape::Id emit_bayes_log_posterior(Tape& tape, Tape::Id x, const World& world, Split split) {
    const WorldSpec& spec = world.spec();
    const int d = spec.input_dim;
    const Vec& pri = world.priors(split);
    const double inv2v = 1.0 / (2.0 * spec.noise_std * spec.noise_std);

    Tensor ident = Tensor::zeros({(std::size_t)d, (std::size_t)d});
    for (int i = 0; i < d; ++i) ident.at2(i, i) = 1.0;
    const Tape::Id W = tape.leaf(ident, "bayes_I");

    std::vector<std::vector<Tape::Id>> class_scores(spec.num_classes);
    for (std::size_t g = 0; g < world.groups().size(); ++g) {
        if (pri[g] <= 0.0) continue;
        const Group& grp = world.groups()[g];
        Tensor negmu = Tensor::zeros({(std::size_t)d});
        for (int i = 0; i < d; ++i) negmu.at(i) = -grp.mean[i];
        const Tape::Id b = tape.leaf(negmu, "bayes_mu" + std::to_string(g));
        const Tape::Id r = tape.affine(W, x, b);
        const Tape::Id q = tape.sum(tape.pow_(r, 2.0));
        class_scores[grp.key.cls].push_back(tape.scale_shift(q, -inv2v, std::log(pri[g])));
    }
    std::vector<Tape::Id> logmass(spec.num_classes);
    for (int c = 0; c < spec.num_classes; ++c) {
        if (class_scores[c].empty())
            throw std::invalid_argument("emit_bayes_log_posterior: class with zero prior mass");
        logmass[c] = class_scores[c].size() == 1
                         ? class_scores[c][0]
                         : tape.logsumexp(tape.stack(class_scores[c]));
    }
    return tape.log_softmax(tape.stack(logmass));
}

// --- optimizer -------------------------------------------------------------

void OptimizerState::init(const std::vector<Tensor>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.push_back(Tensor::zeros_like(p));
        v.push_back(Tensor::zeros_like(p));
    }
    step = 0;
}

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params,
                    const std::vector<Tensor>& grads, double lr_override) {
    if (state.m.size() != params.size()) state.init(params);
    if (grads.size() != params.size())
        throw std::invalid_argument("optimizer_step: grads/params count mismatch");
    const double lr = lr_override >= 0.0 ? lr_override : state.lr;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, (double)state.step);
    const double bc2 = 1.0 - std::pow(state.beta2, (double)state.step);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(grads[i]))
            throw std::invalid_argument("optimizer_step: shape mismatch at parameter " + std::to_string(i));
        Tensor& p = params[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = grads[i].at(j);
            m.at(j) = state.beta1 * m.at(j) + (1.0 - state.beta1) * g;
            v.at(j) = state.beta2 * v.at(j) + (1.0 - state.beta2) * g * g;
            const double mhat = m.at(j) / bc1;
            const double vhat = v.at(j) / bc2;
            p.at(j) -= lr * (mhat / (std::sqrt(vhat) + state.epsilon) + state.weight_decay * p.at(j));
        }
    }
}

double cosine_lr(double base_lr, long step, long total_steps) {
    if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * (double)step / (double)total_steps));
}

// --- calibration -----------------------------------------------------------

CalibrationResult calibrate_temperature(const MlpClassifier& model, const GroupedDataset& val) {
    if (val.empty()) throw std::invalid_argument("calibrate_temperature: empty validation set");
    bool multi_class = false;
    for (const auto& e : val.examples)
        if (e.y != val.examples[0].y) {
            multi_class = true;
            break;
        }
    CalibrationResult res;
    if (!multi_class) {
        res.temperature = 1.0;
        res.degenerate = true;
        return res;
    }

    std::vector<Vec> logits;
    logits.reserve(val.size());
    for (const auto& e : val.examples) logits.push_back(model.log_probs(e.x));

    auto nll = [&](double T) {
        double total = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const Vec& l = logits[i];
            double mx = l[0] / T;
            for (double v : l) mx = std::max(mx, v / T);
            double z = 0.0;
            for (double v : l) z += std::exp(v / T - mx);
            total -= l[val.examples[i].y] / T - mx - std::log(z);
        }
        return total / (double)logits.size();
    };

    double lo = 0.05, hi = 20.0;
    const double gr = 0.61803398874989484820;
    double x1 = hi - gr * (hi - lo);
    double x2 = lo + gr * (hi - lo);
    double f1 = nll(x1), f2 = nll(x2);
    for (int it = 0; it < 200 && (hi - lo) > 1e-6; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = nll(x2);
        }
    }
    res.temperature = 0.5 * (lo + hi);
    res.nll = nll(res.temperature);
    return res;
}

// --- checkpoints -----------------------------------------------------------

void write_checkpoint(const MlpClassifier& m, std::ostream& out) {
    out << "# schema: confikd.checkpoint.v1\n";
    out << "kind mlp\n";
    out << "widths";
    for (int w : m.widths()) out << " " << w;
    out << "\n";
    out << "activation " << activation_name(m.activation()) << "\n";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", m.temperature());
    out << "temperature " << buf << "\n";
    std::size_t count = 0;
    for (const auto& p : m.params()) count += p.size();
    out << "params " << count << "\n";
    for (const auto& p : m.params())
        for (double v : p.data) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << buf << "\n";
        }
}

void save_checkpoint(const MlpClassifier& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_checkpoint(m, f);
}

MlpClassifier read_checkpoint(std::istream& in) {
    std::string line, word;
    std::vector<int> widths;
    Activation act = Activation::relu;
    double temperature = 1.0;
    std::size_t count = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        ss >> word;
        if (word == "kind") {
            std::string k;
            ss >> k;
            if (k != "mlp") throw std::runtime_error("checkpoint: unknown kind " + k);
        } else if (word == "widths") {
            int w;
            while (ss >> w) widths.push_back(w);
        } else if (word == "activation") {
            std::string a;
            ss >> a;
            act = activation_from_name(a);
        } else if (word == "temperature") {
            ss >> temperature;
        } else if (word == "params") {
            ss >> count;
            break;
        }
    }
    MlpClassifier m(widths, act, 0);
    m.set_temperature(temperature);
    std::size_t have = 0;
    for (auto& p : m.params())
        for (auto& v : p.data) {
            if (!(in >> v)) throw std::runtime_error("checkpoint: truncated parameter list");
            ++have;
        }
    if (have != count) throw std::runtime_error("checkpoint: parameter count mismatch");
    return m;
}

MlpClassifier load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    return read_checkpoint(f);
}

}  // namespace confikd
