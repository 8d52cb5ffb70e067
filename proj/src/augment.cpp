#include "confikd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "confikd/diffcore.hpp"
#include "confikd/rng.hpp"

namespace confikd {

// --- Generator --------------------------------------------------------------

Generator Generator::affine_for_world(const World& world, std::uint64_t seed) {
    Generator g;
    g.kind_ = Kind::affine;
    g.input_dim_ = world.spec().input_dim;
    g.latent_dim_ = g.input_dim_;
    const int d = g.input_dim_;

    // random orthogonal map via Gram-Schmidt on a seeded Gaussian matrix
    Rng rng(derive_seed(seed, "generator"));
    std::vector<Vec> cols(d, Vec(d));
    for (int c = 0; c < d; ++c) {
        for (int r = 0; r < d; ++r) cols[c][r] = rng.gaussian();
        for (int p = 0; p < c; ++p) {
            const double proj = dot(cols[c], cols[p]);
            for (int r = 0; r < d; ++r) cols[c][r] -= proj * cols[p][r];
        }
        const double nrm = norm2(cols[c]);
        for (int r = 0; r < d; ++r) cols[c][r] /= nrm;
    }
    g.A_ = Matrix(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) g.A_(r, c) = cols[c][r];
    g.A_inv_ = g.A_.transpose();
    g.c_.assign(d, 0.0);
    g.recon_tol_ = 1e-6;
    return g;
}

Generator Generator::make_mlp(std::vector<int> widths, std::uint64_t seed, double recon_tol) {
    if (widths.size() < 2) throw std::invalid_argument("Generator::make_mlp: bad widths");
    Generator g;
    g.kind_ = Kind::mlp;
    g.latent_dim_ = widths.front();
    g.input_dim_ = widths.back();
    g.widths_ = std::move(widths);
    g.recon_tol_ = recon_tol;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < g.widths_.size(); ++l) {
        const double bound = 1.0 / std::sqrt((double)g.widths_[l]);
        Tensor W = Tensor::zeros({(std::size_t)g.widths_[l + 1], (std::size_t)g.widths_[l]});
        for (auto& v : W.data) v = rng.uniform(-bound, bound);
        Tensor b = Tensor::zeros({(std::size_t)g.widths_[l + 1]});
        g.params_.push_back(std::move(W));
        g.params_.push_back(std::move(b));
    }
    return g;
}

Vec Generator::decode(const Vec& z) const {
    if ((int)z.size() != latent_dim_) throw std::invalid_argument("decode: latent dim mismatch");
    if (kind_ == Kind::affine) return add(A_.mul(z), c_);
    Vec h = z;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const Tensor& W = params_[2 * l];
        const Tensor& b = params_[2 * l + 1];
        Vec out(W.shape[0]);
        for (std::size_t r = 0; r < W.shape[0]; ++r) {
            double s = b.at(r);
            for (std::size_t c = 0; c < W.shape[1]; ++c) s += W.at2(r, c) * h[c];
            out[r] = s;
        }
        h = std::move(out);
        if (l + 2 < widths_.size())
            for (auto& v : h) v = std::tanh(v);
    }
    return h;
}

Tape::Id Generator::emit_decode(Tape& tape, Tape::Id z) const {
    if (kind_ == Kind::affine) {
        Tensor W = Tensor::zeros({(std::size_t)input_dim_, (std::size_t)latent_dim_});
        for (int r = 0; r < input_dim_; ++r)
            for (int c = 0; c < latent_dim_; ++c) W.at2(r, c) = A_(r, c);
        const Tape::Id Wid = tape.leaf(W, "dec_A");
        const Tape::Id bid = tape.leaf(Tensor::vec(c_), "dec_c");
        return tape.affine(Wid, z, bid);
    }
    Tape::Id h = z;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const Tape::Id Wid = tape.leaf(params_[2 * l]);
        const Tape::Id bid = tape.leaf(params_[2 * l + 1]);
        h = tape.affine(Wid, h, bid);
        if (l + 2 < widths_.size()) h = tape.tanh_(h);
    }
    return h;
}

Generator::InvertResult Generator::invert(const Vec& x) const {
    if ((int)x.size() != input_dim_) throw std::invalid_argument("invert: input dim mismatch");
    InvertResult res;
    if (kind_ == Kind::affine) {
        res.z = A_inv_.mul(sub(x, c_));
        Vec rec = decode(res.z);
        for (int i = 0; i < input_dim_; ++i)
            res.reconstruction_error = std::max(res.reconstruction_error, std::fabs(rec[i] - x[i]));
        res.ok = res.reconstruction_error <= recon_tol_;
        return res;
    }

    // gradient descent on |g(z) - x|^2 from the prior origin, keep the best z
    Tape tape;
    const Tape::Id z = tape.leaf(Tensor::zeros({(std::size_t)latent_dim_}), "z");
    const Tape::Id gx = emit_decode(tape, z);
    Vec negx = x;
    for (auto& v : negx) v = -v;
    const Tape::Id bneg = tape.leaf(Tensor::vec(negx));
    const Tape::Id diff = tape.add(gx, bneg);
    const Tape::Id obj = tape.sum(tape.pow_(diff, 2.0));

    OptimizerState opt;
    opt.lr = 0.05;
    std::vector<Tensor> zt = {Tensor::zeros({(std::size_t)latent_dim_})};
    opt.init(zt);
    double best = std::numeric_limits<double>::infinity();
    Vec best_z(latent_dim_, 0.0);
    for (int it = 0; it < 200; ++it) {
        tape.set_leaf(z, zt[0]);
        const double val = tape.forward_scalar(obj);
        if (val < best) {
            best = val;
            best_z = zt[0].data;
        }
        tape.backward(obj);
        optimizer_step(opt, zt, {tape.grad(z)});
    }
    res.z = best_z;
    Vec rec = decode(res.z);
    for (int i = 0; i < input_dim_; ++i)
        res.reconstruction_error = std::max(res.reconstruction_error, std::fabs(rec[i] - x[i]));
    res.ok = res.reconstruction_error <= recon_tol_;
    return res;
}

// --- methods ----------------------------------------------------------------

std::string aug_method_name(AugMethod m) {
    switch (m) {
        case AugMethod::config: return "config";
        case AugMethod::unconditional: return "unconditional";
        case AugMethod::noise_resample: return "noise-resample";
        case AugMethod::latent_perturb: return "latent-perturb";
        case AugMethod::student_adversarial: return "student-adversarial";
    }
    return "?";
}

AugMethod aug_method_from_name(const std::string& s) {
    if (s == "config") return AugMethod::config;
    if (s == "unconditional") return AugMethod::unconditional;
    if (s == "noise-resample" || s == "noise_resample") return AugMethod::noise_resample;
    if (s == "latent-perturb" || s == "latent_perturb") return AugMethod::latent_perturb;
    if (s == "student-adversarial" || s == "student_adversarial") return AugMethod::student_adversarial;
    throw std::invalid_argument("unknown augmentation method: " + s);
}

double config_objective(double t_y, double f_y, double gamma) {
    if (gamma <= 0.0) throw std::invalid_argument("config_objective: gamma must be positive");
    return std::pow(t_y, gamma) + std::pow(1.0 - f_y, gamma);
}

AugSample config_generate(const Vec& x, int y, const Teacher& teacher,
                          const MlpClassifier& student, const Generator& gen,
                          const ConfigParams& params, std::uint64_t /*seed*/) {
    if (!teacher.differentiable())
        throw std::invalid_argument("config_generate: teacher variant has no differentiable surrogate");

    auto inv = gen.invert(x);
    if (!inv.ok) throw std::runtime_error("config_generate: inversion above tolerance");

    Tape tape;
    const Tape::Id z = tape.leaf(Tensor::vec(inv.z), "z");
    const Tape::Id gx = gen.emit_decode(tape, z);

    Tape::Id log_t;
    std::vector<Tape::Id> teacher_pids;
    if (teacher.kind() == Teacher::Kind::exact_bayes) {
        log_t = emit_bayes_log_posterior(tape, gx, *teacher.world(), teacher.split());
    } else {
        teacher_pids = teacher.frozen().emit_params(tape);
        log_t = teacher.frozen().emit(tape, gx, teacher_pids);
    }
    const auto student_pids = student.emit_params(tape);
    const Tape::Id log_f = student.emit(tape, gx, student_pids);

    const Tape::Id t_y = tape.exp_(tape.select(log_t, (std::size_t)y));
    const Tape::Id f_y = tape.exp_(tape.select(log_f, (std::size_t)y));
    const Tape::Id one_minus_f = tape.scale_shift(f_y, -1.0, 1.0);
    const Tape::Id obj = tape.add(tape.pow_(t_y, params.gamma), tape.pow_(one_minus_f, params.gamma));

    OptimizerState opt;
    opt.lr = params.lr;
    std::vector<Tensor> zt = {Tensor::vec(inv.z)};
    opt.init(zt);

    AugSample out;
    out.y = y;
    out.method = AugMethod::config;
    for (int step = 0; step < params.steps; ++step) {
        tape.set_leaf(z, zt[0]);
        const double val = tape.forward_scalar(obj);
        AugTraceStep tr;
        tr.teacher_conf = tape.value(t_y).at(0);
        tr.student_conf = tape.value(f_y).at(0);
        tr.objective = val;
        out.trace.push_back(tr);
        tape.backward(obj);
        Tensor g = tape.grad(z);
        for (auto& v : g.data) v = -v;  // ascent
        optimizer_step(opt, zt, {g});
    }
    tape.set_leaf(z, zt[0]);
    const double final_obj = tape.forward_scalar(obj);
    AugTraceStep tr;
    tr.teacher_conf = tape.value(t_y).at(0);
    tr.student_conf = tape.value(f_y).at(0);
    tr.objective = final_obj;
    out.trace.push_back(tr);

    out.steps_used = params.steps;
    out.x = gen.decode(zt[0].data);
    out.final_teacher_conf = tr.teacher_conf;
    out.final_student_conf = tr.student_conf;
    return out;
}

LatentPrior LatentPrior::fit(const GroupedDataset& train, const Generator& gen, int num_classes) {
    LatentPrior p;
    const int m = gen.latent_dim();
    p.mean_per_class.assign(num_classes, Vec(m, 0.0));
    p.std_per_class.assign(num_classes, Vec(m, 0.0));
    std::vector<std::vector<Vec>> latents(num_classes);
    for (const auto& e : train.examples) {
        auto inv = gen.invert(e.x);
        if (inv.ok) latents[e.y].push_back(inv.z);
    }
    for (int c = 0; c < num_classes; ++c) {
        const auto& zs = latents[c];
        if (zs.empty()) throw std::invalid_argument("LatentPrior: class without invertible samples");
        for (const auto& z : zs)
            for (int i = 0; i < m; ++i) p.mean_per_class[c][i] += z[i];
        for (int i = 0; i < m; ++i) p.mean_per_class[c][i] /= (double)zs.size();
        for (const auto& z : zs)
            for (int i = 0; i < m; ++i) {
                const double d = z[i] - p.mean_per_class[c][i];
                p.std_per_class[c][i] += d * d;
            }
        for (int i = 0; i < m; ++i)
            p.std_per_class[c][i] = std::sqrt(p.std_per_class[c][i] / (double)std::max<std::size_t>(1, zs.size() - 1));
    }
    return p;
}

AugSample baseline_generate(AugMethod kind, const Vec& x, int y, const MlpClassifier* student,
                            const Generator& gen, const BaselineParams& params,
                            const LatentPrior* prior, std::uint64_t seed) {
    Rng rng(seed);
    AugSample out;
    out.y = y;
    out.method = kind;

    switch (kind) {
        case AugMethod::unconditional: {
            if (prior == nullptr)
                throw std::invalid_argument("baseline_generate: unconditional needs a latent prior");
            Vec z(gen.latent_dim());
            for (int i = 0; i < gen.latent_dim(); ++i)
                z[i] = prior->mean_per_class[y][i] + prior->std_per_class[y][i] * rng.gaussian();
            out.x = gen.decode(z);
            return out;
        }
        case AugMethod::noise_resample: {
            auto inv = gen.invert(x);
            if (!inv.ok) throw std::runtime_error("baseline_generate: inversion above tolerance");
            Vec z = inv.z;
            for (auto& v : z) v += params.rho * std::fabs(v) * rng.gaussian();
            out.x = gen.decode(z);
            return out;
        }
        case AugMethod::latent_perturb: {
            auto inv = gen.invert(x);
            if (!inv.ok) throw std::runtime_error("baseline_generate: inversion above tolerance");
            Vec z = inv.z;
            for (auto& v : z) v *= 1.0 + rng.uniform(-params.rho, params.rho);
            out.x = gen.decode(z);
            return out;
        }
        case AugMethod::student_adversarial: {
            if (student == nullptr)
                throw std::invalid_argument("baseline_generate: student_adversarial needs a student");
            auto inv = gen.invert(x);
            if (!inv.ok) throw std::runtime_error("baseline_generate: inversion above tolerance");
            Tape tape;
            const Tape::Id z = tape.leaf(Tensor::vec(inv.z), "z");
            const Tape::Id gx = gen.emit_decode(tape, z);
            const auto pids = student->emit_params(tape);
            const Tape::Id log_f = student->emit(tape, gx, pids);
            // ascend -log f_y
            const Tape::Id obj = tape.scale_shift(tape.select(log_f, (std::size_t)y), -1.0, 0.0);
            OptimizerState opt;
            opt.lr = params.lr;
            std::vector<Tensor> zt = {Tensor::vec(inv.z)};
            opt.init(zt);
            for (int step = 0; step < params.steps; ++step) {
                tape.set_leaf(z, zt[0]);
                const double val = tape.forward_scalar(obj);
                AugTraceStep tr;
                tr.student_conf = std::exp(-val);
                tr.objective = val;
                out.trace.push_back(tr);
                tape.backward(obj);
                Tensor g = tape.grad(z);
                for (auto& v : g.data) v = -v;
                optimizer_step(opt, zt, {g});
            }
            out.steps_used = params.steps;
            out.x = gen.decode(zt[0].data);
            return out;
        }
        case AugMethod::config:
            throw std::invalid_argument("baseline_generate: use config_generate for config");
    }
    throw std::logic_error("unreachable");
}

AugmentationBatch generate_batch(AugMethod method, const GroupedDataset& train,
                                 const Teacher* teacher, const MlpClassifier* student,
                                 const Generator& gen, int multiplicity,
                                 const ConfigParams& cfg_params, const BaselineParams& base_params,
                                 std::uint64_t seed) {
    AugmentationBatch batch;
    batch.method = method;
    if (multiplicity == 0) return batch;
    if (method == AugMethod::config && (teacher == nullptr || student == nullptr))
        throw std::invalid_argument("generate_batch: config needs teacher and student");

    std::optional<LatentPrior> prior;
    if (method == AugMethod::unconditional) {
        const int L = teacher != nullptr && teacher->world() != nullptr
                          ? teacher->world()->spec().num_classes
                          : (student != nullptr ? student->widths().back() : 2);
        prior = LatentPrior::fit(train, gen, L);
    }

    for (std::size_t i = 0; i < train.size(); ++i) {
        const Example& e = train.examples[i];
        auto inv = gen.invert(e.x);
        if (!inv.ok && method != AugMethod::unconditional) {
            batch.skipped += (std::size_t)multiplicity;
            continue;
        }
        for (int rep = 0; rep < multiplicity; ++rep) {
            const std::uint64_t s = derive_seed(seed, "augment", i * 131071ULL + (std::size_t)rep);
            AugSample sample;
            if (method == AugMethod::config) {
                Vec x0 = e.x;
                if (rep > 0) {
                    // jitter replicas of the same source so the augmentations differ
                    Rng rng(s);
                    for (auto& v : x0) v += 0.05 * rng.gaussian();
                }
                sample = config_generate(x0, e.y, *teacher, *student, gen, cfg_params, s);
            } else {
                sample = baseline_generate(method, e.x, e.y, student, gen, base_params,
                                           prior ? &*prior : nullptr, s);
            }
            sample.source_index = i;
            sample.source_group = e.group;
            if (teacher != nullptr) sample.final_teacher_conf = teacher->predict_probs(sample.x)[e.y];
            if (student != nullptr) sample.final_student_conf = student->predict_probs(sample.x)[e.y];
            batch.samples.push_back(std::move(sample));
        }
    }
    return batch;
}

AugmentedDataset build_augmented_dataset(const GroupedDataset& train,
                                         const AugmentationBatch& batch, int multiplicity) {
    if (multiplicity < 0) throw std::invalid_argument("build_augmented_dataset: negative multiplicity");
    const std::size_t expected = train.size() * (std::size_t)multiplicity;
    if (batch.size() + batch.skipped != expected)
        throw std::invalid_argument("build_augmented_dataset: multiplicity mismatch (" +
                                    std::to_string(batch.size()) + " augmentations for " +
                                    std::to_string(train.size()) + " examples, m=" +
                                    std::to_string(multiplicity) + ")");
    AugmentedDataset out;
    out.data = train;
    for (const auto& s : batch.samples) {
        Example e;
        e.x = s.x;
        e.y = s.y;  // labels are preserved by construction
        e.group = s.source_group;
        out.data.examples.push_back(std::move(e));
    }
    out.alpha = (double)multiplicity / (double)(1 + multiplicity);
    return out;
}

// --- serialization ----------------------------------------------------------

namespace {
void put_double(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}
}  // namespace

void write_batch_csv(const AugmentationBatch& b, std::ostream& out) {
    out << "# schema: confikd.augbatch.v1\n";
    out << "# method=" << aug_method_name(b.method) << " skipped=" << b.skipped << "\n";
    const std::size_t d = b.samples.empty() ? 0 : b.samples[0].x.size();
    for (std::size_t i = 0; i < d; ++i) out << "x" << i << ",";
    out << "y,source_index,method,steps,teacher_conf,student_conf\n";
    for (const auto& s : b.samples) {
        for (double v : s.x) {
            put_double(out, v);
            out << ",";
        }
        out << s.y << "," << s.source_index << "," << aug_method_name(s.method) << "," << s.steps_used
            << ",";
        put_double(out, s.final_teacher_conf);
        out << ",";
        put_double(out, s.final_student_conf);
        out << "\n";
    }
}

void write_batch_csv(const AugmentationBatch& b, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_batch_csv(b, f);
}

void write_traces(const AugmentationBatch& b, std::ostream& out) {
    out << "# schema: confikd.augtrace.v1\n";
    out << "sample,step,teacher_conf,student_conf,objective\n";
    for (std::size_t i = 0; i < b.samples.size(); ++i) {
        for (std::size_t s = 0; s < b.samples[i].trace.size(); ++s) {
            const auto& tr = b.samples[i].trace[s];
            out << i << "," << s << ",";
            put_double(out, tr.teacher_conf);
            out << ",";
            put_double(out, tr.student_conf);
            out << ",";
            put_double(out, tr.objective);
            out << "\n";
        }
    }
}

void write_traces(const AugmentationBatch& b, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_traces(b, f);
}

}  // namespace confikd
