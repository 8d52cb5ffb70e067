#include "confikd/distill.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "confikd/diffcore.hpp"

namespace confikd {

std::string loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::erm: return "erm";
        case LossMode::edrm: return "edrm";
        case LossMode::erm_plus_edrm: return "erm+edrm";
    }
    return "?";
}

LossMode loss_mode_from_name(const std::string& s) {
    if (s == "erm") return LossMode::erm;
    if (s == "edrm") return LossMode::edrm;
    if (s == "erm+edrm" || s == "erm_plus_edrm") return LossMode::erm_plus_edrm;
    throw std::invalid_argument("unknown loss mode: " + s);
}

std::string mix_mode_name(MixMode m) {
    switch (m) {
        case MixMode::none: return "none";
        case MixMode::mask_mix: return "mask";
        case MixMode::convex_mix: return "convex";
    }
    return "?";
}

MixMode mix_mode_from_name(const std::string& s) {
    if (s == "none") return MixMode::none;
    if (s == "mask" || s == "mask_mix") return MixMode::mask_mix;
    if (s == "convex" || s == "convex_mix") return MixMode::convex_mix;
    throw std::invalid_argument("unknown mix mode: " + s);
}

namespace {
std::atomic<long> g_clamp_count{0};

double safe_log(double p) {
    if (p < 1e-300) {
        g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        p = 1e-300;
    }
    return std::log(p);
}
}  // namespace

long clamp_warnings() { return g_clamp_count.load(); }

double erm_loss(const Vec& pred, int y) {
    if (y < 0 || (std::size_t)y >= pred.size()) throw std::invalid_argument("erm_loss: label out of range");
    return -safe_log(pred[y]);
}

double erm_loss_soft(const Vec& pred, const Vec& soft_label) {
    double s = 0.0;
    for (std::size_t c = 0; c < pred.size(); ++c)
        if (soft_label[c] != 0.0) s -= soft_label[c] * safe_log(pred[c]);
    return s;
}

double edrm_loss(const Vec& pred, const Vec& teacher_probs, EdrmForm form) {
    if (pred.size() != teacher_probs.size())
        throw std::invalid_argument("edrm_loss: class count mismatch");
    double ce = 0.0;
    for (std::size_t c = 0; c < pred.size(); ++c) ce -= teacher_probs[c] * safe_log(pred[c]);
    if (form == EdrmForm::cross_entropy) return ce;
    // KL(t||f) = CE(t,f) - H(t); differs from CE by a teacher-only constant
    double ent = 0.0;
    for (double t : teacher_probs)
        if (t > 0.0) ent -= t * std::log(t);
    return ce - ent;
}

double combined_loss(const Vec& pred, int y, const Vec& teacher_probs) {
    return erm_loss(pred, y) + edrm_loss(pred, teacher_probs, EdrmForm::cross_entropy);
}

MixedExample mask_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, Rng& rng) {
    if (x1.size() != x2.size()) throw std::invalid_argument("mask_mix: dimension mismatch");
    const double lambda = rng.uniform();
    MixedExample m;
    m.x.resize(x1.size());
    std::size_t ones = 0;
    for (std::size_t i = 0; i < x1.size(); ++i) {
        const bool keep1 = rng.uniform() < lambda;
        m.x[i] = keep1 ? x1[i] : x2[i];
        ones += keep1 ? 1 : 0;
    }
    const double w1 = (double)ones / (double)x1.size();
    m.soft_label.assign(num_classes, 0.0);
    m.soft_label[y1] += w1;
    m.soft_label[y2] += 1.0 - w1;
    return m;
}

MixedExample convex_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, Rng& rng) {
    if (x1.size() != x2.size()) throw std::invalid_argument("convex_mix: dimension mismatch");
    const double lambda = rng.uniform();  // Beta(1,1)
    MixedExample m;
    m.x.resize(x1.size());
    for (std::size_t i = 0; i < x1.size(); ++i) m.x[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
    m.soft_label.assign(num_classes, 0.0);
    m.soft_label[y1] += lambda;
    m.soft_label[y2] += 1.0 - lambda;
    return m;
}

MixedExample mask_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, std::uint64_t seed) {
    Rng rng(seed);
    return mask_mix(x1, y1, x2, y2, num_classes, rng);
}

MixedExample convex_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, std::uint64_t seed) {
    Rng rng(seed);
    return convex_mix(x1, y1, x2, y2, num_classes, rng);
}

namespace {
double dataset_accuracy(const MlpClassifier& m, const GroupedDataset& ds) {
    if (ds.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& e : ds.examples)
        if ((int)m.predict_class(e.x) == e.y) ++ok;
    return (double)ok / (double)ds.size();
}
}  // namespace

TrainReport train_student(MlpClassifier& student, const GroupedDataset& data,
                          const Teacher* teacher, const GroupedDataset& val_restricted,
                          const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_student: empty dataset");
    if (cfg.loss_mode != LossMode::erm && teacher == nullptr)
        throw std::invalid_argument("train_student: EDRM requires a teacher");
    if (cfg.mix_probability < 0.0 || cfg.mix_probability > 1.0)
        throw std::invalid_argument("train_student: mix_probability outside [0,1]");

    const int L = student.widths().back();
    const std::size_t N = data.size();
    const std::size_t B = std::min<std::size_t>((std::size_t)cfg.batch_size, N);
    const long steps_per_epoch = (long)((N + B - 1) / B);
    const long total_steps = (long)cfg.epochs * steps_per_epoch;

    Rng rng(derive_seed(cfg.seed, "train_student"));
    OptimizerState opt;
    opt.lr = cfg.base_lr;
    opt.weight_decay = cfg.weight_decay;
    opt.init(student.params());

    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    std::vector<Tensor> best_params = student.params();
    double best_acc = -1.0;
    long global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < N; start += B) {
            const std::size_t end = std::min(start + B, N);
            Tape tape;
            const auto pids = student.emit_params(tape);
            std::vector<Tape::Id> losses;
            losses.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const Example& e = data.examples[order[i]];
                Vec x = e.x;
                Vec hard_label(L, 0.0);
                hard_label[e.y] = 1.0;
                Vec soft = hard_label;
                if (cfg.mix_mode != MixMode::none && rng.uniform() < cfg.mix_probability) {
                    const Example& p = data.examples[rng.uniform_index(N)];
                    MixedExample mx = cfg.mix_mode == MixMode::mask_mix
                                          ? mask_mix(e.x, e.y, p.x, p.y, L, rng)
                                          : convex_mix(e.x, e.y, p.x, p.y, L, rng);
                    x = std::move(mx.x);
                    soft = std::move(mx.soft_label);
                }
                const Tape::Id xin = tape.leaf(Tensor::vec(x));
                const Tape::Id logf = student.emit(tape, xin, pids);

                Tape::Id loss;
                if (cfg.loss_mode == LossMode::erm) {
                    Vec w = soft;
                    for (auto& v : w) v = -v;
                    loss = tape.dot_const(logf, w);
                } else {
                    // teacher targets evaluated on the (possibly mixed) input
                    Vec t = teacher->predict_probs(x);
                    Vec w = t;
                    for (auto& v : w) v = -v;
                    Tape::Id edrm = tape.dot_const(logf, w);
                    if (cfg.edrm_form == EdrmForm::kl) {
                        double tlogt = 0.0;
                        for (double tv : t)
                            if (tv > 0.0) tlogt += tv * std::log(tv);
                        edrm = tape.scale_shift(edrm, 1.0, tlogt);
                    }
                    if (cfg.loss_mode == LossMode::edrm) {
                        loss = edrm;
                    } else {
                        Vec wh = soft;
                        for (auto& v : wh) v = -v;
                        loss = tape.add(tape.dot_const(logf, wh), edrm);
                    }
                }
                losses.push_back(loss);
            }
            const Tape::Id batch_loss =
                tape.scale_shift(tape.sum(tape.stack(losses)), 1.0 / (double)losses.size(), 0.0);
            tape.backward(batch_loss);
            std::vector<Tensor> grads;
            grads.reserve(pids.size());
            for (auto id : pids) grads.push_back(tape.grad(id));
            const double lr = cosine_lr(cfg.base_lr, global_step, total_steps);
            optimizer_step(opt, student.params(), grads, lr);
            ++global_step;
            epoch_loss += tape.value(batch_loss).at(0);
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / (double)batches;
        rec.val_restricted_acc = dataset_accuracy(student, val_restricted);
        rec.lr = cosine_lr(cfg.base_lr, global_step - 1, total_steps);
        report.epochs.push_back(rec);
        if (rec.val_restricted_acc > best_acc) {
            best_acc = rec.val_restricted_acc;
            best_params = student.params();
            report.selected_epoch = epoch;
        }
    }

    student.params() = best_params;
    report.best_val_acc = best_acc;

    double r_train = 0.0, r_d_train = 0.0;
    for (const auto& e : data.examples) {
        Vec probs = student.predict_probs(e.x);
        r_train += erm_loss(probs, e.y);
        if (teacher != nullptr)
            r_d_train += edrm_loss(probs, teacher->predict_probs(e.x), EdrmForm::cross_entropy);
    }
    report.final_R_train = r_train / (double)N;
    report.final_R_D_train = teacher ? r_d_train / (double)N : 0.0;
    return report;
}

void write_train_report_csv(const TrainReport& r, std::ostream& out) {
    out << "# schema: confikd.train_report.v1\n";
    out << "epoch,train_loss,val_restricted_acc,lr\n";
    char buf[40];
    for (const auto& e : r.epochs) {
        out << e.epoch << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", e.train_loss);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", e.val_restricted_acc);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", e.lr);
        out << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", r.best_val_acc);
    out << "# selected_epoch=" << r.selected_epoch << " best_val_acc=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", r.final_R_train);
    out << "# R_train=" << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", r.final_R_D_train);
    out << " R_D_train=" << buf << "\n";
}

void write_train_report_csv(const TrainReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_train_report_csv(r, f);
}

}  // namespace confikd
