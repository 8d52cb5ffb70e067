#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "confikd/models.hpp"
#include "confikd/rng.hpp"
#include "confikd/synthworld.hpp"

namespace confikd {

enum class LossMode { erm, edrm, erm_plus_edrm };
enum class EdrmForm { cross_entropy, kl };
enum class MixMode { none, mask_mix, convex_mix };

std::string loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& s);
std::string mix_mode_name(MixMode m);
MixMode mix_mode_from_name(const std::string& s);

// -log pred_y. Zero probabilities are clamped at 1e-300; the clamp counter
// is process-wide and reported through clamp_warnings().
double erm_loss(const Vec& pred, int y);
double erm_loss_soft(const Vec& pred, const Vec& soft_label);
double edrm_loss(const Vec& pred, const Vec& teacher_probs, EdrmForm form);
double combined_loss(const Vec& pred, int y, const Vec& teacher_probs);
long clamp_warnings();

struct MixedExample {
    Vec x;
    Vec soft_label;  // over classes
};

MixedExample mask_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, Rng& rng);
MixedExample convex_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, Rng& rng);
MixedExample mask_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, std::uint64_t seed);
MixedExample convex_mix(const Vec& x1, int y1, const Vec& x2, int y2, int num_classes, std::uint64_t seed);

struct TrainConfig {
    LossMode loss_mode = LossMode::edrm;
    EdrmForm edrm_form = EdrmForm::kl;
    int epochs = 100;
    int batch_size = 128;
    double base_lr = 1e-2;
    double weight_decay = 1e-4;
    MixMode mix_mode = MixMode::none;
    double mix_probability = 0.5;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_restricted_acc = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int selected_epoch = 0;
    double best_val_acc = 0.0;
    double final_R_train = 0.0;     // empirical ERM risk at the selected checkpoint
    double final_R_D_train = 0.0;   // empirical distilled risk (cross-entropy form)
};

// Runs minibatch AdamW with a cosine schedule; evaluates val_restricted
// accuracy each epoch and returns the parameters of the best epoch
// (ties resolve to the earliest).
TrainReport train_student(MlpClassifier& student, const GroupedDataset& data,
                          const Teacher* teacher, const GroupedDataset& val_restricted,
                          const TrainConfig& cfg);

void write_train_report_csv(const TrainReport& r, std::ostream& out);
void write_train_report_csv(const TrainReport& r, const std::string& path);

}  // namespace confikd
