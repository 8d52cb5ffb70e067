#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "confikd/augment.hpp"
#include "confikd/classifier.hpp"
#include "confikd/synthworld.hpp"

namespace confikd {

struct GroupMetricsReport {
    std::map<std::string, double> per_group_acc;  // keyed by GroupKey::str()
    std::map<std::string, std::size_t> group_sizes;
    double sample_mean = 0.0;
    double group_mean = 0.0;
    double worst_group = 0.0;
};

double sample_mean_acc(const Classifier& model, const GroupedDataset& data);
double group_mean_acc(const Classifier& model, const GroupedDataset& data);
double worst_group_acc(const Classifier& model, const GroupedDataset& data);
GroupMetricsReport group_metrics(const Classifier& model, const GroupedDataset& data);

struct AgreementReport {
    double overall = 0.0;
    std::map<std::string, double> per_group;
    std::map<std::string, std::size_t> group_sizes;
};

AgreementReport agreement(const Classifier& a, const Classifier& b, const GroupedDataset& data);

struct DifficultyScores {
    double acc_s = 0.0;    // auxiliary-student accuracy on the augmentations
    double mean_R = 0.0;   // mean ERM loss vs preserved labels
    double mean_R_D = 0.0; // mean distilled loss vs teacher outputs
};

DifficultyScores difficulty_scores(const Classifier& student, const AugmentationBatch& batch,
                                   const Classifier& teacher);

// Mean over classes of the rank-statistic AUC separating spurious-only
// scores from genuine class scores (ties count 0.5). Classes with an empty
// side are skipped; all-skipped is an error.
struct SpuriousAucInput {
    std::vector<Vec> spurious_only;  // inputs with the spurious feature, other class's causal part
    std::vector<Vec> class_examples;
};

double spurious_mean_auc(const Classifier& model,
                         const std::vector<SpuriousAucInput>& per_class);

// Rank AUC of score separation between negatives and positives.
double rank_auc(const std::vector<double>& negative_scores,
                const std::vector<double>& positive_scores);

void write_group_metrics_csv(const GroupMetricsReport& r, std::ostream& out);
void write_group_metrics_csv(const GroupMetricsReport& r, const std::string& path);

}  // namespace confikd
