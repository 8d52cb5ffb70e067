#include "confikd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "confikd/distill.hpp"

namespace confikd {

namespace {
void require_nonempty(const GroupedDataset& data, const char* who) {
    if (data.empty()) throw std::invalid_argument(std::string(who) + ": empty dataset");
}
}  // namespace

GroupMetricsReport group_metrics(const Classifier& model, const GroupedDataset& data) {
    require_nonempty(data, "group_metrics");
    GroupMetricsReport r;
    std::map<std::string, std::size_t> correct;
    std::size_t total_correct = 0;
    for (const auto& e : data.examples) {
        const std::string key = e.group.str();
        const bool ok = (int)model.predict_class(e.x) == e.y;
        r.group_sizes[key] += 1;
        correct[key] += ok ? 1 : 0;
        total_correct += ok ? 1 : 0;
    }
    r.sample_mean = (double)total_correct / (double)data.size();
    double sum = 0.0;
    double worst = 1.0;
    for (const auto& [key, n] : r.group_sizes) {
        const double acc = (double)correct[key] / (double)n;
        r.per_group_acc[key] = acc;
        sum += acc;
        worst = std::min(worst, acc);
    }
    r.group_mean = sum / (double)r.group_sizes.size();
    r.worst_group = worst;
    return r;
}

double sample_mean_acc(const Classifier& model, const GroupedDataset& data) {
    return group_metrics(model, data).sample_mean;
}

double group_mean_acc(const Classifier& model, const GroupedDataset& data) {
    return group_metrics(model, data).group_mean;
}

double worst_group_acc(const Classifier& model, const GroupedDataset& data) {
    return group_metrics(model, data).worst_group;
}

AgreementReport agreement(const Classifier& a, const Classifier& b, const GroupedDataset& data) {
    require_nonempty(data, "agreement");
    AgreementReport r;
    std::map<std::string, std::size_t> agree;
    std::size_t total = 0;
    for (const auto& e : data.examples) {
        const std::string key = e.group.str();
        const bool same = a.predict_class(e.x) == b.predict_class(e.x);
        r.group_sizes[key] += 1;
        agree[key] += same ? 1 : 0;
        total += same ? 1 : 0;
    }
    r.overall = (double)total / (double)data.size();
    for (const auto& [key, n] : r.group_sizes) r.per_group[key] = (double)agree[key] / (double)n;
    return r;
}

DifficultyScores difficulty_scores(const Classifier& student, const AugmentationBatch& batch,
                                   const Classifier& teacher) {
    if (batch.empty()) throw std::invalid_argument("difficulty_scores: empty batch");
    DifficultyScores d;
    std::size_t correct = 0;
    for (const auto& s : batch.samples) {
        Vec probs = student.predict_probs(s.x);
        if ((int)student.predict_class(s.x) == s.y) ++correct;
        d.mean_R += erm_loss(probs, s.y);
        d.mean_R_D += edrm_loss(probs, teacher.predict_probs(s.x), EdrmForm::cross_entropy);
    }
    const double n = (double)batch.size();
    d.acc_s = (double)correct / n;
    d.mean_R /= n;
    d.mean_R_D /= n;
    return d;
}

double rank_auc(const std::vector<double>& negative_scores,
                const std::vector<double>& positive_scores) {
    if (negative_scores.empty() || positive_scores.empty())
        throw std::invalid_argument("rank_auc: empty score set");
    // Mann-Whitney via ranking; ties share average rank.
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(negative_scores.size() + positive_scores.size());
    for (double s : negative_scores) items.push_back({s, false});
    for (double s : positive_scores) items.push_back({s, true});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j < items.size() && items[j].score == items[i].score) ++j;
        const double avg_rank = 0.5 * ((double)(i + 1) + (double)j);  // 1-based
        for (std::size_t k = i; k < j; ++k)
            if (items[k].positive) rank_sum_pos += avg_rank;
        i = j;
    }
    const double np = (double)positive_scores.size();
    const double nn = (double)negative_scores.size();
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double spurious_mean_auc(const Classifier& model,
                         const std::vector<SpuriousAucInput>& per_class) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const auto& in = per_class[c];
        if (in.spurious_only.empty() || in.class_examples.empty()) continue;  // skipped with warning
        std::vector<double> neg, pos;
        for (const auto& x : in.spurious_only) neg.push_back(model.predict_probs(x)[c]);
        for (const auto& x : in.class_examples) pos.push_back(model.predict_probs(x)[c]);
        sum += rank_auc(neg, pos);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("spurious_mean_auc: every class was skipped");
    return sum / (double)used;
}

void write_group_metrics_csv(const GroupMetricsReport& r, std::ostream& out) {
    out << "# schema: confikd.group_metrics.v1\n";
    out << "group,size,accuracy\n";
    char buf[40];
    for (const auto& [key, acc] : r.per_group_acc) {
        std::snprintf(buf, sizeof(buf), "%.17g", acc);
        out << key << "," << r.group_sizes.at(key) << "," << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", r.sample_mean);
    out << "sample_mean,," << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", r.group_mean);
    out << "group_mean,," << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", r.worst_group);
    out << "worst_group,," << buf << "\n";
}

void write_group_metrics_csv(const GroupMetricsReport& r, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    write_group_metrics_csv(r, f);
}

}  // namespace confikd
