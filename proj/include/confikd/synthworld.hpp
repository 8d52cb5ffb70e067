#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "confikd/classifier.hpp"
#include "confikd/tensor.hpp"

namespace confikd {

enum class Split { train, val, val_restricted, test };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct GroupKey {
    int cls = 0;
    std::vector<int> bits;

    bool operator==(const GroupKey&) const = default;
    std::string str() const;
};

// Synthetic data-generating process: one Gaussian component per
// (class, spurious-bit-pattern) group, on pairwise-orthonormal causal and
// spurious directions. Train priors may assign zero mass to some groups while
// test priors stay positive there; that asymmetry is the covariate shift.
struct WorldSpec {
    int num_classes = 2;
    int num_spurious_bits = 1;
    int input_dim = 3;
    int latent_dim = 3;
    std::vector<Vec> class_directions;     // num_classes unit vectors
    std::vector<Vec> spurious_directions;  // num_spurious_bits unit vectors
    double class_scale = 1.0;
    double spurious_scale = 1.0;
    double noise_std = 0.4;
    Vec train_priors;  // length K = L * 2^k, group-index order
    Vec test_priors;

    int num_groups() const { return num_classes << num_spurious_bits; }

    // Default 2-class benchmark: train mass only on (class 0, bits all 0)
    // and (class 1, bits all 1); test uniform over all groups.
    static WorldSpec celeba_toy(int spurious_bits = 1);
};

struct Group {
    GroupKey key;
    Vec mean;
    double train_prior = 0.0;
    double test_prior = 0.0;
};

struct Example {
    Vec x;
    int y = 0;
    GroupKey group;
};

struct GroupedDataset {
    std::vector<Example> examples;
    Split tag = Split::train;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

enum class RiskLoss { ce_vs_label, ce_vs_pstar };

struct RiskEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

class World {
public:
    World(WorldSpec spec, std::uint64_t seed);

    const WorldSpec& spec() const { return spec_; }
    const std::vector<Group>& groups() const { return groups_; }
    int group_index(const GroupKey& key) const;

    // Exact Gaussian-mixture posterior under the priors of the given split.
    Vec bayes_posterior(const Vec& x, Split split) const;
    Vec log_bayes_posterior(const Vec& x, Split split) const;

    // The canonical conditional p* used by risks and the theory module; the
    // test priors cover every group, so this is defined on all of input space.
    Vec pstar(const Vec& x) const { return bayes_posterior(x, Split::test); }

    GroupedDataset sample_split(Split split, std::size_t n, std::uint64_t seed,
                                bool class_balanced = false) const;

    // Marginal sampling of inputs only (used by probe sets and risk MC).
    std::vector<Vec> sample_inputs(Split split, std::size_t n, std::uint64_t seed) const;

    // Monte-Carlo estimate of E_{P_split,x}[target(x)^T l(f(x))] where target
    // is p* (ce_vs_pstar) or a hard label drawn from p* (ce_vs_label).
    RiskEstimate true_risk(const Classifier& f, Split split, RiskLoss loss,
                           std::size_t n_samples, std::uint64_t seed) const;

    // Distilled true risk: teacher outputs as targets.
    RiskEstimate true_distilled_risk(const Classifier& f, const Classifier& teacher, Split split,
                                     std::size_t n_samples, std::uint64_t seed) const;

    // Deterministic adaptive-quadrature risk; input_dim <= 2 only.
    double true_risk_quadrature(const Classifier& f, Split split, double abs_tol = 1e-6) const;
    double expectation_quadrature(const std::function<double(const Vec&)>& h, Split split,
                                  double abs_tol = 1e-6) const;

    // Max over probe points of |posterior_train(x) - posterior_test(x)|_inf;
    // reported so the off-support conditional mismatch is never hidden.
    double posterior_discrepancy(std::size_t probes, std::uint64_t seed) const;

    const Vec& priors(Split split) const;

private:
    WorldSpec spec_;
    std::vector<Group> groups_;
    Vec restricted_priors_;  // test priors restricted to train-present groups
};

World make_world(const WorldSpec& spec, std::uint64_t seed);

// CSV persistence. Schema: versioned comment line, then a header row, then
// one row per example: x coordinates, label, group bits, split tag.
void write_dataset_csv(const GroupedDataset& ds, std::ostream& out);
void write_dataset_csv(const GroupedDataset& ds, const std::string& path);
GroupedDataset read_dataset_csv(std::istream& in);
GroupedDataset read_dataset_csv_file(const std::string& path);

}  // namespace confikd
