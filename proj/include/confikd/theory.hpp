#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "confikd/augment.hpp"
#include "confikd/models.hpp"
#include "confikd/synthworld.hpp"

namespace confikd {

// Concrete instantiation of the generalization-bound quantities: a world with
// exact p*, a teacher/student pair, an augmentation distribution Q given as an
// empirical batch, and the mixture weight alpha.
struct TheoryScenario {
    const World* world = nullptr;
    const Teacher* teacher = nullptr;
    const Classifier* student = nullptr;
    const AugmentationBatch* q_batch = nullptr;
    double alpha = 0.5;
    std::size_t probe_budget = 4000;
    std::size_t risk_samples = 20000;
    std::uint64_t seed = 0;
};

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct TheoryReport {
    // measured quantities
    Estimate r_test, r_train, r_q, r_d_train;
    Estimate omega, omega_aug, psi, delta;
    Estimate eps_aug;
    double tau = 0.0, sigma = 0.0;
    double delta_t = 0.0, delta_s = 0.0;
    double theta = 0.0;
    double alpha = 0.0;
    int L = 0;
    std::size_t probe_count = 0;

    // assumption flags (each recomputed from the stored quantities)
    bool sigma_lt_tau = false;
    bool omega_positive = false;
    bool deltas_small = false;    // delta_t + delta_s < 1/L
    bool theta_defined = false;   // theta preconditions hold
    bool theta_positive = false;
    bool alpha_admissible = false;  // alpha <= min{1, omega/(2 theta)}
    bool assumptions_ok = false;

    // bound results (asserted only when assumptions_ok)
    double bound_rhs = 0.0;  // min{omega - theta, omega/2}
    bool bound_checked = false;
    bool bound_holds = false;       // |omega_aug| <= rhs + 3 combined SE
    double omega_minus_alpha_theta = 0.0;  // logged intermediate
    bool identity_holds = false;    // omega_aug == omega - alpha (r_q - r_train)

    // lemma results
    double lemma_lhs = 0.0;  // |R_train(t) - R_Q(t)|
    double lemma_lhs_se = 0.0;
    double lemma_rhs = 0.0;  // 2 log(1/(1 - delta_t L)) + eps_aug
    bool lemma_applicable = false;
    bool lemma_holds = false;
};

// Empirical sup-norm estimates over probe sets drawn from the respective
// supports (lower bounds on the true sup): delta_t = |t - p*|_inf over
// test+train+Q, delta_s = |f - t|_inf over train.
std::pair<double, double> measure_deltas(const Teacher& teacher, const Classifier& student,
                                         const World& world, const AugmentationBatch* q_batch,
                                         std::size_t probe_budget, std::uint64_t seed);

struct TauSigma {
    double tau = 0.0;
    double sigma = 0.0;
    bool valid = false;  // sigma < tau
};
TauSigma measure_tau_sigma(const AugmentationBatch& batch, const Classifier& teacher,
                           const Classifier& student);

Estimate epsilon_aug(const World& world, const AugmentationBatch& q_batch, std::size_t budget,
                     std::uint64_t seed);

struct ThetaResult {
    double value = 0.0;
    bool defined = false;
    std::string reason;
};
ThetaResult theta(double tau, double sigma, double delta_s, double delta_t, int L, double eps_aug);

struct OmegaQuantities {
    Estimate omega, omega_aug, psi, delta;
    Estimate r_test, r_train, r_q, r_d_train;
};
OmegaQuantities omega_quantities(const World& world, const Classifier& student,
                                 const Classifier& teacher, const AugmentationBatch& q_batch,
                                 double alpha, std::size_t budget, std::uint64_t seed);

TheoryReport verify_proposition(const TheoryScenario& scenario);
TheoryReport verify_lemma(const TheoryScenario& scenario);

void write_theory_report(const TheoryReport& r, std::ostream& out);
void write_theory_report(const TheoryReport& r, const std::string& path);

}  // namespace confikd
