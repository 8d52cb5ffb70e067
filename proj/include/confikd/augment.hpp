#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "confikd/models.hpp"
#include "confikd/synthworld.hpp"

namespace confikd {

// Generative stand-in for the diffusion chain: an invertible decoder from
// latent space to input space. The affine form has a closed-form inverse;
// the MLP form is inverted by gradient descent on the reconstruction error.
class Generator {
public:
    enum class Kind { affine, mlp };

    // x = A z + c with A a seeded random orthogonal map (latent_dim = input_dim).
    static Generator affine_for_world(const World& world, std::uint64_t seed);
    static Generator make_mlp(std::vector<int> widths, std::uint64_t seed, double recon_tol);

    Kind kind() const { return kind_; }
    int latent_dim() const { return latent_dim_; }
    int input_dim() const { return input_dim_; }
    double reconstruction_tolerance() const { return recon_tol_; }

    Vec decode(const Vec& z) const;

    struct InvertResult {
        Vec z;
        double reconstruction_error = 0.0;
        bool ok = true;
    };
    InvertResult invert(const Vec& x) const;

    // Differentiable decode subgraph.
    Tape::Id emit_decode(Tape& tape, Tape::Id z) const;

private:
    Kind kind_ = Kind::affine;
    int latent_dim_ = 0, input_dim_ = 0;
    Matrix A_, A_inv_;
    Vec c_;
    // mlp decoder parameters (tanh hidden layers)
    std::vector<int> widths_;
    std::vector<Tensor> params_;
    double recon_tol_ = 1e-6;
};

enum class AugMethod { config, unconditional, noise_resample, latent_perturb, student_adversarial };

std::string aug_method_name(AugMethod m);
AugMethod aug_method_from_name(const std::string& s);

struct AugTraceStep {
    double teacher_conf = 0.0;
    double student_conf = 0.0;
    double objective = 0.0;
};

struct AugSample {
    Vec x;
    int y = 0;
    std::size_t source_index = 0;
    AugMethod method = AugMethod::config;
    int steps_used = 0;
    std::vector<AugTraceStep> trace;
    double final_teacher_conf = 0.0;  // tau candidate t_y
    double final_student_conf = 0.0;  // sigma candidate f_y
    GroupKey source_group;
};

struct AugmentationBatch {
    std::vector<AugSample> samples;
    AugMethod method = AugMethod::config;
    std::size_t skipped = 0;  // inversion failures

    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
};

// Eq-7-style confidence objective: t_y^gamma + (1 - f_y)^gamma.
double config_objective(double t_y, double f_y, double gamma);

struct ConfigParams {
    int steps = 5;
    double lr = 0.01;
    double gamma = 2.0;
};

// Ascends the confidence objective over the latent of one source example.
// The teacher must be differentiable (exact_bayes via the closed-form
// posterior subgraph, or frozen_mlp); noisy_bayes is rejected.
AugSample config_generate(const Vec& x, int y, const Teacher& teacher,
                          const MlpClassifier& student, const Generator& gen,
                          const ConfigParams& params, std::uint64_t seed);

struct BaselineParams {
    double rho = 0.3;  // noise / perturbation scale
    int steps = 5;     // student_adversarial ascent steps
    double lr = 0.01;
};

// Class-conditional empirical Gaussian over inverted training latents;
// backs the `unconditional` baseline.
struct LatentPrior {
    std::vector<Vec> mean_per_class;
    std::vector<Vec> std_per_class;

    static LatentPrior fit(const GroupedDataset& train, const Generator& gen, int num_classes);
};

AugSample baseline_generate(AugMethod kind, const Vec& x, int y, const MlpClassifier* student,
                            const Generator& gen, const BaselineParams& params,
                            const LatentPrior* prior, std::uint64_t seed);

// Generates `multiplicity` augmentations per training example.
AugmentationBatch generate_batch(AugMethod method, const GroupedDataset& train,
                                 const Teacher* teacher, const MlpClassifier* student,
                                 const Generator& gen, int multiplicity,
                                 const ConfigParams& cfg_params, const BaselineParams& base_params,
                                 std::uint64_t seed);

struct AugmentedDataset {
    GroupedDataset data;
    double alpha = 0.0;  // m / (1 + m)
};

AugmentedDataset build_augmented_dataset(const GroupedDataset& train,
                                         const AugmentationBatch& batch, int multiplicity);

void write_batch_csv(const AugmentationBatch& b, std::ostream& out);
void write_batch_csv(const AugmentationBatch& b, const std::string& path);
void write_traces(const AugmentationBatch& b, std::ostream& out);
void write_traces(const AugmentationBatch& b, const std::string& path);

}  // namespace confikd
