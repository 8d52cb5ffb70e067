#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "confikd/classifier.hpp"
#include "confikd/diffcore.hpp"
#include "confikd/synthworld.hpp"

namespace confikd {

enum class Activation { relu, tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& s);

// Fully connected classifier with log-softmax output. Parameters live as
// plain tensors; emit() replays the same computation onto a Tape when
// gradients are needed.
class MlpClassifier : public Classifier {
public:
    MlpClassifier() = default;
    MlpClassifier(std::vector<int> widths, Activation act, std::uint64_t seed);

    Vec log_probs(const Vec& x) const override;

    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return act_; }
    double temperature() const { return temperature_; }
    void set_temperature(double t) { temperature_ = t; }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }

    // Adds the parameters as leaves (or reuses the supplied ids) and returns
    // the log-probability node for input node x.
    std::vector<Tape::Id> emit_params(Tape& tape) const;
    Tape::Id emit(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& param_ids) const;

    void load_params_from(const Tape& tape, const std::vector<Tape::Id>& param_ids);

    std::size_t num_layers() const { return widths_.size() - 1; }

private:
    std::vector<int> widths_;
    Activation act_ = Activation::relu;
    double temperature_ = 1.0;
    std::vector<Tensor> params_;  // W0, b0, W1, b1, ...
};

// Teacher variants. exact_bayes evaluates the world posterior under a split's
// priors; noisy_bayes applies a bounded deterministic logit perturbation
// keyed by a hash of x, so its sup-norm deviation from p* is controllable;
// frozen_mlp wraps trained parameters with optional temperature.
class Teacher : public Classifier {
public:
    enum class Kind { exact_bayes, noisy_bayes, frozen_mlp };

    static Teacher exact_bayes(const World& world, Split split);
    // corruption_level c: logit noise amplitude kappa = log(1+c)/2, giving a
    // declared sup-norm bound of c on the probability deviation.
    static Teacher noisy_bayes(const World& world, Split split, double corruption_level);
    static Teacher frozen_mlp(MlpClassifier model, double temperature);

    Vec log_probs(const Vec& x) const override;

    Kind kind() const { return kind_; }
    Split split() const { return split_; }
    const World* world() const { return world_; }
    double declared_delta_t() const { return corruption_; }
    const MlpClassifier& frozen() const { return frozen_; }
    double temperature() const { return temperature_; }

    bool differentiable() const { return kind_ != Kind::noisy_bayes; }

private:
    Kind kind_ = Kind::exact_bayes;
    const World* world_ = nullptr;
    Split split_ = Split::test;
    double corruption_ = 0.0;
    double kappa_ = 0.0;
    MlpClassifier frozen_;
    double temperature_ = 1.0;
};

Vec teacher_predict(const Teacher& t, const Vec& x);

// Emits the exact Gaussian-mixture log-posterior as a differentiable
// subgraph; matches World::log_bayes_posterior to floating-point rounding.
Tape::Id emit_bayes_log_posterior(Tape& tape, Tape::Id x, const World& world, Split split);

// AdamW: decoupled weight decay, standard bias-corrected moment recursions.
struct OptimizerState {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<Tensor>& params);
};

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params,
                    const std::vector<Tensor>& grads, double lr_override = -1.0);

double cosine_lr(double base_lr, long step, long total_steps);

// Scalar temperature minimizing validation NLL, by golden-section search on
// [0.05, 20]. Returns 1 with a warning flag when val collapses to one class.
struct CalibrationResult {
    double temperature = 1.0;
    bool degenerate = false;
    double nll = 0.0;
};
CalibrationResult calibrate_temperature(const MlpClassifier& model, const GroupedDataset& val);

// Checkpoints: versioned structured text, 17 significant digits.
void save_checkpoint(const MlpClassifier& m, const std::string& path);
MlpClassifier load_checkpoint(const std::string& path);
void write_checkpoint(const MlpClassifier& m, std::ostream& out);
MlpClassifier read_checkpoint(std::istream& in);

}  // namespace confikd
