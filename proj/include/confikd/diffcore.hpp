#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "confikd/tensor.hpp"

namespace confikd {

// Reverse-mode tape over dense tensors. The primitive set is fixed: affine
// maps, relu, tanh, log-softmax, log-sum-exp, elementwise power, exp, sum,
// scalar combinations, elementwise add/mul, coordinate select, scalar stack
// and a constant-weight dot product. Enough to express MLP losses, the exact
// Gaussian-mixture posterior and the confidence-guided latent objective.
class Tape {
public:
    using Id = int;

    enum class Op {
        Leaf,
        Affine,      // inputs {W [m,n], x [n], b [m]} -> [m]
        Relu,
        Tanh,
        LogSoftmax,  // vector -> vector
        LogSumExp,   // vector -> scalar
        Pow,         // elementwise x^p, p constant
        Exp,
        Sum,         // -> scalar
        Axpby,       // a*x + b*y, elementwise, equal shapes
        ScaleShift,  // a*x + b, elementwise
        Mul,
        Select,      // vector coordinate -> scalar
        Stack,       // k scalars -> vector [k]
        Dot,         // <x, w> with constant w -> scalar
    };

    // --- graph construction -------------------------------------------------
    Id leaf(Tensor init, std::string name = "");
    Id affine(Id W, Id x, Id b);
    Id relu(Id x);
    Id tanh_(Id x);
    Id log_softmax(Id x);
    Id logsumexp(Id x);
    Id pow_(Id x, double p);
    Id exp_(Id x);
    Id sum(Id x);
    Id axpby(double a, Id x, double b, Id y);
    Id scale_shift(Id x, double a, double b);
    Id add(Id x, Id y);
    Id mul(Id x, Id y);
    Id select(Id x, std::size_t index);
    Id stack(const std::vector<Id>& scalars);
    Id dot_const(Id x, Vec weights);

    // --- evaluation ---------------------------------------------------------
    void set_leaf(Id id, const Tensor& value);
    void set_leaf(Id id, const Vec& value);
    const Tensor& value(Id id) const { return nodes_[id].value; }

    // Recomputes every node in topological (= insertion) order.
    const Tensor& forward(Id out);
    double forward_scalar(Id out);

    // Accumulates d(out)/d(node) for every node; out must be scalar.
    void backward(Id out);
    const Tensor& grad(Id id) const { return nodes_[id].adjoint; }

    // Max relative error between analytic gradients and central differences
    // over the given leaves.
    double check_gradient(Id out, const std::vector<Id>& leaves, double step);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::Leaf;
        std::vector<Id> in;
        double a = 0.0, b = 0.0;  // coefficients / exponent
        std::size_t index = 0;    // for Select
        Vec weights;              // for Dot
        std::string name;
        Tensor value;
        Tensor adjoint;
        // cached forward scratch (softmax for LogSoftmax / LogSumExp)
        Vec scratch;
    };

    Id push(Node n);
    void eval_node(Node& n);
    void backprop_node(Node& n);
    [[noreturn]] void fail(const Node& n, const std::string& what) const;

    std::vector<Node> nodes_;
};

// Free-function faces matching the library's documented surface.
Tensor forward_eval(Tape& tape, Tape::Id out,
                    const std::vector<std::pair<Tape::Id, Tensor>>& leaf_values);
std::vector<std::pair<Tape::Id, Tensor>> backward_grad(Tape& tape, Tape::Id out,
                                                       const std::vector<Tape::Id>& leaves);

}  // namespace confikd
