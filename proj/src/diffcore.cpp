#include "confikd/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace confikd {

Tape::Id Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    Id id = static_cast<Id>(nodes_.size()) - 1;
    eval_node(nodes_[id]);
    return id;
}

void Tape::fail(const Node& n, const std::string& what) const {
    std::string who = n.name.empty() ? ("node#" + std::to_string(&n - nodes_.data())) : n.name;
    throw std::invalid_argument("diffcore: " + what + " at " + who);
}

Tape::Id Tape::leaf(Tensor init, std::string name) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(init);
    n.name = std::move(name);
    return push(std::move(n));
}

Tape::Id Tape::affine(Id W, Id x, Id b) {
    Node n;
    n.op = Op::Affine;
    n.in = {W, x, b};
    return push(std::move(n));
}

Tape::Id Tape::relu(Id x) {
    Node n;
    n.op = Op::Relu;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::tanh_(Id x) {
    Node n;
    n.op = Op::Tanh;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::log_softmax(Id x) {
    Node n;
    n.op = Op::LogSoftmax;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::logsumexp(Id x) {
    Node n;
    n.op = Op::LogSumExp;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::pow_(Id x, double p) {
    Node n;
    n.op = Op::Pow;
    n.in = {x};
    n.a = p;
    return push(std::move(n));
}

Tape::Id Tape::exp_(Id x) {
    Node n;
    n.op = Op::Exp;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::sum(Id x) {
    Node n;
    n.op = Op::Sum;
    n.in = {x};
    return push(std::move(n));
}

Tape::Id Tape::axpby(double a, Id x, double b, Id y) {
    Node n;
    n.op = Op::Axpby;
    n.in = {x, y};
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

Tape::Id Tape::scale_shift(Id x, double a, double b) {
    Node n;
    n.op = Op::ScaleShift;
    n.in = {x};
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

Tape::Id Tape::add(Id x, Id y) { return axpby(1.0, x, 1.0, y); }

Tape::Id Tape::mul(Id x, Id y) {
    Node n;
    n.op = Op::Mul;
    n.in = {x, y};
    return push(std::move(n));
}

Tape::Id Tape::select(Id x, std::size_t index) {
    Node n;
    n.op = Op::Select;
    n.in = {x};
    n.index = index;
    return push(std::move(n));
}

Tape::Id Tape::stack(const std::vector<Id>& scalars) {
    Node n;
    n.op = Op::Stack;
    n.in = scalars;
    return push(std::move(n));
}

Tape::Id Tape::dot_const(Id x, Vec weights) {
    Node n;
    n.op = Op::Dot;
    n.in = {x};
    n.weights = std::move(weights);
    return push(std::move(n));
}

void Tape::set_leaf(Id id, const Tensor& value) {
    Node& n = nodes_[id];
    if (n.op != Op::Leaf) fail(n, "set_leaf on non-leaf");
    if (!n.value.same_shape(value)) fail(n, "set_leaf shape mismatch " + n.value.shape_str() + " vs " + value.shape_str());
    n.value = value;
}

void Tape::set_leaf(Id id, const Vec& value) { set_leaf(id, Tensor::vec(value)); }

void Tape::eval_node(Node& n) {
    auto& N = nodes_;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Affine: {
            const Tensor& W = N[n.in[0]].value;
            const Tensor& x = N[n.in[1]].value;
            const Tensor& b = N[n.in[2]].value;
            if (W.shape.size() != 2 || x.shape.size() != 1 || b.shape.size() != 1)
                fail(n, "affine rank mismatch");
            const std::size_t m = W.shape[0], k = W.shape[1];
            if (x.shape[0] != k || b.shape[0] != m)
                fail(n, "affine shape mismatch W" + W.shape_str() + " x" + x.shape_str() + " b" + b.shape_str());
            n.value = Tensor::zeros({m});
            for (std::size_t r = 0; r < m; ++r) {
                double s = b.at(r);
                const double* wr = W.data.data() + r * k;
                for (std::size_t c = 0; c < k; ++c) s += wr[c] * x.at(c);
                n.value.at(r) = s;
            }
            break;
        }
        case Op::Relu: {
            const Tensor& x = N[n.in[0]].value;
            n.value = x;
            for (auto& v : n.value.data) v = v > 0.0 ? v : 0.0;
            break;
        }
        case Op::Tanh: {
            const Tensor& x = N[n.in[0]].value;
            n.value = x;
            for (auto& v : n.value.data) v = std::tanh(v);
            break;
        }
        case Op::LogSoftmax: {
            const Tensor& x = N[n.in[0]].value;
            if (x.shape.size() != 1) fail(n, "log_softmax needs a vector");
            const std::size_t k = x.shape[0];
            double mx = x.at(0);
            for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, x.at(i));
            double z = 0.0;
            for (std::size_t i = 0; i < k; ++i) z += std::exp(x.at(i) - mx);
            const double lse = mx + std::log(z);
            n.value = Tensor::zeros({k});
            n.scratch.assign(k, 0.0);
            for (std::size_t i = 0; i < k; ++i) {
                n.value.at(i) = x.at(i) - lse;
                n.scratch[i] = std::exp(n.value.at(i));  // softmax
            }
            break;
        }
        case Op::LogSumExp: {
            const Tensor& x = N[n.in[0]].value;
            if (x.shape.size() != 1) fail(n, "logsumexp needs a vector");
            const std::size_t k = x.shape[0];
            double mx = x.at(0);
            for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, x.at(i));
            double z = 0.0;
            for (std::size_t i = 0; i < k; ++i) z += std::exp(x.at(i) - mx);
            const double lse = mx + std::log(z);
            n.value = Tensor::scalar(lse);
            n.scratch.assign(k, 0.0);
            for (std::size_t i = 0; i < k; ++i) n.scratch[i] = std::exp(x.at(i) - lse);
            break;
        }
        case Op::Pow: {
            const Tensor& x = N[n.in[0]].value;
            n.value = x;
            for (auto& v : n.value.data) v = std::pow(v, n.a);
            break;
        }
        case Op::Exp: {
            const Tensor& x = N[n.in[0]].value;
            n.value = x;
            for (auto& v : n.value.data) v = std::exp(v);
            break;
        }
        case Op::Sum: {
            const Tensor& x = N[n.in[0]].value;
            double s = 0.0;
            for (double v : x.data) s += v;
            n.value = Tensor::scalar(s);
            break;
        }
        case Op::Axpby: {
            const Tensor& x = N[n.in[0]].value;
            const Tensor& y = N[n.in[1]].value;
            if (!x.same_shape(y)) fail(n, "axpby shape mismatch " + x.shape_str() + " vs " + y.shape_str());
            n.value = x;
            for (std::size_t i = 0; i < x.size(); ++i) n.value.at(i) = n.a * x.at(i) + n.b * y.at(i);
            break;
        }
        case Op::ScaleShift: {
            const Tensor& x = N[n.in[0]].value;
            n.value = x;
            for (auto& v : n.value.data) v = n.a * v + n.b;
            break;
        }
        case Op::Mul: {
            const Tensor& x = N[n.in[0]].value;
            const Tensor& y = N[n.in[1]].value;
            if (!x.same_shape(y)) fail(n, "mul shape mismatch " + x.shape_str() + " vs " + y.shape_str());
            n.value = x;
            for (std::size_t i = 0; i < x.size(); ++i) n.value.at(i) = x.at(i) * y.at(i);
            break;
        }
        case Op::Select: {
            const Tensor& x = N[n.in[0]].value;
            if (x.shape.size() != 1 || n.index >= x.shape[0]) fail(n, "select out of range");
            n.value = Tensor::scalar(x.at(n.index));
            break;
        }
        case Op::Stack: {
            n.value = Tensor::zeros({n.in.size()});
            for (std::size_t i = 0; i < n.in.size(); ++i) {
                const Tensor& s = N[n.in[i]].value;
                if (!s.is_scalar()) fail(n, "stack input not scalar");
                n.value.at(i) = s.at(0);
            }
            break;
        }
        case Op::Dot: {
            const Tensor& x = N[n.in[0]].value;
            if (x.shape.size() != 1 || x.shape[0] != n.weights.size())
                fail(n, "dot shape mismatch " + x.shape_str());
            double s = 0.0;
            for (std::size_t i = 0; i < n.weights.size(); ++i) s += x.at(i) * n.weights[i];
            n.value = Tensor::scalar(s);
            break;
        }
    }
}

const Tensor& Tape::forward(Id out) {
    for (Id i = 0; i <= out; ++i) eval_node(nodes_[i]);
    return nodes_[out].value;
}

double Tape::forward_scalar(Id out) {
    const Tensor& v = forward(out);
    if (!v.is_scalar()) fail(nodes_[out], "forward_scalar on non-scalar output");
    return v.at(0);
}

void Tape::backprop_node(Node& n) {
    auto& N = nodes_;
    const Tensor& g = n.adjoint;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Affine: {
            Tensor& gW = N[n.in[0]].adjoint;
            Tensor& gx = N[n.in[1]].adjoint;
            Tensor& gb = N[n.in[2]].adjoint;
            const Tensor& W = N[n.in[0]].value;
            const Tensor& x = N[n.in[1]].value;
            const std::size_t m = W.shape[0], k = W.shape[1];
            for (std::size_t r = 0; r < m; ++r) {
                const double gr = g.at(r);
                gb.at(r) += gr;
                double* gwr = gW.data.data() + r * k;
                const double* wr = W.data.data() + r * k;
                for (std::size_t c = 0; c < k; ++c) {
                    gwr[c] += gr * x.at(c);
                    gx.at(c) += gr * wr[c];
                }
            }
            break;
        }
        case Op::Relu: {
            Tensor& gx = N[n.in[0]].adjoint;
            const Tensor& x = N[n.in[0]].value;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x.at(i) > 0.0) gx.at(i) += g.at(i);
            break;
        }
        case Op::Tanh: {
            Tensor& gx = N[n.in[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double t = n.value.at(i);
                gx.at(i) += g.at(i) * (1.0 - t * t);
            }
            break;
        }
        case Op::LogSoftmax: {
            Tensor& gx = N[n.in[0]].adjoint;
            double gs = 0.0;
            for (double v : g.data) gs += v;
            for (std::size_t i = 0; i < g.size(); ++i)
                gx.at(i) += g.at(i) - n.scratch[i] * gs;
            break;
        }
        case Op::LogSumExp: {
            Tensor& gx = N[n.in[0]].adjoint;
            const double gs = g.at(0);
            for (std::size_t i = 0; i < gx.size(); ++i) gx.at(i) += gs * n.scratch[i];
            break;
        }
        case Op::Pow: {
            Tensor& gx = N[n.in[0]].adjoint;
            const Tensor& x = N[n.in[0]].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                gx.at(i) += g.at(i) * n.a * std::pow(x.at(i), n.a - 1.0);
            break;
        }
        case Op::Exp: {
            Tensor& gx = N[n.in[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) gx.at(i) += g.at(i) * n.value.at(i);
            break;
        }
        case Op::Sum: {
            Tensor& gx = N[n.in[0]].adjoint;
            const double gs = g.at(0);
            for (auto& v : gx.data) v += gs;
            break;
        }
        case Op::Axpby: {
            Tensor& gx = N[n.in[0]].adjoint;
            Tensor& gy = N[n.in[1]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx.at(i) += n.a * g.at(i);
                gy.at(i) += n.b * g.at(i);
            }
            break;
        }
        case Op::ScaleShift: {
            Tensor& gx = N[n.in[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) gx.at(i) += n.a * g.at(i);
            break;
        }
        case Op::Mul: {
            Tensor& gx = N[n.in[0]].adjoint;
            Tensor& gy = N[n.in[1]].adjoint;
            const Tensor& x = N[n.in[0]].value;
            const Tensor& y = N[n.in[1]].value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx.at(i) += g.at(i) * y.at(i);
                gy.at(i) += g.at(i) * x.at(i);
            }
            break;
        }
        case Op::Select: {
            Tensor& gx = N[n.in[0]].adjoint;
            gx.at(n.index) += g.at(0);
            break;
        }
        case Op::Stack: {
            for (std::size_t i = 0; i < n.in.size(); ++i)
                N[n.in[i]].adjoint.at(0) += g.at(i);
            break;
        }
        case Op::Dot: {
            Tensor& gx = N[n.in[0]].adjoint;
            const double gs = g.at(0);
            for (std::size_t i = 0; i < n.weights.size(); ++i) gx.at(i) += gs * n.weights[i];
            break;
        }
    }
}

void Tape::backward(Id out) {
    if (!nodes_[out].value.is_scalar()) fail(nodes_[out], "backward needs a scalar output");
    for (auto& n : nodes_) n.adjoint = Tensor::zeros_like(n.value);
    nodes_[out].adjoint.at(0) = 1.0;
    for (Id i = out; i >= 0; --i) backprop_node(nodes_[i]);
}

double Tape::check_gradient(Id out, const std::vector<Id>& leaves, double step) {
    forward(out);
    backward(out);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (Id l : leaves) analytic.push_back(nodes_[l].adjoint);

    double max_rel = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Id l = leaves[li];
        Tensor saved = nodes_[l].value;
        for (std::size_t i = 0; i < saved.size(); ++i) {
            nodes_[l].value.at(i) = saved.at(i) + step;
            const double fp = forward_scalar(out);
            nodes_[l].value.at(i) = saved.at(i) - step;
            const double fm = forward_scalar(out);
            nodes_[l].value.at(i) = saved.at(i);
            const double fd = (fp - fm) / (2.0 * step);
            const double an = analytic[li].at(i);
            const double rel = std::fabs(an - fd) / (std::fabs(an) + std::fabs(fd) + 1e-12);
            max_rel = std::max(max_rel, rel);
        }
        nodes_[l].value = saved;
    }
    forward(out);
    return max_rel;
}

Tensor forward_eval(Tape& tape, Tape::Id out,
                    const std::vector<std::pair<Tape::Id, Tensor>>& leaf_values) {
    for (const auto& [id, v] : leaf_values) tape.set_leaf(id, v);
    return tape.forward(out);
}

std::vector<std::pair<Tape::Id, Tensor>> backward_grad(Tape& tape, Tape::Id out,
                                                       const std::vector<Tape::Id>& leaves) {
    tape.backward(out);
    std::vector<std::pair<Tape::Id, Tensor>> grads;
    grads.reserve(leaves.size());
    for (Tape::Id l : leaves) grads.emplace_back(l, tape.grad(l));
    return grads;
}

}  // namespace confikd
