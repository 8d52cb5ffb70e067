#pragma once

#include "confikd/tensor.hpp"

namespace confikd {

// Anything that maps an input point to a distribution over class labels.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual Vec log_probs(const Vec& x) const = 0;

    virtual Vec predict_probs(const Vec& x) const {
        Vec lp = log_probs(x);
        for (auto& v : lp) v = std::exp(v);
        return lp;
    }

    std::size_t predict_class(const Vec& x) const {
        Vec lp = log_probs(x);
        std::size_t best = 0;
        for (std::size_t i = 1; i < lp.size(); ++i)
            if (lp[i] > lp[best]) best = i;  // ties resolve to the lowest index
        return best;
    }
};

}  // namespace confikd
