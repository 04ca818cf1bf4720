#pragma once

// Central-finite-difference gradient verification used across the test
// suites. The forward function must rebuild its graph from the current
// contents of the supplied leaf tensors on every call.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pae/autodiff.hpp"
#include "pae/tensor.hpp"

namespace pae::testsupport {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
    std::string worst;
};

// forward() returns the scalar loss for the current values of *inputs.
// analytic[i] must hold dL/d(inputs[i]) from one backward pass.
inline GradCheckResult finite_diff_check(const std::function<double()>& forward,
                                         std::vector<Tensor*> inputs,
                                         const std::vector<Tensor>& analytic,
                                         double step = 1e-4) {
    GradCheckResult res;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& x = *inputs[k];
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double orig = x[i];
            x[i] = orig + step;
            const double fp = forward();
            x[i] = orig - step;
            const double fm = forward();
            x[i] = orig;
            const double num = (fp - fm) / (2.0 * step);
            const double ana = analytic[k][i];
            const double abs_err = std::fabs(num - ana);
            const double rel_err = abs_err / std::max({std::fabs(num), std::fabs(ana), 1e-8});
            res.checked += 1;
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            if (rel_err > res.max_rel_err) {
                res.max_rel_err = rel_err;
                res.worst = "input " + std::to_string(k) + " elem " + std::to_string(i) +
                            ": analytic " + std::to_string(ana) + " numeric " +
                            std::to_string(num);
            }
        }
    }
    return res;
}

// Convenience wrapper: builds leaves from tensors, runs graph_fn to get a
// scalar root, backprops, then compares each leaf gradient against
// central differences of the re-built forward value.
inline GradCheckResult gradcheck(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& graph_fn,
    std::vector<Tensor> init, double step = 1e-4) {
    std::vector<Tensor> current = init;

    auto build = [&]() {
        std::vector<ad::Var> leaves;
        leaves.reserve(current.size());
        for (auto& t : current) leaves.push_back(ad::leaf(t, true));
        return std::make_pair(graph_fn(leaves), leaves);
    };

    auto [root, leaves] = build();
    ad::backward(root);
    std::vector<Tensor> analytic;
    for (auto& l : leaves)
        analytic.push_back(l->has_grad ? l->grad : Tensor(l->val.shape()));

    std::vector<Tensor*> ptrs;
    for (auto& t : current) ptrs.push_back(&t);
    auto forward = [&]() { return build().first->val[0]; };
    return finite_diff_check(forward, ptrs, analytic, step);
}

}  // namespace pae::testsupport
