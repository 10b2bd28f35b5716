#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sam2b/tensor.hpp"

namespace sam2b::ad {

/// Builds a scalar program over the current values of the given tensors.
/// Implementations must read the tensors through Tape::leaf so perturbations
/// made by the checker are observed.
using ScalarProgram = std::function<Var(Tape&)>;

/// Central finite-difference verification of reverse-mode gradients.
///
/// For every coordinate of every input tensor, compares the tape gradient
/// g_ad against (f(x+h) - f(x-h)) / 2h and returns the maximum over all
/// coordinates of |g_ad - g_fd| / max(1, |g_fd|).
inline double check_gradients(std::span<Tensor* const> inputs, const ScalarProgram& f,
                              double h = 1e-5) {
    // One reverse pass for the analytic gradients. requires_grad is forced on
    // for the duration of the check and restored afterwards.
    std::vector<bool> saved_flags;
    saved_flags.reserve(inputs.size());
    for (Tensor* t : inputs) {
        saved_flags.push_back(t->requires_grad);
        t->requires_grad = true;
        t->zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Var y = f(tape);
        tape.backward(y);
    }
    for (Tensor* t : inputs) analytic.push_back(t->grad);

    auto eval = [&]() {
        Tape tape;
        return tape.item(f(tape));
    };

    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = *inputs[ti];
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            const double saved = t.values[i];
            t.values[i] = saved + h;
            const double fp = eval();
            t.values[i] = saved - h;
            const double fm = eval();
            t.values[i] = saved;
            const double g_fd = (fp - fm) / (2.0 * h);
            const double g_ad = analytic[ti][i];
            const double rel = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    for (std::size_t ti = 0; ti < inputs.size(); ++ti)
        inputs[ti]->requires_grad = saved_flags[ti];
    return max_rel;
}

inline double check_gradients(Tensor& x, const ScalarProgram& f, double h = 1e-5) {
    Tensor* ptr = &x;
    return check_gradients(std::span<Tensor* const>(&ptr, 1), f, h);
}

}  // namespace sam2b::ad
