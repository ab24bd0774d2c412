#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iclip/tensor.hpp"

namespace iclip {

// Test hook: when set, the first analytic gradient entry is corrupted so a
// gradcheck row is guaranteed to fail (negative control).
inline bool& gradcheck_sabotage() {
    static bool on = false;
    return on;
}

// Central finite differences against the analytic gradient of a scalar loss.
// `build` must reconstruct the whole graph from the current values of
// `leaves` and return the loss tensor; it is re-run after each perturbation,
// which keeps the numeric side independent of the backward implementation.
inline double max_rel_grad_error(const std::function<Tensor()>& build,
                                 const std::vector<Tensor>& leaves, double h = 1e-5) {
    Tensor loss = build();
    for (Tensor leaf : leaves) leaf.zero_grad();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const Tensor& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad()
                                           : std::vector<double>(leaf.size(), 0.0));
    if (gradcheck_sabotage() && !analytic.empty() && !analytic[0].empty())
        analytic[0][0] += 1.0;

    double worst = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        Tensor leaf = leaves[k];
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            const double keep = leaf.values()[i];
            leaf.values_mut()[i] = keep + h;
            const double f_plus = build().values()[0];
            leaf.values_mut()[i] = keep - h;
            const double f_minus = build().values()[0];
            leaf.values_mut()[i] = keep;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = analytic[k][i];
            // the floor absorbs FD roundoff on near-zero entries: with
            // h = 1e-5 the central difference carries ~1e-11 absolute noise
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    double threshold = 1e-4;
    bool pass() const { return max_rel_err < threshold; }
};

}  // namespace iclip
