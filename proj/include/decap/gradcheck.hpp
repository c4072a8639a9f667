#pragma once

#include <algorithm>
#include <functional>
#include <random>

#include "decap/tensor.hpp"

namespace decap {

/// Central-difference derivative of f with respect to one scalar slot.
/// f must rebuild its computation from current slot values on every call.
inline Real fd_derivative(const std::function<Real()>& f, Real& slot, Real h = 1e-6) {
    const Real saved = slot;
    slot = saved + h;
    const Real fp = f();
    slot = saved - h;
    const Real fm = f();
    slot = saved;
    return (fp - fm) / (2.0 * h);
}

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    Real analytic = 0.0;
    Real numeric = 0.0;
    Real rel_err = 0.0;
};

struct GradCheckResult {
    std::size_t checked = 0;
    Real max_rel_err = 0.0;
    GradCheckEntry worst;
    bool ok(Real tol) const { return checked > 0 && max_rel_err <= tol; }
};

inline Real grad_rel_err(Real analytic, Real numeric) {
    const Real denom = std::max({std::abs(analytic), std::abs(numeric), Real(1e-6)});
    return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of a scalar loss against central
/// differences. `loss_fn` must rebuild the graph from the parameters' current
/// values each call; sampling picks `samples_per_param` entries of every
/// parameter (all entries if the parameter is smaller).
inline GradCheckResult
check_gradients(const std::vector<std::pair<std::string, TensorPtr>>& params,
                const std::function<TensorPtr()>& loss_fn, std::size_t samples_per_param,
                std::mt19937_64& rng, Real h = 1e-6) {
    // analytic pass
    for (auto& [name, p] : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    loss_fn()->backward();

    GradCheckResult result;
    auto value = [&] { return loss_fn()->item(); };
    for (auto& [name, p] : params) {
        std::vector<std::size_t> idx(p->data.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > samples_per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(samples_per_param);
        }
        for (std::size_t i : idx) {
            const Real analytic = p->grad[i];
            const Real numeric = fd_derivative(value, p->data[i], h);
            const Real err = grad_rel_err(analytic, numeric);
            ++result.checked;
            if (err >= result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = {name, i, analytic, numeric, err};
            }
        }
    }
    return result;
}

} // namespace decap
