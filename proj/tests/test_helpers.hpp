#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "defend/tensor.hpp"

namespace defend::testing {

// Central finite differences against the analytic gradient of a scalar
// loss. Checks every element of every listed parameter.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
};

inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                                  std::vector<std::pair<std::string, Tensor>> params,
                                  double step = 1e-5) {
    for (auto& [name, p] : params) p.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);

    GradCheckResult result;
    for (auto& [name, p] : params) {
        const double* analytic = p.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.data()[i];
            p.data()[i] = saved + step;
            const double up = loss_fn().item();
            p.data()[i] = saved - step;
            const double down = loss_fn().item();
            p.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

inline GradCheckResult grad_check_params(const std::function<Tensor()>& loss_fn,
                                         ParamMap& params, double step = 1e-5) {
    std::vector<std::pair<std::string, Tensor>> list;
    for (auto& [name, t] : params)
        if (t.requires_grad()) list.emplace_back(name, t);
    return grad_check(loss_fn, list, step);
}

}  // namespace defend::testing
