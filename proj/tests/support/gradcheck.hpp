#pragma once

// Finite-difference gradient checking harness. Runs a builder twice: once on
// the tape for analytic gradients, then repeatedly with perturbed inputs for
// central differences.

#include <functional>
#include <vector>

#include "oracles.hpp"
#include "textlearn/tape.hpp"

namespace gradcheck {

using Builder = std::function<textlearn::Tape::Var(textlearn::Tape&, std::vector<textlearn::Parameter>&)>;

/// Worst relative error across all input coordinates. The builder must be a
/// pure function of the parameter values (seed any internal randomness).
inline double max_error(const std::vector<textlearn::Tensor>& inputs, const Builder& build,
                        double step = 1e-5) {
    std::vector<textlearn::Parameter> params;
    params.reserve(inputs.size());
    for (const auto& t : inputs) params.emplace_back(t);

    textlearn::Tape tape;
    tape.backward(build(tape, params));

    std::vector<double> analytic, flat;
    for (const auto& p : params) {
        analytic.insert(analytic.end(), p.grad.data().begin(), p.grad.data().end());
        flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());
    }

    auto f = [&](const std::vector<double>& x) {
        std::vector<textlearn::Parameter> ps;
        ps.reserve(inputs.size());
        std::size_t off = 0;
        for (const auto& t : inputs) {
            textlearn::Tensor v = t;
            std::copy(x.begin() + off, x.begin() + off + t.size(), v.data().begin());
            off += t.size();
            ps.emplace_back(std::move(v));
        }
        textlearn::Tape fresh;
        return fresh.value(build(fresh, ps)).item();
    };
    return oracles::max_gradient_error(f, flat, analytic, step);
}

/// Gradient check for live Parameter objects (model weights wired into
/// structs). The builder reads the parameters' current values from fresh
/// tapes; finite differences perturb them in place.
inline double max_error_params(const std::vector<textlearn::NamedParam>& params,
                               const std::function<textlearn::Tape::Var(textlearn::Tape&)>& build,
                               double step = 1e-5) {
    for (const auto& np : params) np.param->zero_grad();
    {
        textlearn::Tape tape;
        tape.backward(build(tape));
    }
    auto eval = [&] {
        textlearn::Tape tape;
        return tape.value(build(tape)).item();
    };
    double worst = 0.0;
    for (const auto& np : params) {
        auto& value = np.param->value.data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + step;
            const double hi = eval();
            value[i] = saved - step;
            const double lo = eval();
            value[i] = saved;
            const double fd = (hi - lo) / (2.0 * step);
            worst = std::max(worst, oracles::rel_error(np.param->grad[i], fd));
        }
    }
    return worst;
}

inline textlearn::Tensor random_tensor(std::vector<std::size_t> shape, textlearn::Rng& rng,
                                       double lo = -1.0, double hi = 1.0) {
    textlearn::Tensor t(std::move(shape));
    for (double& x : t.data()) x = rng.uniform(lo, hi);
    return t;
}

/// Random tensor with entries kept away from zero, for ops with kinks there.
inline textlearn::Tensor random_tensor_off_zero(std::vector<std::size_t> shape, textlearn::Rng& rng,
                                                double margin = 0.05) {
    textlearn::Tensor t(std::move(shape));
    for (double& x : t.data()) {
        const double mag = margin + rng.uniform() * (1.0 - margin);
        x = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

}  // namespace gradcheck
