#include "textlearn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace textlearn {

void AdamState::step(const std::vector<NamedParam>& params, double rate) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (const auto& np : params) {
        Parameter& p = *np.param;
        if (!p.trainable) continue;
        auto it = moments_.find(&p);
        if (it == moments_.end()) {
            it = moments_.emplace(&p, Moments{Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())}).first;
        }
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        const double lambda = config_.weight_decay;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double g = p.grad[i];
            if (config_.mode == DecayMode::kCoupled && lambda != 0.0) g += lambda * p.value[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            if (config_.mode == DecayMode::kDecoupled && lambda != 0.0) {
                p.value[i] *= 1.0 - rate * lambda;
            }
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.value[i] -= rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
        if (!p.value.all_finite()) {
            throw NumericError("adam_step: parameter " + np.name + " became non-finite");
        }
    }
}

void sgd_step(const std::vector<NamedParam>& params, double rate) {
    for (const auto& np : params) {
        Parameter& p = *np.param;
        if (!p.trainable) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= rate * p.grad[i];
        if (!p.value.all_finite()) {
            throw NumericError("sgd_step: parameter " + np.name + " became non-finite");
        }
    }
}

double global_grad_norm(const std::vector<NamedParam>& params) {
    double sq = 0.0;
    for (const auto& np : params) {
        if (!np.param->trainable) continue;
        for (double g : np.param->grad.data()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_gradients(const std::vector<NamedParam>& params, double max_norm) {
    if (max_norm <= 0.0) throw ValueError("clip_gradients: max_norm must be positive");
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (const auto& np : params) {
            if (!np.param->trainable) continue;
            for (double& g : np.param->grad.data()) g *= scale;
        }
    }
    return norm;
}

double LrSchedule::at(std::size_t step) const {
    if (shape == kConstant) return peak;
    if (step > total_steps) {
        throw ValueError("LrSchedule::at: step " + std::to_string(step) + " beyond total_steps " +
                         std::to_string(total_steps));
    }
    if (shape == kLinearDecay) {
        return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps);
    }
    if (warmup_steps > 0 && step <= warmup_steps) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

LrSchedule LrSchedule::warmup_linear_decay(double peak, std::size_t warmup, std::size_t total) {
    if (warmup > total) throw ValueError("LrSchedule: warmup_steps must not exceed total_steps");
    if (total == 0) throw ValueError("LrSchedule: total_steps must be positive");
    return {kWarmupLinearDecay, peak, warmup, total};
}

LrSchedule LrSchedule::constant(double peak) { return {kConstant, peak, 0, 0}; }

LrSchedule LrSchedule::linear_decay(double peak, std::size_t total) {
    if (total == 0) throw ValueError("LrSchedule: total_steps must be positive");
    return {kLinearDecay, peak, 0, total};
}

std::vector<std::size_t> random_oversample_indices(const std::vector<int>& labels, Rng& rng,
                                                   double target_ratio) {
    if (target_ratio <= 0.0 || target_ratio > 1.0) {
        throw ValueError("random_oversample: target_ratio must be in (0, 1]");
    }
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
    if (by_label.size() < 2) {
        throw InputError("random_oversample: need at least two categories");
    }
    std::size_t majority = 0;
    for (const auto& [label, members] : by_label) majority = std::max(majority, members.size());
    const auto target = static_cast<std::size_t>(
        std::ceil(target_ratio * static_cast<double>(majority) - 1e-12));

    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = i;  // originals all retained
    for (const auto& [label, members] : by_label) {
        for (std::size_t have = members.size(); have < target; ++have) {
            out.push_back(members[rng.uniform_index(members.size())]);
        }
    }
    return out;
}

}  // namespace textlearn
