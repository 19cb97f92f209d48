#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "textlearn/common.hpp"
#include "textlearn/tensor.hpp"

namespace textlearn {

enum class DecayMode {
    kDecoupled,  // theta <- theta * (1 - rate*lambda), separate from the gradient step
    kCoupled,    // lambda*theta added to the gradient before the moment updates
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    DecayMode mode = DecayMode::kDecoupled;
};

/// Adam with bias-corrected first/second moments, kept per Parameter.
class AdamState {
public:
    explicit AdamState(AdamConfig config = {}) : config_(config) {}

    /// One update over the given parameters from their accumulated gradients.
    void step(const std::vector<NamedParam>& params, double rate);

    std::size_t steps() const { return step_count_; }
    const AdamConfig& config() const { return config_; }

private:
    struct Moments {
        Tensor first, second;
    };
    AdamConfig config_;
    std::size_t step_count_ = 0;
    std::unordered_map<Parameter*, Moments> moments_;
};

/// Plain gradient descent: theta <- theta - rate * grad.
void sgd_step(const std::vector<NamedParam>& params, double rate);

double global_grad_norm(const std::vector<NamedParam>& params);

/// Scales all gradients down to max_norm when the global norm exceeds it;
/// returns the pre-clip norm.
double clip_gradients(const std::vector<NamedParam>& params, double max_norm);

/// Piecewise-linear learning-rate schedule. With warmup the rate climbs
/// linearly from 0 to peak over warmup_steps, then decays linearly to 0 at
/// total_steps.
struct LrSchedule {
    enum Shape { kWarmupLinearDecay, kConstant, kLinearDecay };

    Shape shape = kWarmupLinearDecay;
    double peak = 1e-4;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 0;

    double at(std::size_t step) const;

    static LrSchedule warmup_linear_decay(double peak, std::size_t warmup, std::size_t total);
    static LrSchedule constant(double peak);
    /// No warmup, linear decay from peak to 0; the fine-tuning preset.
    static LrSchedule linear_decay(double peak, std::size_t total);
};

/// Indices of an oversampled dataset: all originals, then duplicates of each
/// minority category (sampled with replacement) until its count reaches
/// ceil(target_ratio * majority_count). Categories already at or above that
/// size are untouched.
std::vector<std::size_t> random_oversample_indices(const std::vector<int>& labels, Rng& rng,
                                                   double target_ratio = 0.25);

}  // namespace textlearn
