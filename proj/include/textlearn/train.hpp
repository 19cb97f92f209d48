#pragma once

#include <optional>
#include <string>
#include <vector>

#include "textlearn/model.hpp"
#include "textlearn/optimizer.hpp"

namespace textlearn {

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 3;
    std::uint64_t seed = 42;
    std::optional<double> clip_norm = 1.0;  // global gradient-norm clip; nullopt disables
    std::optional<double> dropout;          // overrides the model's configured rate when set

    void validate() const {
        if (batch_size == 0) throw ValueError("TrainConfig: batch_size must be at least 1");
        if (epochs == 0) throw ValueError("TrainConfig: epochs must be at least 1");
    }
};

struct StepRecord {
    std::size_t step;
    double lr;
    double loss;
};
using LossTrace = std::vector<StepRecord>;

/// CSV with header "step,lr,loss", one row per optimizer step.
void write_trace_csv(const LossTrace& trace, const std::string& path);

/// Number of optimizer updates a run will make.
std::size_t planned_steps(std::size_t num_examples, std::size_t batch_size, std::size_t epochs);

struct PretrainOptions {
    MaskingOptions masking;
    bool dynamic_masking = true;  // redraw corruption every epoch
};

/// Masked-token + next-segment pretraining. Deterministic for a given seed;
/// a non-finite loss aborts with the failing step index in the message.
LossTrace pretrain(BertModel& model, const std::vector<PretrainExample>& data, const TrainConfig& config,
                   AdamState& optimizer, const LrSchedule& schedule, const PretrainOptions& options = {});

struct FineTuneExample {
    EncodedSequence encoded;
    int label;
};

/// Cross-entropy fine-tuning of the whole model plus a task head. When no
/// optimizer is supplied the fine-tuning preset is used: decoupled Adam with
/// zero weight decay.
LossTrace fine_tune(BertModel& model, ClassifierHead& head, const std::vector<FineTuneExample>& data,
                    const TrainConfig& config, const LrSchedule& schedule, AdamState* optimizer = nullptr);

/// Argmax predictions for a labeled set (evaluation mode; ties break low).
std::vector<int> predict_classes(BertModel& model, ClassifierHead& head,
                                 const std::vector<FineTuneExample>& data);

}  // namespace textlearn
