#include "textlearn/train.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace textlearn {

void write_trace_csv(const LossTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_trace_csv: cannot open " + path);
    out << "step,lr,loss\n";
    out.precision(17);
    for (const auto& rec : trace) out << rec.step << ',' << rec.lr << ',' << rec.loss << '\n';
}

std::size_t planned_steps(std::size_t num_examples, std::size_t batch_size, std::size_t epochs) {
    const std::size_t per_epoch = (num_examples + batch_size - 1) / batch_size;
    return per_epoch * epochs;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    return order;
}

}  // namespace

LossTrace pretrain(BertModel& model, const std::vector<PretrainExample>& data, const TrainConfig& config,
                   AdamState& optimizer, const LrSchedule& schedule, const PretrainOptions& options) {
    config.validate();
    if (data.empty()) throw InputError("pretrain: empty dataset");
    if (config.dropout) model.set_dropout(*config.dropout);

    Rng rng(config.seed);
    auto params = model.named_params();
    LossTrace trace;
    std::size_t global_step = 0;

    std::vector<MaskedSequence> masked(data.size());
    auto draw_masks = [&] {
        for (std::size_t i = 0; i < data.size(); ++i) {
            masked[i] = mask_tokens(data[i].encoded, model.config().vocab_size, rng, options.masking);
        }
    };
    draw_masks();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (options.dynamic_masking && epoch > 0) draw_masks();
        const auto order = epoch_order(data.size(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double lr = schedule.at(global_step);
            try {
                Tape tape;
                std::vector<Var> mlm_logits;
                std::vector<std::vector<int>> mlm_targets;
                std::vector<Var> nsp_rows;
                std::vector<int> nsp_labels;
                std::size_t selected = 0;
                for (std::size_t k = start; k < end; ++k) {
                    const auto& ex = data[order[k]];
                    const auto& m = masked[order[k]];
                    auto vars = model.forward_pretrain(tape, m.encoded, true, rng);
                    mlm_logits.push_back(vars.mlm_logits);
                    mlm_targets.push_back(m.mlm_targets);
                    nsp_rows.push_back(vars.nsp_logits);
                    nsp_labels.push_back(ex.nsp_label);
                    selected += m.num_selected;
                }
                if (selected == 0) continue;  // nothing to predict in this batch
                Var loss = pretrain_loss(tape, mlm_logits, mlm_targets, tape.concat_rows(nsp_rows), nsp_labels);
                zero_gradients(params);
                tape.backward(loss);
                if (config.clip_norm) clip_gradients(params, *config.clip_norm);
                optimizer.step(params, lr);
                trace.push_back({global_step, lr, tape.value(loss).item()});
            } catch (const NumericError& e) {
                throw NumericError("pretrain: aborted at step " + std::to_string(global_step) + ": " + e.what());
            }
            ++global_step;
        }
    }
    return trace;
}

LossTrace fine_tune(BertModel& model, ClassifierHead& head, const std::vector<FineTuneExample>& data,
                    const TrainConfig& config, const LrSchedule& schedule, AdamState* optimizer) {
    config.validate();
    if (data.empty()) throw InputError("fine_tune: empty dataset");
    const std::size_t categories = head.categories();
    for (const auto& ex : data) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= categories) {
            throw InputError("fine_tune: label " + std::to_string(ex.label) + " outside [0, " +
                             std::to_string(categories) + ")");
        }
    }
    if (config.dropout) model.set_dropout(*config.dropout);

    AdamState local{AdamConfig{}};  // fine-tuning preset: decoupled mode, zero weight decay
    AdamState& opt = optimizer ? *optimizer : local;

    Rng rng(config.seed);
    auto params = model.named_params();
    params.push_back({"classifier.weight", &head.weight});
    LossTrace trace;
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double lr = schedule.at(global_step);
            try {
                Tape tape;
                std::vector<Var> rows;
                std::vector<int> labels;
                for (std::size_t k = start; k < end; ++k) {
                    const auto& ex = data[order[k]];
                    rows.push_back(model.class_logits(tape, ex.encoded, head, true, rng));
                    labels.push_back(ex.label);
                }
                Var loss = tape.cross_entropy(tape.concat_rows(rows), labels);
                zero_gradients(params);
                tape.backward(loss);
                if (config.clip_norm) clip_gradients(params, *config.clip_norm);
                opt.step(params, lr);
                trace.push_back({global_step, lr, tape.value(loss).item()});
            } catch (const NumericError& e) {
                throw NumericError("fine_tune: aborted at step " + std::to_string(global_step) + ": " + e.what());
            }
            ++global_step;
        }
    }
    return trace;
}

std::vector<int> predict_classes(BertModel& model, ClassifierHead& head,
                                 const std::vector<FineTuneExample>& data) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        const auto probs = model.classify(ex.encoded, head);
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.size(); ++c) {
            if (probs[c] > probs[best]) best = c;  // ties keep the lower index
        }
        out.push_back(static_cast<int>(best));
    }
    return out;
}

}  // namespace textlearn
