#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "textlearn/common.hpp"
#include "textlearn/tensor.hpp"

namespace textlearn {

/// Target index that cross_entropy skips when averaging.
inline constexpr int kIgnoreIndex = -1;

/// Reverse-mode gradient tape. Operations append to an ordered record as they
/// execute, so the record is topologically sorted by construction; backward()
/// walks it once in reverse. A tape covers one forward/backward round and is
/// then discarded.
///
/// Every op checks its output for NaN/Inf and throws NumericError on the spot,
/// so a diverging training step aborts instead of propagating poison.
class Tape {
public:
    struct Var {
        std::uint32_t id = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- graph entry points ----

    /// Non-differentiable input value.
    Var input(Tensor value);

    /// Leaf bound to a Parameter; memoized, so repeated calls with the same
    /// Parameter return the same node. Gradients flow iff p.trainable.
    Var param(Parameter& p);

    // ---- operations ----

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// Broadcast-add a length-n vector to every row of an m-by-n matrix.
    Var add_row(Var a, Var row);
    Var multiply(Var a, Var b);
    Var scale(Var a, double factor);
    Var transpose(Var a);
    Var reshape(Var a, std::vector<std::size_t> shape);
    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_cols(Var a, std::size_t begin, std::size_t count);
    Var select_rows(Var a, std::vector<std::size_t> rows);
    Var sum(Var a);
    Var mean(Var a);

    Var relu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var softmax(Var a, std::size_t axis);
    Var layer_norm(Var x, Var gain, Var bias, double epsilon = 1e-5);
    Var dropout(Var x, double p, bool training, Rng& rng);

    /// Mean negative log-likelihood over rows whose target is not
    /// ignore_index. logits: n-by-C, targets: length n.
    Var cross_entropy(Var logits, const std::vector<int>& targets, int ignore_index = kIgnoreIndex);

    /// Gathers rows of a U-by-H table; backward scatters into the table rows.
    Var embedding_lookup(Var table, const std::vector<int>& ids);

    // ---- extension point for fused ops ----

    struct CustomCtx {
        std::vector<const Tensor*> input_values;
        std::vector<Tensor*> input_grads;  // nullptr when that input needs no gradient
        const Tensor* out_value;
        const Tensor* out_grad;
    };

    /// Records a fused operation with a caller-supplied backward rule. The
    /// rule must accumulate (+=) into the non-null input gradients.
    Var custom(const std::vector<Var>& inputs, Tensor output,
               std::function<void(const CustomCtx&)> backward_fn);

    // ---- backward / inspection ----

    /// Reverse sweep from a scalar loss. Gradients of all reachable trainable
    /// Parameters are accumulated into their grad fields.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient captured by the last backward() pass (zeros if untouched).
    const Tensor& grad(Var v) const;
    std::size_t op_count() const { return ops_.size(); }
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // lazily allocated
        bool needs_grad = false;
        bool grad_live = false;
        Parameter* param = nullptr;
    };

    struct OpRecord {
        std::function<void()> backward;
    };

    Var make_node(Tensor value, bool needs_grad, Parameter* param = nullptr);
    Tensor& grad_buffer(std::uint32_t id);
    void record(std::function<void()> fn) { ops_.push_back({std::move(fn)}); }
    static void check_finite(const Tensor& t, const char* op);

    std::deque<Node> nodes_;
    std::vector<OpRecord> ops_;
    std::unordered_map<Parameter*, std::uint32_t> param_nodes_;
};

using Var = Tape::Var;

// Plain-tensor helpers shared by ops and tests.
Tensor matmul_value(const Tensor& a, const Tensor& b);
Tensor transpose_value(const Tensor& a);
double gelu_value(double x);
double gelu_derivative(double x);
void softmax_rows_inplace(Tensor& t, std::size_t axis);

}  // namespace textlearn
