#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "textlearn/common.hpp"

namespace textlearn {

/// Dense row-major tensor of 64-bit floats. Tensors are plain values: copy
/// and move freely, no aliasing, no views.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_)) {
            throw ShapeError("Tensor: data length does not match shape product");
        }
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = value;
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    /// 2D convenience constructor from a row-major flat list.
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rows() const { return extent(0); }
    std::size_t cols() const { return extent(1); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    /// Value of a single-element tensor.
    double item() const {
        if (data_.size() != 1) throw ContractError("Tensor::item: tensor is not a scalar");
        return data_[0];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double x : data_) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("Tensor: zero extent");
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Trainable value plus its accumulated gradient. The gradient always has the
/// value's shape and accumulates additively across backward passes until
/// zero_grad() is called.
struct Parameter {
    Parameter() = default;
    explicit Parameter(Tensor v, bool trainable_flag = true)
        : value(std::move(v)), grad(value.shape()), trainable(trainable_flag) {}

    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() {
        for (double& g : grad.data()) g = 0.0;
    }
};

/// Parameter with a stable name for checkpoint manifests.
struct NamedParam {
    std::string name;
    Parameter* param;
};

inline void zero_gradients(const std::vector<NamedParam>& params) {
    for (const auto& np : params) np.param->zero_grad();
}

}  // namespace textlearn
