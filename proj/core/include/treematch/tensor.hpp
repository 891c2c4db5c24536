#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace treematch::ad {

// Shapes are rank 0 (scalar), 1 (vector) or 2 (matrix); that covers every
// operation the model needs.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename S>
struct TensorStorage {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;  // allocated lazily during backward
    bool requires_grad = false;
};

// Shared-payload handle. Copies alias the same storage; graphs hold handles
// to keep payloads alive for the backward pass.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.data_ = std::make_shared<TensorStorage<S>>();
        t.data_->shape = std::move(shape);
        t.data_->values.assign(shape_numel(t.data_->shape), S(0));
        t.data_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        }
        Tensor t;
        t.data_ = std::make_shared<TensorStorage<S>>();
        t.data_->shape = std::move(shape);
        t.data_->values = std::move(values);
        t.data_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from_values({}, {v}, requires_grad);
    }

    bool valid() const { return data_ != nullptr; }
    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t dim(std::size_t i) const { return data_->shape[i]; }
    std::size_t numel() const { return data_->values.size(); }

    std::span<const S> values() const { return data_->values; }
    std::span<S> values_mut() { return data_->values; }

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool b) { data_->requires_grad = b; }

    bool has_grad() const { return !data_->grad.empty(); }
    std::span<const S> grad() const { return data_->grad; }
    std::span<S> grad_mut() { return data_->grad; }

    void ensure_grad() {
        if (data_->grad.size() != data_->values.size()) {
            data_->grad.assign(data_->values.size(), S(0));
        }
    }

    void zero_grad() {
        if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), S(0));
    }

    void drop_grad() { data_->grad.clear(); }

    S scalar_value() const {
        if (numel() != 1) throw std::invalid_argument("tensor: scalar_value on non-scalar");
        return data_->values[0];
    }

    S at(std::size_t i) const { return data_->values[i]; }
    S at(std::size_t i, std::size_t j) const { return data_->values[i * dim(1) + j]; }

    // Payload identity, for "same tensor" checks.
    const TensorStorage<S>* node() const { return data_.get(); }

private:
    std::shared_ptr<TensorStorage<S>> data_;
};

// Records the backward steps of one forward pass. A graph and the
// intermediates it created belong to a single worker; long-lived parameter
// tensors may feed many graphs, with gradient accumulation serialized by the
// caller when graphs run concurrently.
template <typename S>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }
    void set_recording(bool b) { recording_ = b; }
    std::size_t size() const { return tape_.size(); }

    void record(std::function<void()> backward_step) {
        tape_.push_back(std::move(backward_step));
    }

    // Seeds dLoss/dLoss = 1 and replays the tape in reverse. Gradients from
    // multiple uses of a tensor accumulate by addition; buffers are not
    // cleared here, so per-pair backward calls can accumulate into shared
    // parameters until the caller zeroes them.
    void backward(Tensor<S> loss) {
        if (!loss.valid() || loss.numel() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar");
        }
        loss.ensure_grad();
        loss.grad_mut()[0] += S(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void clear() { tape_.clear(); }

private:
    bool recording_;
    std::vector<std::function<void()>> tape_;
};

}  // namespace treematch::ad
