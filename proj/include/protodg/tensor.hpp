#pragma once

// Dense 64-bit tensors and the tape that records operations for reverse-mode
// gradient propagation.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace protodg {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LabelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(numel(shape_), fill) {
        check_dims();
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + to_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
        return data_[0];
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::span<double> grad() noexcept { return grad_; }
    std::span<const double> grad() const noexcept { return grad_; }
    // Allocates (if needed) and zeroes the gradient buffer.
    void zero_grad() { grad_.assign(data_.size(), 0.0); }
    void clear_grad() noexcept {
        grad_.clear();
        grad_.shrink_to_fit();
    }

    // Reinterprets the buffer with a new shape of identical element count.
    void reshape(Shape shape) {
        if (numel(shape) != data_.size())
            throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        shape_ = std::move(shape);
    }

private:
    void check_dims() const {
        for (auto d : shape_)
            if (d == 0) throw ShapeError("zero-sized dimension in shape " + to_string(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

using Var = std::shared_ptr<Tensor>;

inline Var make_var(Shape shape, double fill = 0.0, bool requires_grad = false) {
    auto v = std::make_shared<Tensor>(std::move(shape), fill);
    v->set_requires_grad(requires_grad);
    return v;
}

inline Var make_var(Shape shape, std::vector<double> data, bool requires_grad = false) {
    auto v = std::make_shared<Tensor>(std::move(shape), std::move(data));
    v->set_requires_grad(requires_grad);
    return v;
}

inline Var make_param(Shape shape, std::vector<double> data) {
    return make_var(std::move(shape), std::move(data), true);
}

// Deep copy: same values and flag, no gradient, no shared storage.
inline Var clone(const Var& v) {
    auto out = std::make_shared<Tensor>(v->shape(), std::vector<double>(v->data().begin(), v->data().end()));
    out->set_requires_grad(v->requires_grad());
    return out;
}

// Ordered record of executed operations. Each entry owns a closure that reads
// the gradient of its output and accumulates into the gradients of its inputs.
class Tape {
public:
    enum class Mode { record, no_grad };

    Tape() = default;
    explicit Tape(Mode mode) : mode_(mode) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    static Tape no_grad() { return Tape(Mode::no_grad); }

    bool recording() const noexcept { return mode_ == Mode::record; }
    std::size_t size() const noexcept { return entries_.size(); }

    // True when the operation should be recorded: the tape records and at
    // least one input participates in differentiation.
    bool tracks(std::initializer_list<const Var*> inputs) const {
        if (!recording()) return false;
        for (const Var* v : inputs)
            if (*v && (*v)->requires_grad()) return true;
        return false;
    }

    void record(std::vector<Var> inputs, Var output, std::function<void()> backward) {
        output->set_requires_grad(true);
        entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
    }

    // Zeroes every gradient touched by this tape, seeds d(root)/d(root) = 1 and
    // replays the entries in reverse order. Calling it twice is idempotent.
    void backward(const Var& root) {
        if (root->size() != 1)
            throw ShapeError("backward() needs a scalar root, got " + to_string(root->shape()));
        for (auto& e : entries_) {
            e.output->zero_grad();
            for (auto& in : e.inputs)
                if (in->requires_grad()) in->zero_grad();
        }
        if (!root->has_grad()) root->zero_grad();
        root->grad()[0] = 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    }

    void clear() noexcept { entries_.clear(); }

private:
    struct Entry {
        std::vector<Var> inputs;
        Var output;
        std::function<void()> backward;
    };

    Mode mode_ = Mode::record;
    std::vector<Entry> entries_;
};

}  // namespace protodg
