#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vctr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Operand shapes do not fit the operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameter or layer configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

// Dense row-major float64 array. A Tensor is a cheap shared handle: copies
// alias the same storage. Values are treated as immutable once an op has
// produced them; only leaves (parameters) are written in place, and only by
// optimizers between steps.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double at(std::size_t i) const { return node_->data.at(i); }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    // Copy of the values with no history and no gradient.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order; backward() replays their rules in reverse, which is a
// valid reverse topological order by construction. One training step owns
// one tape; call reset() between steps.
class Tape {
public:
    using BackwardFn = std::function<void(const detail::Node& out)>;

    void record(std::shared_ptr<detail::Node> out, BackwardFn fn);

    // Seeds d(loss)/d(loss) = 1 and propagates. Gradients of leaves are
    // added to whatever they already hold; intermediate gradients from an
    // earlier backward() on this tape are discarded first.
    void backward(const Tensor& loss);

    void reset() { entries_.clear(); }
    std::size_t size() const { return entries_.size(); }

    // Tape that ops record into on this thread, or nullptr (inference).
    static Tape* active();

private:
    friend class TapeScope;
    friend class NoGradScope;
    struct Entry {
        std::shared_ptr<detail::Node> out;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
};

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

namespace detail {

// Builds an op result. When a tape is active and any input requires a
// gradient, the result is marked and `backward` is recorded.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   Tape::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn backward);

}  // namespace detail

}  // namespace vctr
