#include "vctr/tensor.hpp"

#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vctr {

namespace {

// Activations are multi-megabyte and short-lived. Left to the default mmap
// threshold, every one is a fresh mapping that page-faults on first touch.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
    return true;
}();

}  // namespace

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data); }

void Tape::record(std::shared_ptr<detail::Node> out, BackwardFn fn) {
    entries_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    for (auto& e : entries_) e.out->grad.clear();
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->out->grad.empty()) continue;
        it->backward(*it->out);
    }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

namespace detail {

namespace {
template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<double> data, const Range& inputs, Tape::BackwardFn backward) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    Tape* tape = Tape::active();
    if (tape == nullptr) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in->requires_grad();
    if (!needs) return out;
    out.set_requires_grad(true);
    tape->record(out.node(), std::move(backward));
    return out;
}
}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   Tape::BackwardFn backward) {
    return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   Tape::BackwardFn backward) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(inputs.size());
    for (const auto& t : inputs) ptrs.push_back(&t);
    return make_result_impl(std::move(shape), std::move(data), ptrs, std::move(backward));
}

}  // namespace detail
}  // namespace vctr
