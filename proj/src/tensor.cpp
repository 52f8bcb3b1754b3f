#include "hali/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hali {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

static void check_shape_positive(const Shape& s) {
    for (int d : s) {
        if (d <= 0) throw ShapeError("dimension", "tensor dimensions must be positive, got " + shape_str(s));
    }
}

Tensor make_tensor(Shape shape, bool requires_grad) {
    check_shape_positive(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->data.resize(static_cast<size_t>(shape_numel(shape)), 0.0f);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return make_tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = make_tensor(std::move(shape), requires_grad);
    for (float& v : t.data()) v = value;
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
    check_shape_positive(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("elements", "data length " + std::to_string(values.size()) +
                                         " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::randn(Shape shape, SeededRng& rng, float stddev, bool requires_grad) {
    Tensor t = make_tensor(std::move(shape), requires_grad);
    rng.fill_normal(t.data(), 0.0f, stddev);
    return t;
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }

int64_t Tensor::numel() const { return static_cast<int64_t>(impl_->data.size()); }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

std::span<float> Tensor::grad() {
    if (!requires_grad()) throw ArgumentError("grad() on a non-differentiable tensor");
    ensure_grad();
    return impl_->grad;
}

std::span<const float> Tensor::grad() const {
    if (!requires_grad() || impl_->grad.empty())
        throw ArgumentError("grad() on a tensor without a gradient buffer");
    return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.resize(impl_->data.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw ArgumentError("item() requires a scalar tensor, shape is " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::detached() const {
    Tensor t = clone();
    t.impl_->requires_grad = false;
    return t;
}

bool all_finite(const Tensor& t) {
    for (float v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void assert_finite(const Tensor& t, std::string_view what) {
    if (!all_finite(t)) throw Error("non-finite values in " + std::string(what));
}

} // namespace hali
