#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hali/error.hpp"
#include "hali/rng.hpp"

namespace hali {

// Dense row-major float32 tensor. Network activations are NCHW; vectors
// such as z2 travel as {N, C, 1, 1}; per-sample scalars as {N}.
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad; // allocated on first backward when differentiable
    bool requires_grad = false;
};

// Cheap handle with shared storage: copies alias the same buffer, clone()
// makes a deep copy. Gradients live next to the data on the impl so a
// parameter tensor can be held by the model, the optimizer, and the tape
// at once.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor randn(Shape shape, SeededRng& rng, float stddev = 1.0f, bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int dim(int axis) const;
    int64_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;
    bool requires_grad() const;
    void set_requires_grad(bool on);

    // Gradient buffer; throws if this tensor is not differentiable.
    // ensure_grad() allocates (zero-filled) if missing.
    std::span<float> grad();
    std::span<const float> grad() const;
    bool has_grad() const;
    void ensure_grad();
    void zero_grad();

    float item() const; // numel()==1 only

    Tensor clone() const;    // deep copy (data only), keeps requires_grad
    Tensor detached() const; // deep copy with requires_grad=false

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Throws Error if any element is NaN/Inf; `what` names the tensor in the
// message.
void assert_finite(const Tensor& t, std::string_view what);
bool all_finite(const Tensor& t);

} // namespace hali
