#include "hali/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hali {

namespace {

thread_local Tape* g_current_tape = nullptr;

void ensure_grad_buffer(TensorImpl* impl) {
    if (impl->grad.empty()) impl->grad.resize(impl->data.size(), 0.0f);
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape(), b.shape())) {
        throw ShapeError("elementwise", std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()) + " differ");
    }
}

} // namespace

Act act_from_string(const std::string& name) {
    if (name == "leaky-relu") return Act::LeakyRelu;
    if (name == "tanh") return Act::Tanh;
    if (name == "sigmoid") return Act::Sigmoid;
    if (name == "softmax") return Act::Softmax;
    if (name == "linear") return Act::Linear;
    throw ArgumentError("unknown activation kind: " + name);
}

Tape::Tape() {
    prev_ = g_current_tape;
    g_current_tape = this;
}

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> parts,
                  std::function<void()> backward_fn) {
    nodes_.push_back(Node{op, std::move(backward_fn)});
    for (auto& p : parts) touched_.push_back(std::move(p));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) throw ArgumentError("backward() needs a scalar loss");
    if (!loss.requires_grad()) throw ArgumentError("backward() on a loss with no recorded dependencies");

    // fresh gradients for everything this record touched
    for (auto& impl : touched_) {
        if (impl->requires_grad && !impl->grad.empty())
            std::fill(impl->grad.begin(), impl->grad.end(), 0.0f);
    }
    loss.impl()->grad.assign(1, 1.0f);

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();

    // record consumed; the tape object can be reused for a new graph
    nodes_.clear();
    touched_.clear();
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& t, Shape new_shape) {
    if (shape_numel(new_shape) != t.numel()) {
        throw ShapeError("elements", "reshape: " + shape_str(t.shape()) + " -> " + shape_str(new_shape) +
                                         " changes element count");
    }
    Tensor out = make_tensor(std::move(new_shape), false);
    std::copy(t.data().begin(), t.data().end(), out.data().begin());
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("reshape", {ti, oi}, [ti, oi] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4) throw ShapeError("rank", "concat_channels expects NCHW tensors");
    if (sa[0] != sb[0]) throw ShapeError("batch", "concat_channels: batch sizes differ");
    if (sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("spatial", "concat_channels: spatial dims differ: " + shape_str(sa) + " vs " + shape_str(sb));

    int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
    Tensor out = make_tensor({n, ca + cb, h, w}, false);
    size_t plane = static_cast<size_t>(h) * w;
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int i = 0; i < n; ++i) {
        std::memcpy(po + (static_cast<size_t>(i) * (ca + cb)) * plane, pa + static_cast<size_t>(i) * ca * plane,
                    ca * plane * sizeof(float));
        std::memcpy(po + (static_cast<size_t>(i) * (ca + cb) + ca) * plane, pb + static_cast<size_t>(i) * cb * plane,
                    cb * plane * sizeof(float));
    }
    if (wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("concat", {ai, bi, oi}, [ai, bi, oi, n, ca, cb, plane] {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            if (ai->requires_grad) {
                ensure_grad_buffer(ai.get());
                for (int i = 0; i < n; ++i)
                    for (size_t j = 0; j < ca * plane; ++j)
                        ai->grad[static_cast<size_t>(i) * ca * plane + j] +=
                            go[(static_cast<size_t>(i) * (ca + cb)) * plane + j];
            }
            if (bi->requires_grad) {
                ensure_grad_buffer(bi.get());
                for (int i = 0; i < n; ++i)
                    for (size_t j = 0; j < cb * plane; ++j)
                        bi->grad[static_cast<size_t>(i) * cb * plane + j] +=
                            go[(static_cast<size_t>(i) * (ca + cb) + ca) * plane + j];
            }
        });
    }
    return out;
}

Tensor slice_channels(const Tensor& t, int c_begin, int c_end) {
    const Shape& s = t.shape();
    if (s.size() != 4) throw ShapeError("rank", "slice_channels expects an NCHW tensor");
    if (c_begin < 0 || c_end > s[1] || c_begin >= c_end)
        throw ArgumentError("slice_channels: bad channel range [" + std::to_string(c_begin) + "," +
                            std::to_string(c_end) + ") for " + shape_str(s));
    int n = s[0], c = s[1], h = s[2], w = s[3], cs = c_end - c_begin;
    size_t plane = static_cast<size_t>(h) * w;
    Tensor out = make_tensor({n, cs, h, w}, false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int i = 0; i < n; ++i)
        std::memcpy(po + static_cast<size_t>(i) * cs * plane,
                    pt + (static_cast<size_t>(i) * c + c_begin) * plane, cs * plane * sizeof(float));
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("slice", {ti, oi}, [ti, oi, n, c, c_begin, cs, plane] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (int i = 0; i < n; ++i)
                for (size_t j = 0; j < cs * plane; ++j)
                    ti->grad[(static_cast<size_t>(i) * c + c_begin) * plane + j] +=
                        oi->grad[static_cast<size_t>(i) * cs * plane + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_tensor(a.shape(), false);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("add", {ai, bi, oi}, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad_buffer(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad_buffer(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_tensor(a.shape(), false);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    if (wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("sub", {ai, bi, oi}, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad_buffer(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                ensure_grad_buffer(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_tensor(a.shape(), false);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    if (wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("mul", {ai, bi, oi}, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad_buffer(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                ensure_grad_buffer(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
            }
        });
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = make_tensor(a.shape(), false);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] / pb[i];
    if (wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("div", {ai, bi, oi}, [ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad_buffer(ai.get());
                for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] / bi->data[i];
            }
            if (bi->requires_grad) {
                ensure_grad_buffer(bi.get());
                for (size_t i = 0; i < oi->grad.size(); ++i)
                    bi->grad[i] -= oi->grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
            }
        });
    }
    return out;
}

Tensor affine(const Tensor& t, float scale, float shift) {
    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) po[i] = scale * pt[i] + shift;
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("affine", {ti, oi}, [ti, oi, scale] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += scale * oi->grad[i];
        });
    }
    return out;
}

Tensor square(const Tensor& t) {
    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) po[i] = pt[i] * pt[i];
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("square", {ti, oi}, [ti, oi] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += 2.0f * ti->data[i] * oi->grad[i];
        });
    }
    return out;
}

Tensor log_clamped(const Tensor& t, float floor) {
    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) po[i] = std::log(std::max(pt[i], floor));
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("log", {ti, oi}, [ti, oi, floor] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) {
                if (ti->data[i] > floor) ti->grad[i] += oi->grad[i] / ti->data[i];
            }
        });
    }
    return out;
}

namespace {
inline float softplus_scalar(float x) {
    if (x > 20.0f) return x;
    if (x < -20.0f) return std::exp(x);
    return std::log1p(std::exp(x));
}
inline float sigmoid_scalar(float x) { return 1.0f / (1.0f + std::exp(-x)); }
} // namespace

Tensor softplus(const Tensor& t) {
    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) po[i] = softplus_scalar(pt[i]);
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("softplus", {ti, oi}, [ti, oi] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += sigmoid_scalar(ti->data[i]) * oi->grad[i];
        });
    }
    return out;
}

Tensor sum_all(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("sum", {ti, oi}, [ti, oi] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            float g = oi->grad[0];
            for (size_t i = 0; i < ti->grad.size(); ++i) ti->grad[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += v;
    int64_t n = t.numel();
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("mean", {ti, oi}, [ti, oi, n] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            float g = oi->grad[0] / static_cast<float>(n);
            for (size_t i = 0; i < ti->grad.size(); ++i) ti->grad[i] += g;
        });
    }
    return out;
}

Tensor sum_per_sample(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.empty()) throw ShapeError("rank", "sum_per_sample needs at least one axis");
    int n = s[0];
    size_t stride = static_cast<size_t>(t.numel() / n);
    Tensor out = make_tensor({n}, false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < stride; ++j) acc += pt[static_cast<size_t>(i) * stride + j];
        po[i] = static_cast<float>(acc);
    }
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("sum_per_sample", {ti, oi}, [ti, oi, n, stride] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (int i = 0; i < n; ++i) {
                float g = oi->grad[static_cast<size_t>(i)];
                for (size_t j = 0; j < stride; ++j) ti->grad[static_cast<size_t>(i) * stride + j] += g;
            }
        });
    }
    return out;
}

Tensor gather_channel(const Tensor& probs, const std::vector<int>& labels) {
    const Shape& s = probs.shape();
    if (s.size() < 2) throw ShapeError("rank", "gather_channel expects {N,K,...}");
    int n = s[0], k = s[1];
    if (static_cast<int64_t>(n) * k != probs.numel())
        throw ShapeError("spatial", "gather_channel expects trailing axes of size 1, got " + shape_str(s));
    if (static_cast<int>(labels.size()) != n)
        throw DataError("gather_channel: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(n));
    for (int lbl : labels) {
        if (lbl < 0 || lbl >= k) throw DataError("label index out of range: " + std::to_string(lbl));
    }
    Tensor out = make_tensor({n}, false);
    const float* pp = probs.data().data();
    float* po = out.data().data();
    for (int i = 0; i < n; ++i) po[i] = pp[static_cast<size_t>(i) * k + labels[i]];
    if (wants_grad({&probs})) {
        out.set_requires_grad(true);
        auto pi = probs.impl_ptr(), oi = out.impl_ptr();
        auto lbl = labels;
        Tape::current()->record("gather", {pi, oi}, [pi, oi, lbl, k] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(pi.get());
            for (size_t i = 0; i < lbl.size(); ++i) pi->grad[i * k + lbl[i]] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int oh, ow;
    size_t k() const { return static_cast<size_t>(cin) * kh * kw; }
    size_t ohw() const { return static_cast<size_t>(oh) * ow; }
};

ConvDims conv_check(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 4) throw ShapeError("rank", "conv2d: input must be NCHW, got " + shape_str(is));
    if (ws.size() != 4) throw ShapeError("rank", "conv2d: weight must be {Cout,Cin,kh,kw}, got " + shape_str(ws));
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (pad < 0) throw ArgumentError("conv2d: pad must be >= 0");
    ConvDims d{is[0], is[1], is[2], is[3], ws[0], ws[2], ws[3], stride, pad, 0, 0};
    if (ws[1] != d.cin)
        throw ShapeError("channels", "conv2d: input channels " + std::to_string(d.cin) +
                                         " != weight channels " + std::to_string(ws[1]));
    if (d.h + 2 * pad < d.kh)
        throw ShapeError("height", "conv2d: padded height " + std::to_string(d.h + 2 * pad) +
                                       " smaller than kernel " + std::to_string(d.kh));
    if (d.w + 2 * pad < d.kw)
        throw ShapeError("width", "conv2d: padded width " + std::to_string(d.w + 2 * pad) +
                                      " smaller than kernel " + std::to_string(d.kw));
    if (bias.defined() && bias.numel() != d.cout)
        throw ShapeError("bias", "conv2d: bias length " + std::to_string(bias.numel()) + " != output channels " +
                                     std::to_string(d.cout));
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    return d;
}

// col is K x OHW, K indexed by (c*kh+i)*kw+j
void im2col(const float* x, const ConvDims& d, float* col) {
    size_t ohw = d.ohw();
    for (int c = 0; c < d.cin; ++c) {
        const float* xc = x + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                float* row = col + ((static_cast<size_t>(c) * d.kh + ki) * d.kw + kj) * ohw;
                for (int oy = 0; oy < d.oh; ++oy) {
                    int sy = oy * d.stride - d.pad + ki;
                    float* dst = row + static_cast<size_t>(oy) * d.ow;
                    if (sy < 0 || sy >= d.h) {
                        std::fill(dst, dst + d.ow, 0.0f);
                        continue;
                    }
                    const float* src = xc + static_cast<size_t>(sy) * d.w;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        int sx = ox * d.stride - d.pad + kj;
                        dst[ox] = (sx >= 0 && sx < d.w) ? src[sx] : 0.0f;
                    }
                }
            }
        }
    }
}

// colT is OHW x K (row per output position); used for the weight gradient
void im2col_t(const float* x, const ConvDims& d, float* colT) {
    size_t kdim = d.k();
    for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
            float* row = colT + (static_cast<size_t>(oy) * d.ow + ox) * kdim;
            size_t idx = 0;
            for (int c = 0; c < d.cin; ++c) {
                const float* xc = x + static_cast<size_t>(c) * d.h * d.w;
                for (int ki = 0; ki < d.kh; ++ki) {
                    int sy = oy * d.stride - d.pad + ki;
                    for (int kj = 0; kj < d.kw; ++kj, ++idx) {
                        int sx = ox * d.stride - d.pad + kj;
                        row[idx] = (sy >= 0 && sy < d.h && sx >= 0 && sx < d.w)
                                       ? xc[static_cast<size_t>(sy) * d.w + sx]
                                       : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_accum(const float* col, const ConvDims& d, float* dx) {
    size_t ohw = d.ohw();
    for (int c = 0; c < d.cin; ++c) {
        float* xc = dx + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const float* row = col + ((static_cast<size_t>(c) * d.kh + ki) * d.kw + kj) * ohw;
                for (int oy = 0; oy < d.oh; ++oy) {
                    int sy = oy * d.stride - d.pad + ki;
                    if (sy < 0 || sy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        int sx = ox * d.stride - d.pad + kj;
                        if (sx < 0 || sx >= d.w) continue;
                        xc[static_cast<size_t>(sy) * d.w + sx] += row[static_cast<size_t>(oy) * d.ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    ConvDims d = conv_check(input, weight, bias, stride, pad);
    Tensor out = make_tensor({d.n, d.cout, d.oh, d.ow}, false);

    const float* px = input.data().data();
    const float* pw = weight.data().data();
    const float* pb = bias.defined() ? bias.data().data() : nullptr;
    float* po = out.data().data();
    const size_t kdim = d.k();
    const size_t ohw = d.ohw();
    const size_t in_stride = static_cast<size_t>(d.cin) * d.h * d.w;
    const size_t out_stride = static_cast<size_t>(d.cout) * ohw;

#pragma omp parallel
    {
        std::vector<float> col(kdim * ohw);
#pragma omp for schedule(static)
        for (int n = 0; n < d.n; ++n) {
            im2col(px + n * in_stride, d, col.data());
            float* on = po + n * out_stride;
            for (int r = 0; r < d.cout; ++r) {
                float* orow = on + static_cast<size_t>(r) * ohw;
                float b = pb ? pb[r] : 0.0f;
                std::fill(orow, orow + ohw, b);
                const float* wrow = pw + static_cast<size_t>(r) * kdim;
                for (size_t k = 0; k < kdim; ++k) {
                    float wv = wrow[k];
                    if (wv == 0.0f) continue;
                    const float* crow = col.data() + k * ohw;
                    for (size_t j = 0; j < ohw; ++j) orow[j] += wv * crow[j];
                }
            }
        }
    }

    if (wants_grad({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        auto xi = input.impl_ptr(), wi = weight.impl_ptr(), oi = out.impl_ptr();
        auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
        std::vector<std::shared_ptr<TensorImpl>> parts{xi, wi, oi};
        if (bi) parts.push_back(bi);
        Tape::current()->record("conv2d", std::move(parts), [xi, wi, bi, oi, d] {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* pw = wi->data.data();
            const size_t kdim = d.k();
            const size_t ohw = d.ohw();
            const size_t in_stride = static_cast<size_t>(d.cin) * d.h * d.w;
            const size_t out_stride = static_cast<size_t>(d.cout) * ohw;

            if (xi->requires_grad) {
                ensure_grad_buffer(xi.get());
                float* gx = xi->grad.data();
#pragma omp parallel
                {
                    std::vector<float> colg(kdim * ohw);
#pragma omp for schedule(static)
                    for (int n = 0; n < d.n; ++n) {
                        std::fill(colg.begin(), colg.end(), 0.0f);
                        const float* gon = go + n * out_stride;
                        for (size_t k = 0; k < kdim; ++k) {
                            float* crow = colg.data() + k * ohw;
                            for (int r = 0; r < d.cout; ++r) {
                                float wv = pw[static_cast<size_t>(r) * kdim + k];
                                if (wv == 0.0f) continue;
                                const float* grow = gon + static_cast<size_t>(r) * ohw;
                                for (size_t j = 0; j < ohw; ++j) crow[j] += wv * grow[j];
                            }
                        }
                        col2im_accum(colg.data(), d, gx + n * in_stride);
                    }
                }
            }

            if (wi->requires_grad || (bi && bi->requires_grad)) {
                if (wi->requires_grad) ensure_grad_buffer(wi.get());
                if (bi && bi->requires_grad) ensure_grad_buffer(bi.get());
                // one flat colT buffer for the whole batch so the row loop
                // below can accumulate over n in a fixed order
                std::vector<float> colT(static_cast<size_t>(d.n) * ohw * kdim);
                const float* px = xi->data.data();
#pragma omp parallel for schedule(static)
                for (int n = 0; n < d.n; ++n) im2col_t(px + n * in_stride, d, colT.data() + n * ohw * kdim);

                float* gw = wi->requires_grad ? wi->grad.data() : nullptr;
                float* gb = (bi && bi->requires_grad) ? bi->grad.data() : nullptr;
#pragma omp parallel for schedule(static)
                for (int r = 0; r < d.cout; ++r) {
                    float* gwrow = gw ? gw + static_cast<size_t>(r) * kdim : nullptr;
                    double bacc = 0.0;
                    for (int n = 0; n < d.n; ++n) {
                        const float* gon = go + n * out_stride + static_cast<size_t>(r) * ohw;
                        const float* colTn = colT.data() + static_cast<size_t>(n) * ohw * kdim;
                        for (size_t j = 0; j < ohw; ++j) {
                            float g = gon[j];
                            if (g == 0.0f) continue;
                            bacc += g;
                            if (gwrow) {
                                const float* crow = colTn + j * kdim;
                                for (size_t k = 0; k < kdim; ++k) gwrow[k] += g * crow[k];
                            }
                        }
                    }
                    if (gb) gb[r] += static_cast<float>(bacc);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// bilinear upsample
// ---------------------------------------------------------------------------

namespace {
struct LerpTap {
    int i0, i1;
    float w1; // weight on i1; weight on i0 is 1-w1
};

std::vector<LerpTap> lerp_taps(int src, int factor) {
    std::vector<LerpTap> taps(static_cast<size_t>(src) * factor);
    for (int o = 0; o < src * factor; ++o) {
        double s = (o + 0.5) / factor - 0.5;
        int fl = static_cast<int>(std::floor(s));
        float frac = static_cast<float>(s - fl);
        int i0 = std::clamp(fl, 0, src - 1);
        int i1 = std::clamp(fl + 1, 0, src - 1);
        taps[o] = {i0, i1, (i0 == i1) ? 0.0f : frac};
    }
    return taps;
}
} // namespace

Tensor bilinear_upsample(const Tensor& input, int factor) {
    if (factor < 2) throw ArgumentError("bilinear_upsample: factor must be >= 2");
    const Shape& s = input.shape();
    if (s.size() != 4) throw ShapeError("rank", "bilinear_upsample expects NCHW, got " + shape_str(s));
    int n = s[0], c = s[1], h = s[2], w = s[3];
    int oh = h * factor, ow = w * factor;
    Tensor out = make_tensor({n, c, oh, ow}, false);

    auto ty = lerp_taps(h, factor);
    auto tx = lerp_taps(w, factor);
    const float* px = input.data().data();
    float* po = out.data().data();
    int planes = n * c;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const float* in = px + static_cast<size_t>(p) * h * w;
        float* o = po + static_cast<size_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const LerpTap& y = ty[oy];
            const float* r0 = in + static_cast<size_t>(y.i0) * w;
            const float* r1 = in + static_cast<size_t>(y.i1) * w;
            float* orow = o + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const LerpTap& x = tx[ox];
                float top = r0[x.i0] * (1.0f - x.w1) + r0[x.i1] * x.w1;
                float bot = r1[x.i0] * (1.0f - x.w1) + r1[x.i1] * x.w1;
                orow[ox] = top * (1.0f - y.w1) + bot * y.w1;
            }
        }
    }

    if (wants_grad({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("bilinear", {xi, oi}, [xi, oi, ty, tx, planes, h, w, oh, ow] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(xi.get());
            const float* go = oi->grad.data();
            float* gx = xi->grad.data();
#pragma omp parallel for schedule(static)
            for (int p = 0; p < planes; ++p) {
                const float* g = go + static_cast<size_t>(p) * oh * ow;
                float* gi = gx + static_cast<size_t>(p) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    const LerpTap& y = ty[oy];
                    for (int ox = 0; ox < ow; ++ox) {
                        const LerpTap& x = tx[ox];
                        float gv = g[static_cast<size_t>(oy) * ow + ox];
                        gi[static_cast<size_t>(y.i0) * w + x.i0] += gv * (1.0f - y.w1) * (1.0f - x.w1);
                        gi[static_cast<size_t>(y.i0) * w + x.i1] += gv * (1.0f - y.w1) * x.w1;
                        gi[static_cast<size_t>(y.i1) * w + x.i0] += gv * y.w1 * (1.0f - x.w1);
                        gi[static_cast<size_t>(y.i1) * w + x.i1] += gv * y.w1 * x.w1;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

BatchNormState::BatchNormState(int channels) {
    if (channels > 0) {
        running_mean = Tensor::zeros({channels});
        running_var = Tensor::full({channels}, 1.0f);
    }
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                  BatchNormState& state, float momentum, float eps) {
    const Shape& s = input.shape();
    if (s.size() != 4 && s.size() != 2)
        throw ShapeError("rank", "batch_norm expects NCHW or NC, got " + shape_str(s));
    int n = s[0], c = s[1];
    int hw = (s.size() == 4) ? s[2] * s[3] : 1;
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("channels", "batch_norm: gamma/beta length must equal channel count " + std::to_string(c));
    if (state.running_mean.numel() != c)
        throw ShapeError("channels", "batch_norm: running stats sized for " +
                                         std::to_string(state.running_mean.numel()) + " channels, input has " +
                                         std::to_string(c));

    int64_t r = static_cast<int64_t>(n) * hw;
    Tensor out = make_tensor(s, false);
    std::vector<float> mean(c), invstd(c);

    const float* px = input.data().data();
    const float* pg = gamma.data().data();
    const float* pb = beta.data().data();
    float* po = out.data().data();
    auto at = [&](int ni, int ci, int j) -> size_t {
        return (static_cast<size_t>(ni) * c + ci) * hw + j;
    };

    if (mode == Mode::Train) {
        float* rm = state.running_mean.data().data();
        float* rv = state.running_var.data().data();
        for (int ci = 0; ci < c; ++ci) {
            double acc = 0.0;
            for (int ni = 0; ni < n; ++ni)
                for (int j = 0; j < hw; ++j) acc += px[at(ni, ci, j)];
            double m = acc / static_cast<double>(r);
            double vacc = 0.0;
            for (int ni = 0; ni < n; ++ni)
                for (int j = 0; j < hw; ++j) {
                    double dv = px[at(ni, ci, j)] - m;
                    vacc += dv * dv;
                }
            double var = vacc / static_cast<double>(r);
            mean[ci] = static_cast<float>(m);
            invstd[ci] = static_cast<float>(1.0 / std::sqrt(var + eps));
            rm[ci] = (1.0f - momentum) * rm[ci] + momentum * mean[ci];
            rv[ci] = (1.0f - momentum) * rv[ci] + momentum * static_cast<float>(var);
        }
    } else {
        const float* rm = state.running_mean.data().data();
        const float* rv = state.running_var.data().data();
        for (int ci = 0; ci < c; ++ci) {
            mean[ci] = rm[ci];
            invstd[ci] = 1.0f / std::sqrt(rv[ci] + eps);
        }
    }

    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            float m = mean[ci], is = invstd[ci], g = pg[ci], b = pb[ci];
            for (int j = 0; j < hw; ++j) {
                size_t idx = at(ni, ci, j);
                po[idx] = g * (px[idx] - m) * is + b;
            }
        }

    if (wants_grad({&input, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xi = input.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = out.impl_ptr();
        bool train = (mode == Mode::Train);
        Tape::current()->record("batch_norm", {xi, gi, bi, oi},
                                [xi, gi, bi, oi, mean, invstd, n, c, hw, r, train] {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* px = xi->data.data();
            const float* pg = gi->data.data();
            auto at = [&](int ni, int ci, int j) -> size_t {
                return (static_cast<size_t>(ni) * c + ci) * hw + j;
            };
            bool need_x = xi->requires_grad;
            bool need_g = gi->requires_grad;
            bool need_b = bi->requires_grad;
            if (need_x) ensure_grad_buffer(xi.get());
            if (need_g) ensure_grad_buffer(gi.get());
            if (need_b) ensure_grad_buffer(bi.get());
            for (int ci = 0; ci < c; ++ci) {
                float m = mean[ci], is = invstd[ci];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int ni = 0; ni < n; ++ni)
                    for (int j = 0; j < hw; ++j) {
                        size_t idx = at(ni, ci, j);
                        float dy = go[idx];
                        sum_dy += dy;
                        sum_dy_xhat += dy * (px[idx] - m) * is;
                    }
                if (need_g) gi->grad[ci] += static_cast<float>(sum_dy_xhat);
                if (need_b) bi->grad[ci] += static_cast<float>(sum_dy);
                if (need_x) {
                    float g = pg[ci];
                    if (train) {
                        float k1 = g * is / static_cast<float>(r);
                        for (int ni = 0; ni < n; ++ni)
                            for (int j = 0; j < hw; ++j) {
                                size_t idx = at(ni, ci, j);
                                float xhat = (px[idx] - m) * is;
                                xi->grad[idx] += k1 * (static_cast<float>(r) * go[idx] -
                                                       static_cast<float>(sum_dy) -
                                                       xhat * static_cast<float>(sum_dy_xhat));
                            }
                    } else {
                        float k = g * is;
                        for (int ni = 0; ni < n; ++ni)
                            for (int j = 0; j < hw; ++j) {
                                size_t idx = at(ni, ci, j);
                                xi->grad[idx] += k * go[idx];
                            }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// weight norm
// ---------------------------------------------------------------------------

Tensor weight_norm(const Tensor& v, const Tensor& g) {
    const Shape& s = v.shape();
    if (s.empty()) throw ShapeError("rank", "weight_norm: v must have at least one axis");
    int units = s[0];
    if (g.numel() != units)
        throw ShapeError("units", "weight_norm: g length " + std::to_string(g.numel()) +
                                      " != output units " + std::to_string(units));
    size_t stride = static_cast<size_t>(v.numel() / units);

    std::vector<float> norms(units);
    const float* pv = v.data().data();
    for (int u = 0; u < units; ++u) {
        double acc = 0.0;
        for (size_t j = 0; j < stride; ++j) {
            double x = pv[static_cast<size_t>(u) * stride + j];
            acc += x * x;
        }
        norms[u] = static_cast<float>(std::sqrt(acc));
        if (norms[u] < 1e-12f)
            throw ArgumentError("weight_norm: degenerate direction, ||v|| < 1e-12 at unit " + std::to_string(u));
    }

    Tensor out = make_tensor(s, false);
    const float* pgv = g.data().data();
    float* po = out.data().data();
    for (int u = 0; u < units; ++u) {
        float scale = pgv[u] / norms[u];
        for (size_t j = 0; j < stride; ++j)
            po[static_cast<size_t>(u) * stride + j] = scale * pv[static_cast<size_t>(u) * stride + j];
    }

    if (wants_grad({&v, &g})) {
        out.set_requires_grad(true);
        auto vi = v.impl_ptr(), gi = g.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("weight_norm", {vi, gi, oi}, [vi, gi, oi, norms, units, stride] {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            const float* pv = vi->data.data();
            const float* pg = gi->data.data();
            bool need_v = vi->requires_grad;
            bool need_g = gi->requires_grad;
            if (need_v) ensure_grad_buffer(vi.get());
            if (need_g) ensure_grad_buffer(gi.get());
            for (int u = 0; u < units; ++u) {
                size_t base = static_cast<size_t>(u) * stride;
                double dot = 0.0; // <v, dw>
                for (size_t j = 0; j < stride; ++j) dot += pv[base + j] * go[base + j];
                float nrm = norms[u];
                if (need_g) gi->grad[u] += static_cast<float>(dot / nrm);
                if (need_v) {
                    float a = pg[u] / nrm;
                    float b = static_cast<float>(pg[u] * dot / (static_cast<double>(nrm) * nrm * nrm));
                    for (size_t j = 0; j < stride; ++j) vi->grad[base + j] += a * go[base + j] - b * pv[base + j];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Tensor activation(const Tensor& t, Act kind, float leaky_slope) {
    if (kind == Act::Linear) return t;
    if (kind == Act::Softmax) return softmax_channels(t);

    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    int64_t n = t.numel();
    switch (kind) {
    case Act::LeakyRelu:
        for (int64_t i = 0; i < n; ++i) po[i] = pt[i] >= 0.0f ? pt[i] : leaky_slope * pt[i];
        break;
    case Act::Tanh:
        for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(pt[i]);
        break;
    case Act::Sigmoid:
        for (int64_t i = 0; i < n; ++i) po[i] = sigmoid_scalar(pt[i]);
        break;
    default:
        throw ArgumentError("activation: unknown kind");
    }

    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("activation", {ti, oi}, [ti, oi, kind, leaky_slope] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            size_t n = oi->grad.size();
            switch (kind) {
            case Act::LeakyRelu:
                for (size_t i = 0; i < n; ++i)
                    ti->grad[i] += oi->grad[i] * (ti->data[i] >= 0.0f ? 1.0f : leaky_slope);
                break;
            case Act::Tanh:
                for (size_t i = 0; i < n; ++i) {
                    float y = oi->data[i];
                    ti->grad[i] += oi->grad[i] * (1.0f - y * y);
                }
                break;
            case Act::Sigmoid:
                for (size_t i = 0; i < n; ++i) {
                    float y = oi->data[i];
                    ti->grad[i] += oi->grad[i] * y * (1.0f - y);
                }
                break;
            default:
                break;
            }
        });
    }
    return out;
}

Tensor softmax_channels(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.size() < 2) throw ShapeError("rank", "softmax needs a class axis, got " + shape_str(s));
    int n = s[0], k = s[1];
    int hw = 1;
    for (size_t i = 2; i < s.size(); ++i) hw *= s[i];

    Tensor out = make_tensor(s, false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int ni = 0; ni < n; ++ni) {
        for (int j = 0; j < hw; ++j) {
            auto at = [&](int ci) -> size_t { return (static_cast<size_t>(ni) * k + ci) * hw + j; };
            float mx = pt[at(0)];
            for (int ci = 1; ci < k; ++ci) mx = std::max(mx, pt[at(ci)]);
            double denom = 0.0;
            for (int ci = 0; ci < k; ++ci) denom += std::exp(static_cast<double>(pt[at(ci)] - mx));
            for (int ci = 0; ci < k; ++ci)
                po[at(ci)] = static_cast<float>(std::exp(static_cast<double>(pt[at(ci)] - mx)) / denom);
        }
    }

    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("softmax", {ti, oi}, [ti, oi, n, k, hw] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            const float* y = oi->data.data();
            const float* gy = oi->grad.data();
            for (int ni = 0; ni < n; ++ni) {
                for (int j = 0; j < hw; ++j) {
                    auto at = [&](int ci) -> size_t { return (static_cast<size_t>(ni) * k + ci) * hw + j; };
                    double dot = 0.0;
                    for (int ci = 0; ci < k; ++ci) dot += static_cast<double>(gy[at(ci)]) * y[at(ci)];
                    for (int ci = 0; ci < k; ++ci)
                        ti->grad[at(ci)] += y[at(ci)] * (gy[at(ci)] - static_cast<float>(dot));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// stochastic ops
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& t, float retention, Mode mode, SeededRng& rng) {
    if (!(retention > 0.0f && retention <= 1.0f))
        throw ArgumentError("dropout: retention must be in (0,1], got " + std::to_string(retention));
    if (mode == Mode::Eval || retention == 1.0f) return t;

    Tensor out = make_tensor(t.shape(), false);
    auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(t.numel()));
    float inv = 1.0f / retention;
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) {
        float m = (rng.next_float() < retention) ? inv : 0.0f;
        (*mask)[static_cast<size_t>(i)] = m;
        po[i] = pt[i] * m;
    }
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("dropout", {ti, oi}, [ti, oi, mask] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += oi->grad[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor add_gaussian_noise(const Tensor& t, float sigma, Mode mode, SeededRng& rng) {
    if (sigma < 0.0f) throw ArgumentError("add_gaussian_noise: sigma must be >= 0");
    if (mode == Mode::Eval || sigma == 0.0f) return t;

    Tensor out = make_tensor(t.shape(), false);
    const float* pt = t.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < t.numel(); ++i) po[i] = pt[i] + sigma * rng.normal();
    if (wants_grad({&t})) {
        out.set_requires_grad(true);
        auto ti = t.impl_ptr(), oi = out.impl_ptr();
        Tape::current()->record("gaussian_noise", {ti, oi}, [ti, oi] {
            if (oi->grad.empty()) return;
            ensure_grad_buffer(ti.get());
            for (size_t i = 0; i < oi->grad.size(); ++i) ti->grad[i] += oi->grad[i];
        });
    }
    return out;
}

std::vector<int> argmax_channel(const Tensor& probs) {
    const Shape& s = probs.shape();
    if (s.size() < 2) throw ShapeError("rank", "argmax_channel expects {N,K,...}");
    int n = s[0], k = s[1];
    if (static_cast<int64_t>(n) * k != probs.numel())
        throw ShapeError("spatial", "argmax_channel expects trailing axes of size 1");
    std::vector<int> out(static_cast<size_t>(n));
    const float* p = probs.data().data();
    for (int i = 0; i < n; ++i) {
        const float* row = p + static_cast<size_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

} // namespace hali
