#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hali/rng.hpp"
#include "hali/tensor.hpp"

namespace hali {

enum class Mode { Train, Eval };

enum class Act { LeakyRelu, Tanh, Sigmoid, Softmax, Linear };

Act act_from_string(const std::string& name);

// Reverse-mode computation record. Constructing a Tape makes it the active
// record for the current thread (records nest); ops append nodes whenever
// any differentiable input is involved. backward() runs one reverse sweep
// and then resets the record, so each training step replays from scratch.
//
// Gradient policy: backward() first clears the gradients of every tensor
// that participated in this record, then accumulates fresh ones. Two
// backward calls from independently built records therefore never mix.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // loss must be scalar (numel == 1) and differentiable.
    void backward(const Tensor& loss);

    size_t size() const { return nodes_.size(); }

    static Tape* current();

    // Internal: ops call this. `parts` are all tensors touched by the node
    // (keeps activations alive until the sweep, and defines the zeroing set).
    void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> parts,
                std::function<void()> backward_fn);

private:
    struct Node {
        const char* op;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<TensorImpl>> touched_;
    Tape* prev_ = nullptr;
};

// ---- shape ops ----
Tensor reshape(const Tensor& t, Shape new_shape);
Tensor concat_channels(const Tensor& a, const Tensor& b); // NCHW, axis 1
Tensor slice_channels(const Tensor& t, int c_begin, int c_end);

// ---- elementwise / reductions ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& t, float scale, float shift); // scale*t + shift
Tensor square(const Tensor& t);
Tensor log_clamped(const Tensor& t, float floor); // ln(max(t, floor))
Tensor softplus(const Tensor& t);
Tensor sum_all(const Tensor& t);  // -> {1}
Tensor mean_all(const Tensor& t); // -> {1}
Tensor sum_per_sample(const Tensor& t); // {N,...} -> {N}
// probs {N,K,...}: picks probs[n, labels[n]] -> {N}. Throws DataError on a
// label outside [0,K).
Tensor gather_channel(const Tensor& probs, const std::vector<int>& labels);

// ---- neural net ops ----

// input {N,Cin,H,W}, weight {Cout,Cin,kh,kw}, bias {Cout}.
// out spatial = floor((in + 2*pad - k)/stride) + 1 (cross-correlation).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);

// Integer-factor bilinear interpolation with half-pixel centers
// (src = (dst + 0.5)/factor - 0.5, edge-clamped). factor >= 2.
Tensor bilinear_upsample(const Tensor& input, int factor);

struct BatchNormState {
    Tensor running_mean; // {C}
    Tensor running_var;  // {C}
    explicit BatchNormState(int channels = 0);
};

// Train mode normalizes by batch statistics (eps guard) and updates the
// running buffers in place; eval mode normalizes by the running buffers.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                  BatchNormState& state, float momentum = 0.1f, float eps = 1e-5f);

// w = g * v / ||v|| per output unit (first axis of v). g has one entry per
// output unit. Throws ArgumentError when some ||v|| < 1e-12.
Tensor weight_norm(const Tensor& v, const Tensor& g);

Tensor activation(const Tensor& t, Act kind, float leaky_slope = 0.2f);
Tensor softmax_channels(const Tensor& t); // per (n,h,w) position over axis 1

// Inverted dropout: train mode zeroes with probability 1-retention and
// rescales survivors by 1/retention; eval mode is the identity.
// retention must lie in (0, 1].
Tensor dropout(const Tensor& t, float retention, Mode mode, SeededRng& rng);

// Train mode adds iid N(0, sigma^2); eval mode (or sigma == 0) is the
// identity. Gradient w.r.t. the input is the identity either way.
Tensor add_gaussian_noise(const Tensor& t, float sigma, Mode mode, SeededRng& rng);

// ---- non-differentiable helpers ----
std::vector<int> argmax_channel(const Tensor& probs); // {N,K,...} -> per-sample argmax over K

} // namespace hali
