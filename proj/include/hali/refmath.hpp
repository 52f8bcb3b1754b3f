#pragma once

#include "hali/layers.hpp"
#include "hali/networks.hpp"

// Double-precision reference forward path, independent of the float32
// engine. The finite-difference oracle evaluates through these routines so
// its readout noise sits far below the 1e-3 gradient tolerance; unit tests
// also use them as value oracles. Stochastic ops must consume the RNG in
// exactly the same order as their float counterparts.
namespace hali::ref {

struct DTensor {
    Shape shape;
    std::vector<double> data;

    DTensor() = default;
    DTensor(Shape s, double fill = 0.0);
    int dim(int axis) const { return shape.at(static_cast<size_t>(axis)); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

DTensor from_tensor(const Tensor& t);

DTensor conv2d(const DTensor& x, const DTensor& w, const DTensor& b, int stride, int pad);
DTensor bilinear_upsample(const DTensor& x, int factor);
DTensor batch_norm_train(const DTensor& x, const DTensor& gamma, const DTensor& beta, double eps = 1e-5);
DTensor batch_norm_eval(const DTensor& x, const DTensor& gamma, const DTensor& beta, const DTensor& rmean,
                        const DTensor& rvar, double eps = 1e-5);
DTensor weight_norm(const DTensor& v, const DTensor& g);
DTensor activation(const DTensor& x, Act kind, double slope = 0.2);
DTensor softmax_channels(const DTensor& x);
DTensor dropout(const DTensor& x, double retention, SeededRng& rng);
DTensor add_noise(const DTensor& x, double sigma, SeededRng& rng);

DTensor add(const DTensor& a, const DTensor& b);
DTensor sub(const DTensor& a, const DTensor& b);
DTensor mul(const DTensor& a, const DTensor& b);
DTensor div(const DTensor& a, const DTensor& b);
DTensor affine(const DTensor& x, double scale, double shift);
DTensor square(const DTensor& x);
DTensor log_clamped(const DTensor& x, double floor);
DTensor softplus(const DTensor& x);
DTensor concat_channels(const DTensor& a, const DTensor& b);
DTensor slice_channels(const DTensor& x, int c_begin, int c_end);
DTensor reshape(DTensor x, Shape s);
DTensor sum_per_sample(const DTensor& x);
DTensor gaussian_log_density(const DTensor& mean, const DTensor& sigma, const DTensor& value);

double dot(const DTensor& a, const DTensor& w);

// mirrors of the runtime evaluators (same parameter tensors, promoted on
// the fly; same RNG call order as the float versions)
DTensor stage_forward(const Stage& stage, const DTensor& x, Mode mode, SeededRng& rng);

struct KernelMoments {
    DTensor mean, sigma;
};
KernelMoments kernel_moments(const GaussianKernel& k, const DTensor& cond, Mode mode, SeededRng& rng);
DTensor kernel_sample(const GaussianKernel& k, const DTensor& cond, Mode mode, SeededRng& rng);

struct ChainSample {
    DTensor x;
    std::vector<DTensor> z;
};
ChainSample encoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const DTensor& x, Mode mode,
                                 SeededRng& rng);
ChainSample decoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, Mode mode, SeededRng& rng,
                                 int batch);

struct DiscOut {
    DTensor rho;
    DTensor embedding;
};
DiscOut discriminator_forward(const Discriminator& d, const DTensor& x, const DTensor& z1, const DTensor& z2,
                              Mode mode, SeededRng& rng);

double discriminator_loss(const DTensor& rho_q, const DTensor& rho_p);
double generator_loss(const DTensor& rho_q, const DTensor& rho_p);

} // namespace hali::ref
