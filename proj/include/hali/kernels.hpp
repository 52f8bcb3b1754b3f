#pragma once

#include "hali/layers.hpp"

namespace hali {

// Scale head floor: sigma = softplus(raw) + kSigmaFloor, so every kernel
// stays strictly positive-width.
inline constexpr float kSigmaFloor = 1e-3f;

// Conditional diagonal Gaussian: the trunk maps the conditioning tensor to
// 2*latent_channels feature maps which split into a mean head and a raw
// scale head. squash_mean puts the mean through tanh (the data-level kernel,
// whose samples live in [-1,1]).
struct GaussianKernel {
    Stage trunk;
    int latent_channels = 0;
    bool squash_mean = false;
    Shape out_chw;
};

struct KernelMoments {
    Tensor mean;
    Tensor sigma;
};

KernelMoments kernel_moments(const GaussianKernel& k, const Tensor& cond, Mode mode, SeededRng& rng);

// Reparameterized draw z = mu + sigma * eps, eps ~ N(0, I); gradients flow
// into mu and sigma.
Tensor kernel_sample(const GaussianKernel& k, const Tensor& cond, Mode mode, SeededRng& rng);

// Per-sample log N(value; mu(cond), sigma(cond)), summed over dimensions -> {N}.
Tensor kernel_log_density(const GaussianKernel& k, const Tensor& cond, const Tensor& value, Mode mode,
                          SeededRng& rng);

// Same, from explicit moments.
Tensor gaussian_log_density(const Tensor& mean, const Tensor& sigma, const Tensor& value);

// Level layout: level 0 is x, level l>=1 is z_l. The prior on the top level
// is N(0, I).
struct HierarchySpec {
    int levels = 2;                 // number of latent levels L
    Shape data_chw;                 // x
    std::vector<Shape> latent_chw;  // z_1 ... z_L
    void validate() const;
};

struct Hierarchy {
    // enc[l] maps level l to level l+1 (enc[0]: x -> z1).
    std::vector<GaussianKernel> enc;
    // dec[l] maps level l+1 to level l (dec[0]: z1 -> x).
    std::vector<GaussianKernel> dec;
};

struct LatentSample {
    enum class Source { Encoder, Decoder };
    Source source = Source::Encoder;
    Tensor x;
    std::vector<Tensor> z; // z[0] = z1 ... z[L-1] = zL
};

// Ancestral draw of the encoder joint: z1 ~ q(z1|x), z2 ~ q(z2|z1), ...
// Each kernel sees only the previous level, so the Markov structure holds
// by construction.
LatentSample encoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const Tensor& x, Mode mode,
                                  SeededRng& rng);

// Ancestral draw of the decoder joint from z_top (or, when z_top is
// undefined, from a prior N(0,I) draw of `batch` samples). The drawn x is
// squashed through tanh into data range; densities always use the Gaussian
// head directly.
LatentSample decoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const Tensor& z_top, Mode mode,
                                  SeededRng& rng, int batch = 0);

// Monte-Carlo estimate of E_{z_l ~ M(z_l|x)}[-log p(x|z_l)], averaged over
// the batch. Intermediate decoder levels pass conditional means unless
// full_sampling is set; the data-level Gaussian density is evaluated at x.
double reconstruction_error(const HierarchySpec& spec, const Hierarchy& h, int level, const Tensor& x,
                            SeededRng& rng, int n_samples = 8, bool full_sampling = false);

} // namespace hali
