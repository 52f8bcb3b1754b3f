#include "hali/kernels.hpp"

#include <cmath>

namespace hali {

namespace {
constexpr float kHalfLog2Pi = 0.91893853320467274178f; // 0.5*ln(2*pi)

Shape batched(const Shape& chw, int n) {
    Shape s{n};
    for (int d : chw) s.push_back(d);
    return s;
}
} // namespace

KernelMoments kernel_moments(const GaussianKernel& k, const Tensor& cond, Mode mode, SeededRng& rng) {
    Tensor feat = stage_forward(k.trunk, cond, mode, rng);
    if (feat.dim(1) != 2 * k.latent_channels)
        throw ShapeError("channels", k.trunk.name + ": gaussian head expects " +
                                         std::to_string(2 * k.latent_channels) + " trunk maps, got " +
                                         std::to_string(feat.dim(1)));
    Tensor mu = slice_channels(feat, 0, k.latent_channels);
    Tensor raw = slice_channels(feat, k.latent_channels, 2 * k.latent_channels);
    if (k.squash_mean) mu = activation(mu, Act::Tanh);
    Tensor sigma = affine(softplus(raw), 1.0f, kSigmaFloor);
    return {mu, sigma};
}

Tensor kernel_sample(const GaussianKernel& k, const Tensor& cond, Mode mode, SeededRng& rng) {
    KernelMoments m = kernel_moments(k, cond, mode, rng);
    Tensor eps = Tensor::randn(m.mean.shape(), rng);
    return add(m.mean, mul(m.sigma, eps));
}

Tensor gaussian_log_density(const Tensor& mean, const Tensor& sigma, const Tensor& value) {
    if (!same_shape(mean.shape(), value.shape()) || !same_shape(sigma.shape(), value.shape()))
        throw ShapeError("elementwise", "gaussian_log_density: moment and value shapes differ");
    // -0.5*ln(2pi) - ln(sigma) - (v - mu)^2 / (2 sigma^2), summed per sample
    Tensor d2 = square(sub(value, mean));
    Tensor quad = affine(div(d2, square(sigma)), 0.5f, 0.0f);
    Tensor lg = log_clamped(sigma, 1e-30f);
    Tensor elem = affine(add(lg, quad), -1.0f, -kHalfLog2Pi);
    return sum_per_sample(elem);
}

Tensor kernel_log_density(const GaussianKernel& k, const Tensor& cond, const Tensor& value, Mode mode,
                          SeededRng& rng) {
    KernelMoments m = kernel_moments(k, cond, mode, rng);
    return gaussian_log_density(m.mean, m.sigma, value);
}

void HierarchySpec::validate() const {
    if (levels < 1) throw ConfigError("HierarchySpec: need at least one latent level");
    if (static_cast<int>(latent_chw.size()) != levels)
        throw ConfigError("HierarchySpec: " + std::to_string(latent_chw.size()) + " latent shapes for " +
                          std::to_string(levels) + " levels");
    if (data_chw.size() != 3) throw ConfigError("HierarchySpec: data shape must be CHW");
    for (const Shape& s : latent_chw) {
        if (s.size() != 3) throw ConfigError("HierarchySpec: latent shapes must be CHW");
        for (int d : s)
            if (d <= 0) throw ConfigError("HierarchySpec: latent dimensions must be positive");
    }
}

LatentSample encoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const Tensor& x, Mode mode,
                                  SeededRng& rng) {
    if (static_cast<int>(h.enc.size()) != spec.levels)
        throw ConfigError("encoder_chain_sample: hierarchy has " + std::to_string(h.enc.size()) +
                          " encoder kernels for " + std::to_string(spec.levels) + " levels");
    LatentSample out;
    out.source = LatentSample::Source::Encoder;
    out.x = x;
    Tensor cur = x;
    for (int l = 0; l < spec.levels; ++l) {
        cur = kernel_sample(h.enc[static_cast<size_t>(l)], cur, mode, rng);
        out.z.push_back(cur);
    }
    return out;
}

LatentSample decoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const Tensor& z_top, Mode mode,
                                  SeededRng& rng, int batch) {
    if (static_cast<int>(h.dec.size()) != spec.levels)
        throw ConfigError("decoder_chain_sample: hierarchy has " + std::to_string(h.dec.size()) +
                          " decoder kernels for " + std::to_string(spec.levels) + " levels");
    Tensor top = z_top;
    if (!top.defined()) {
        if (batch < 1) throw ArgumentError("decoder_chain_sample: prior draw needs a batch size");
        top = Tensor::randn(batched(spec.latent_chw.back(), batch), rng);
    }
    LatentSample out;
    out.source = LatentSample::Source::Decoder;
    out.z.resize(static_cast<size_t>(spec.levels));
    out.z.back() = top;
    Tensor cur = top;
    for (int l = spec.levels - 1; l >= 1; --l) {
        cur = kernel_sample(h.dec[static_cast<size_t>(l)], cur, mode, rng);
        out.z[static_cast<size_t>(l - 1)] = cur;
    }
    Tensor x_raw = kernel_sample(h.dec[0], cur, mode, rng);
    out.x = activation(x_raw, Act::Tanh);
    return out;
}

double reconstruction_error(const HierarchySpec& spec, const Hierarchy& h, int level, const Tensor& x,
                            SeededRng& rng, int n_samples, bool full_sampling) {
    if (level < 1 || level > spec.levels)
        throw ArgumentError("reconstruction_error: level " + std::to_string(level) + " outside [1," +
                            std::to_string(spec.levels) + "]");
    if (n_samples < 1) throw ArgumentError("reconstruction_error: n_samples must be >= 1");

    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        // z_level ~ M(z_level | x): sample every encoder kernel up the chain
        Tensor cur = x;
        for (int l = 0; l < level; ++l) cur = kernel_sample(h.enc[static_cast<size_t>(l)], cur, Mode::Eval, rng);
        // descend through the decoder; intermediate levels pass means
        for (int l = level - 1; l >= 1; --l) {
            if (full_sampling) {
                cur = kernel_sample(h.dec[static_cast<size_t>(l)], cur, Mode::Eval, rng);
            } else {
                cur = kernel_moments(h.dec[static_cast<size_t>(l)], cur, Mode::Eval, rng).mean;
            }
        }
        Tensor logp = kernel_log_density(h.dec[0], cur, x, Mode::Eval, rng); // {N}
        double batch_acc = 0.0;
        for (float v : logp.data()) batch_acc -= v;
        acc += batch_acc / static_cast<double>(logp.numel());
    }
    return acc / static_cast<double>(n_samples);
}

} // namespace hali
