#include "hali/latent.hpp"

#include <cmath>

namespace hali::latent {

namespace {

SeededRng& dummy_rng() {
    // eval-mode forwards through mean paths never draw from this
    static thread_local SeededRng rng(0, 0);
    return rng;
}

Tensor kernel_mean(const GaussianKernel& k, const Tensor& cond) {
    return kernel_moments(k, cond, Mode::Eval, dummy_rng()).mean;
}

Tensor kernel_draw(const GaussianKernel& k, const Tensor& cond, SeededRng* rng) {
    if (!rng) throw ArgumentError("sample mode needs an rng");
    return kernel_sample(k, cond, Mode::Eval, *rng);
}

Tensor decode_from_level(const HaliModel& m, Tensor z, int level, SampleMode mode, SeededRng* rng) {
    // z sits at `level`; walk decoder kernels down to x
    for (int l = level - 1; l >= 1; --l) {
        const GaussianKernel& k = m.h.dec[static_cast<size_t>(l)];
        z = (mode == SampleMode::Mean) ? kernel_mean(k, z) : kernel_draw(k, z, rng);
    }
    if (mode == SampleMode::Mean) return kernel_mean(m.h.dec[0], z);
    return activation(kernel_draw(m.h.dec[0], z, rng), Act::Tanh);
}

} // namespace

std::vector<Tensor> encode_means(const HaliModel& m, const Tensor& x) {
    std::vector<Tensor> z;
    Tensor cur = x;
    for (int l = 0; l < m.spec.levels; ++l) {
        cur = kernel_mean(m.h.enc[static_cast<size_t>(l)], cur);
        z.push_back(cur);
    }
    return z;
}

Tensor reconstruct_at_level(const HaliModel& m, const Tensor& x, int level, SampleMode mode, SeededRng* rng) {
    if (level < 1 || level > m.spec.levels)
        throw ArgumentError("reconstruct_at_level: level " + std::to_string(level) + " outside [1," +
                            std::to_string(m.spec.levels) + "]");
    Tensor cur = x;
    for (int l = 0; l < level; ++l) {
        const GaussianKernel& k = m.h.enc[static_cast<size_t>(l)];
        cur = (mode == SampleMode::Mean) ? kernel_mean(k, cur) : kernel_draw(k, cur, rng);
    }
    return decode_from_level(m, cur, level, mode, rng);
}

Tensor disc_embedding(const HaliModel& m, const Tensor& x) {
    std::vector<Tensor> z = encode_means(m, x);
    return discriminator_forward(m.disc, x, z[0], z[1], Mode::Eval, dummy_rng()).embedding;
}

std::vector<double> dc_distance(const HaliModel& m, const Tensor& u, const Tensor& v) {
    Tensor eu = disc_embedding(m, u);
    Tensor ev = disc_embedding(m, v);
    if (!same_shape(eu.shape(), ev.shape())) throw ShapeError("batch", "dc_distance: embedding shapes differ");
    int n = eu.dim(0);
    int e = eu.dim(1);
    std::vector<double> out(static_cast<size_t>(n));
    auto a = eu.data();
    auto b = ev.data();
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < e; ++j) {
            double d = static_cast<double>(a[static_cast<size_t>(i) * e + j]) - b[static_cast<size_t>(i) * e + j];
            acc += d * d;
        }
        out[static_cast<size_t>(i)] = std::sqrt(acc);
    }
    return out;
}

std::vector<double> mse_rows(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) throw ShapeError("elementwise", "mse_rows: shapes differ");
    int n = a.dim(0);
    size_t stride = static_cast<size_t>(a.numel() / n);
    std::vector<double> out(static_cast<size_t>(n));
    auto pa = a.data();
    auto pb = b.data();
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < stride; ++j) {
            double d = static_cast<double>(pa[static_cast<size_t>(i) * stride + j]) -
                       pb[static_cast<size_t>(i) * stride + j];
            acc += d * d;
        }
        out[static_cast<size_t>(i)] = acc / static_cast<double>(stride);
    }
    return out;
}

std::vector<Tensor> latent_sweep(const HaliModel& m, const Tensor& base_x, int level, int coordinate,
                                 const std::vector<float>& alphas, SeededRng* rng) {
    if (level != 1 && level != 2) throw ArgumentError("latent_sweep: level must be 1 or 2");
    Tensor z1, z2;
    if (base_x.defined()) {
        std::vector<Tensor> z = encode_means(m, base_x);
        z1 = z[0];
        z2 = z[1];
    } else {
        if (!rng) throw ArgumentError("latent_sweep: prior draw needs an rng");
        Shape s{1};
        for (int d : m.spec.latent_chw.back()) s.push_back(d);
        z2 = Tensor::randn(s, *rng);
        z1 = kernel_mean(m.h.dec[1], z2);
    }

    std::vector<Tensor> images;
    if (level == 2) {
        if (coordinate < 0 || coordinate >= static_cast<int>(z2.numel() / z2.dim(0)))
            throw ArgumentError("latent_sweep: z2 coordinate out of range");
        for (float a : alphas) {
            Tensor zt = z2.clone();
            size_t per = static_cast<size_t>(zt.numel() / zt.dim(0));
            for (int n = 0; n < zt.dim(0); ++n)
                zt.data()[static_cast<size_t>(n) * per + coordinate] *= a;
            images.push_back(decode_from_level(m, zt, 2, SampleMode::Mean, nullptr));
        }
    } else {
        // scale one whole feature map of z1, z2 stays fixed
        if (coordinate < 0 || coordinate >= z1.dim(1))
            throw ArgumentError("latent_sweep: z1 feature-map index out of range");
        size_t plane = static_cast<size_t>(z1.dim(2)) * z1.dim(3);
        size_t per = static_cast<size_t>(z1.dim(1)) * plane;
        for (float a : alphas) {
            Tensor zt = z1.clone();
            for (int n = 0; n < zt.dim(0); ++n) {
                float* p = zt.data().data() + static_cast<size_t>(n) * per +
                           static_cast<size_t>(coordinate) * plane;
                for (size_t j = 0; j < plane; ++j) p[j] *= a;
            }
            images.push_back(decode_from_level(m, zt, 1, SampleMode::Mean, nullptr));
        }
    }
    return images;
}

InnovationEdit innovation_edit(const HaliModel& m, const Tensor& x, int coordinate, float alpha,
                               SampleMode mode, SeededRng* rng) {
    std::vector<Tensor> z;
    if (mode == SampleMode::Mean) {
        z = encode_means(m, x);
    } else {
        Tensor cur = x;
        for (int l = 0; l < m.spec.levels; ++l) {
            cur = kernel_draw(m.h.enc[static_cast<size_t>(l)], cur, rng);
            z.push_back(cur);
        }
    }
    Tensor z1_hat = z[0];
    Tensor z2_hat = z[1];
    size_t per = static_cast<size_t>(z2_hat.numel() / z2_hat.dim(0));
    if (coordinate < 0 || coordinate >= static_cast<int>(per))
        throw ArgumentError("innovation_edit: z2 coordinate out of range");

    InnovationEdit e;
    e.z2_edited = z2_hat.clone();
    for (int n = 0; n < z2_hat.dim(0); ++n)
        e.z2_edited.data()[static_cast<size_t>(n) * per + coordinate] *= alpha;

    // regenerate z1 from the original and the edited code; in sample mode
    // both draws share the same noise so eta isolates the edit
    Tensor z1_regen, z1_regen_edit;
    if (mode == SampleMode::Mean) {
        z1_regen = kernel_mean(m.h.dec[1], z2_hat);
        z1_regen_edit = kernel_mean(m.h.dec[1], e.z2_edited);
    } else {
        SeededRng::State s = rng->save();
        z1_regen = kernel_draw(m.h.dec[1], z2_hat, rng);
        rng->restore(s);
        z1_regen_edit = kernel_draw(m.h.dec[1], e.z2_edited, rng);
    }
    e.eta = sub(z1_regen, z1_regen_edit);
    e.z1_edited = sub(z1_hat, e.eta);
    e.image = decode_from_level(m, e.z1_edited, 1, SampleMode::Mean, nullptr);
    return e;
}

std::vector<Tensor> inpaint(const HaliModel& m, const InpaintTask& task, SeededRng*) {
    const Tensor& x = task.x;
    const Tensor& mask = task.mask;
    if (x.shape().size() != 4 || mask.shape().size() != 4)
        throw ShapeError("rank", "inpaint: image and mask must be NCHW");
    if (mask.dim(0) != x.dim(0) || mask.dim(1) != 1 || mask.dim(2) != x.dim(2) || mask.dim(3) != x.dim(3))
        throw ShapeError("spatial", "inpaint: mask must be {N,1,H,W} matching the image");
    if (task.iterations < 1) throw ArgumentError("inpaint: need at least one iteration");

    bool any_hidden = false;
    for (float v : mask.data()) {
        if (v != 0.0f && v != 1.0f) throw ArgumentError("inpaint: mask must be binary");
        if (v == 0.0f) any_hidden = true;
    }
    if (!any_hidden) return {x.clone()};

    int channels = x.dim(1);
    size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    auto composite = [&](const Tensor& recon) {
        Tensor out = x.clone();
        auto po = out.data();
        auto pr = recon.data();
        auto pm = mask.data();
        for (int n = 0; n < x.dim(0); ++n)
            for (int c = 0; c < channels; ++c)
                for (size_t j = 0; j < plane; ++j) {
                    size_t pix = (static_cast<size_t>(n) * channels + c) * plane + j;
                    if (pm[static_cast<size_t>(n) * plane + j] == 0.0f) po[pix] = pr[pix];
                }
        return out;
    };

    std::vector<Tensor> iterates;
    Tensor masked = x.clone();
    {
        auto pm = mask.data();
        auto px = masked.data();
        for (int n = 0; n < x.dim(0); ++n)
            for (int c = 0; c < channels; ++c)
                for (size_t j = 0; j < plane; ++j)
                    if (pm[static_cast<size_t>(n) * plane + j] == 0.0f)
                        px[(static_cast<size_t>(n) * channels + c) * plane + j] = 0.0f;
    }

    Tensor cur = composite(reconstruct_at_level(m, masked, m.spec.levels, SampleMode::Mean, nullptr));
    iterates.push_back(cur);
    for (int it = 1; it < task.iterations; ++it) {
        cur = composite(reconstruct_at_level(m, cur, 1, SampleMode::Mean, nullptr));
        iterates.push_back(cur);
    }
    return iterates;
}

} // namespace hali::latent
