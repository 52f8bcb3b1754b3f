#include "hali/refmath.hpp"

#include <cmath>

#include "hali/trainer.hpp"

namespace hali::ref {

DTensor::DTensor(Shape s, double fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

DTensor from_tensor(const Tensor& t) {
    DTensor d;
    d.shape = t.shape();
    d.data.assign(t.data().begin(), t.data().end());
    return d;
}

DTensor conv2d(const DTensor& x, const DTensor& w, const DTensor& b, int stride, int pad) {
    int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (wd + 2 * pad - kw) / stride + 1;
    DTensor out({n, cout, oh, ow});
    for (int ni = 0; ni < n; ++ni)
        for (int r = 0; r < cout; ++r)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b.data.empty() ? 0.0 : b.data[static_cast<size_t>(r)];
                    for (int c = 0; c < cin; ++c)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj) {
                                int sy = oy * stride - pad + ki;
                                int sx = ox * stride - pad + kj;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                acc += x.data[((static_cast<size_t>(ni) * cin + c) * h + sy) * wd + sx] *
                                       w.data[((static_cast<size_t>(r) * cin + c) * kh + ki) * kw + kj];
                            }
                    out.data[((static_cast<size_t>(ni) * cout + r) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

DTensor bilinear_upsample(const DTensor& x, int factor) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int oh = h * factor, ow = w * factor;
    DTensor out({n, c, oh, ow});
    auto src = [&](int o, int size) {
        double s = (o + 0.5) / factor - 0.5;
        int i0 = static_cast<int>(std::floor(s));
        double f = s - i0;
        int a = std::clamp(i0, 0, size - 1);
        int bdx = std::clamp(i0 + 1, 0, size - 1);
        if (a == bdx) f = 0.0;
        return std::tuple<int, int, double>(a, bdx, f);
    };
    for (int p = 0; p < n * c; ++p) {
        const double* in = x.data.data() + static_cast<size_t>(p) * h * w;
        double* o = out.data.data() + static_cast<size_t>(p) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            auto [y0, y1, fy] = src(oy, h);
            for (int ox = 0; ox < ow; ++ox) {
                auto [x0, x1, fx] = src(ox, w);
                double top = in[static_cast<size_t>(y0) * w + x0] * (1 - fx) + in[static_cast<size_t>(y0) * w + x1] * fx;
                double bot = in[static_cast<size_t>(y1) * w + x0] * (1 - fx) + in[static_cast<size_t>(y1) * w + x1] * fx;
                o[static_cast<size_t>(oy) * ow + ox] = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

namespace {
void bn_apply(const DTensor& x, const std::vector<double>& mean, const std::vector<double>& invstd,
              const DTensor& gamma, const DTensor& beta, DTensor& out) {
    int n = x.dim(0), c = x.dim(1);
    int hw = (x.shape.size() == 4) ? x.dim(2) * x.dim(3) : 1;
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int j = 0; j < hw; ++j) {
                size_t idx = (static_cast<size_t>(ni) * c + ci) * hw + j;
                out.data[idx] = gamma.data[static_cast<size_t>(ci)] * (x.data[idx] - mean[static_cast<size_t>(ci)]) *
                                    invstd[static_cast<size_t>(ci)] +
                                beta.data[static_cast<size_t>(ci)];
            }
}
} // namespace

DTensor batch_norm_train(const DTensor& x, const DTensor& gamma, const DTensor& beta, double eps) {
    int n = x.dim(0), c = x.dim(1);
    int hw = (x.shape.size() == 4) ? x.dim(2) * x.dim(3) : 1;
    int64_t r = static_cast<int64_t>(n) * hw;
    std::vector<double> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
        double acc = 0;
        for (int ni = 0; ni < n; ++ni)
            for (int j = 0; j < hw; ++j) acc += x.data[(static_cast<size_t>(ni) * c + ci) * hw + j];
        double m = acc / static_cast<double>(r);
        double v = 0;
        for (int ni = 0; ni < n; ++ni)
            for (int j = 0; j < hw; ++j) {
                double d = x.data[(static_cast<size_t>(ni) * c + ci) * hw + j] - m;
                v += d * d;
            }
        mean[static_cast<size_t>(ci)] = m;
        invstd[static_cast<size_t>(ci)] = 1.0 / std::sqrt(v / static_cast<double>(r) + eps);
    }
    DTensor out(x.shape);
    bn_apply(x, mean, invstd, gamma, beta, out);
    return out;
}

DTensor batch_norm_eval(const DTensor& x, const DTensor& gamma, const DTensor& beta, const DTensor& rmean,
                        const DTensor& rvar, double eps) {
    int c = x.dim(1);
    std::vector<double> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
        mean[static_cast<size_t>(ci)] = rmean.data[static_cast<size_t>(ci)];
        invstd[static_cast<size_t>(ci)] = 1.0 / std::sqrt(rvar.data[static_cast<size_t>(ci)] + eps);
    }
    DTensor out(x.shape);
    bn_apply(x, mean, invstd, gamma, beta, out);
    return out;
}

DTensor weight_norm(const DTensor& v, const DTensor& g) {
    int units = v.dim(0);
    size_t stride = static_cast<size_t>(v.numel() / units);
    DTensor out(v.shape);
    for (int u = 0; u < units; ++u) {
        double acc = 0;
        for (size_t j = 0; j < stride; ++j) {
            double x = v.data[static_cast<size_t>(u) * stride + j];
            acc += x * x;
        }
        double scale = g.data[static_cast<size_t>(u)] / std::sqrt(acc);
        for (size_t j = 0; j < stride; ++j)
            out.data[static_cast<size_t>(u) * stride + j] = scale * v.data[static_cast<size_t>(u) * stride + j];
    }
    return out;
}

DTensor activation(const DTensor& x, Act kind, double slope) {
    if (kind == Act::Linear) return x;
    if (kind == Act::Softmax) return softmax_channels(x);
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double v = x.data[i];
        switch (kind) {
        case Act::LeakyRelu: out.data[i] = v >= 0 ? v : slope * v; break;
        case Act::Tanh: out.data[i] = std::tanh(v); break;
        case Act::Sigmoid: out.data[i] = 1.0 / (1.0 + std::exp(-v)); break;
        default: throw ArgumentError("ref::activation: unknown kind");
        }
    }
    return out;
}

DTensor softmax_channels(const DTensor& x) {
    int n = x.dim(0), k = x.dim(1);
    int hw = 1;
    for (size_t i = 2; i < x.shape.size(); ++i) hw *= x.shape[i];
    DTensor out(x.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int j = 0; j < hw; ++j) {
            auto at = [&](int ci) { return (static_cast<size_t>(ni) * k + ci) * hw + j; };
            double mx = x.data[at(0)];
            for (int ci = 1; ci < k; ++ci) mx = std::max(mx, x.data[at(ci)]);
            double denom = 0;
            for (int ci = 0; ci < k; ++ci) denom += std::exp(x.data[at(ci)] - mx);
            for (int ci = 0; ci < k; ++ci) out.data[at(ci)] = std::exp(x.data[at(ci)] - mx) / denom;
        }
    return out;
}

DTensor dropout(const DTensor& x, double retention, SeededRng& rng) {
    DTensor out(x.shape);
    double inv = 1.0 / retention;
    for (size_t i = 0; i < x.data.size(); ++i) {
        bool keep = rng.next_float() < static_cast<float>(retention);
        out.data[i] = keep ? x.data[i] * inv : 0.0;
    }
    return out;
}

DTensor add_noise(const DTensor& x, double sigma, SeededRng& rng) {
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] + sigma * static_cast<double>(rng.normal());
    return out;
}

DTensor add(const DTensor& a, const DTensor& b) {
    DTensor out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}
DTensor sub(const DTensor& a, const DTensor& b) {
    DTensor out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
    return out;
}
DTensor mul(const DTensor& a, const DTensor& b) {
    DTensor out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}
DTensor div(const DTensor& a, const DTensor& b) {
    DTensor out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] / b.data[i];
    return out;
}
DTensor affine(const DTensor& x, double scale, double shift) {
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = scale * x.data[i] + shift;
    return out;
}
DTensor square(const DTensor& x) {
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * x.data[i];
    return out;
}
DTensor log_clamped(const DTensor& x, double floor) {
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::log(std::max(x.data[i], floor));
    return out;
}
DTensor softplus(const DTensor& x) {
    DTensor out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double v = x.data[i];
        out.data[i] = v > 20.0 ? v : (v < -20.0 ? std::exp(v) : std::log1p(std::exp(v)));
    }
    return out;
}

DTensor concat_channels(const DTensor& a, const DTensor& b) {
    int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    size_t plane = static_cast<size_t>(h) * w;
    DTensor out({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        for (size_t j = 0; j < ca * plane; ++j)
            out.data[(static_cast<size_t>(i) * (ca + cb)) * plane + j] = a.data[static_cast<size_t>(i) * ca * plane + j];
        for (size_t j = 0; j < cb * plane; ++j)
            out.data[(static_cast<size_t>(i) * (ca + cb) + ca) * plane + j] =
                b.data[static_cast<size_t>(i) * cb * plane + j];
    }
    return out;
}

DTensor slice_channels(const DTensor& x, int c_begin, int c_end) {
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    size_t plane = static_cast<size_t>(h) * w;
    int cs = c_end - c_begin;
    DTensor out({n, cs, h, w});
    for (int i = 0; i < n; ++i)
        for (size_t j = 0; j < cs * plane; ++j)
            out.data[static_cast<size_t>(i) * cs * plane + j] =
                x.data[(static_cast<size_t>(i) * c + c_begin) * plane + j];
    return out;
}

DTensor reshape(DTensor x, Shape s) {
    x.shape = std::move(s);
    return x;
}

DTensor sum_per_sample(const DTensor& x) {
    int n = x.dim(0);
    size_t stride = static_cast<size_t>(x.numel() / n);
    DTensor out({n});
    for (int i = 0; i < n; ++i) {
        double acc = 0;
        for (size_t j = 0; j < stride; ++j) acc += x.data[static_cast<size_t>(i) * stride + j];
        out.data[static_cast<size_t>(i)] = acc;
    }
    return out;
}

DTensor gaussian_log_density(const DTensor& mean, const DTensor& sigma, const DTensor& value) {
    constexpr double kHalfLog2Pi = 0.918938533204672741780329736406;
    DTensor elem(value.shape);
    for (size_t i = 0; i < value.data.size(); ++i) {
        double d = value.data[i] - mean.data[i];
        double s = sigma.data[i];
        elem.data[i] = -kHalfLog2Pi - std::log(s) - d * d / (2.0 * s * s);
    }
    return sum_per_sample(elem);
}

double dot(const DTensor& a, const DTensor& w) {
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * w.data[i];
    return acc;
}

// ---------------------------------------------------------------------------
// network mirrors — keep the RNG call order identical to the float path
// ---------------------------------------------------------------------------

namespace {
DTensor conv_unit(const ConvParams& p, const LayerCfg& cfg, const DTensor& x, Mode mode, SeededRng& rng,
                  double slope, bool skip_act) {
    DTensor in = x;
    if (cfg.drop > 0.0f && mode == Mode::Train && cfg.drop < 1.0f)
        in = dropout(in, 1.0 - static_cast<double>(cfg.drop), rng);
    DTensor w_eff = (cfg.norm == Norm::Weight) ? weight_norm(from_tensor(p.w), from_tensor(p.g))
                                               : from_tensor(p.w);
    DTensor y = conv2d(in, w_eff, from_tensor(p.b), cfg.stride, cfg.pad);
    if (cfg.norm == Norm::Batch) {
        if (mode == Mode::Train)
            y = batch_norm_train(y, from_tensor(p.gamma), from_tensor(p.beta));
        else
            y = batch_norm_eval(y, from_tensor(p.gamma), from_tensor(p.beta), from_tensor(p.bn.running_mean),
                                from_tensor(p.bn.running_var));
    }
    if (!skip_act) y = activation(y, cfg.act, slope);
    return y;
}
} // namespace

DTensor stage_forward(const Stage& stage, const DTensor& x, Mode mode, SeededRng& rng) {
    DTensor cur = x;
    for (const Block& b : stage.blocks) {
        switch (b.cfg.kind) {
        case LayerCfg::Kind::Conv:
            cur = conv_unit(b.c1, b.cfg, cur, mode, rng, stage.leaky_slope, false);
            break;
        case LayerCfg::Kind::Res: {
            DTensor in = cur;
            if (b.cfg.drop > 0.0f && mode == Mode::Train && b.cfg.drop < 1.0f)
                in = dropout(in, 1.0 - static_cast<double>(b.cfg.drop), rng);
            LayerCfg inner = b.cfg;
            inner.kind = LayerCfg::Kind::Conv;
            inner.drop = 0.0f;
            DTensor t = conv_unit(b.c1, inner, in, mode, rng, stage.leaky_slope, false);
            DTensor t2 = conv_unit(b.c2, inner, t, mode, rng, stage.leaky_slope, true);
            cur = activation(add(in, t2), b.cfg.act, stage.leaky_slope);
            break;
        }
        case LayerCfg::Kind::Upsample:
            cur = bilinear_upsample(cur, b.cfg.factor);
            break;
        case LayerCfg::Kind::Reshape: {
            Shape target{cur.dim(0)};
            for (int d : b.cfg.target_chw) target.push_back(d);
            cur = reshape(std::move(cur), target);
            break;
        }
        case LayerCfg::Kind::Noise:
            if (mode == Mode::Train && b.cfg.sigma > 0.0f) cur = add_noise(cur, b.cfg.sigma, rng);
            break;
        case LayerCfg::Kind::Gaussian:
            throw ConfigError("ref::stage_forward: unexpected gaussian row");
        }
    }
    return cur;
}

KernelMoments kernel_moments(const GaussianKernel& k, const DTensor& cond, Mode mode, SeededRng& rng) {
    DTensor feat = stage_forward(k.trunk, cond, mode, rng);
    DTensor mu = slice_channels(feat, 0, k.latent_channels);
    DTensor raw = slice_channels(feat, k.latent_channels, 2 * k.latent_channels);
    if (k.squash_mean) mu = activation(mu, Act::Tanh);
    DTensor sigma = affine(softplus(raw), 1.0, static_cast<double>(kSigmaFloor));
    return {std::move(mu), std::move(sigma)};
}

DTensor kernel_sample(const GaussianKernel& k, const DTensor& cond, Mode mode, SeededRng& rng) {
    KernelMoments m = kernel_moments(k, cond, mode, rng);
    DTensor out(m.mean.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = m.mean.data[i] + m.sigma.data[i] * static_cast<double>(rng.normal());
    return out;
}

ChainSample encoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, const DTensor& x, Mode mode,
                                 SeededRng& rng) {
    ChainSample out;
    out.x = x;
    DTensor cur = x;
    for (int l = 0; l < spec.levels; ++l) {
        cur = kernel_sample(h.enc[static_cast<size_t>(l)], cur, mode, rng);
        out.z.push_back(cur);
    }
    return out;
}

ChainSample decoder_chain_sample(const HierarchySpec& spec, const Hierarchy& h, Mode mode, SeededRng& rng,
                                 int batch) {
    Shape top_shape{batch};
    for (int d : spec.latent_chw.back()) top_shape.push_back(d);
    DTensor top(top_shape);
    for (double& v : top.data) v = static_cast<double>(rng.normal());

    ChainSample out;
    out.z.resize(static_cast<size_t>(spec.levels));
    out.z.back() = top;
    DTensor cur = top;
    for (int l = spec.levels - 1; l >= 1; --l) {
        cur = kernel_sample(h.dec[static_cast<size_t>(l)], cur, mode, rng);
        out.z[static_cast<size_t>(l - 1)] = cur;
    }
    out.x = activation(kernel_sample(h.dec[0], cur, mode, rng), Act::Tanh);
    return out;
}

DiscOut discriminator_forward(const Discriminator& d, const DTensor& x, const DTensor& z1, const DTensor& z2,
                              Mode mode, SeededRng& rng) {
    DTensor xn = (mode == Mode::Train && d.input_noise > 0) ? add_noise(x, d.input_noise, rng) : x;
    DTensor z1n = (mode == Mode::Train && d.input_noise > 0) ? add_noise(z1, d.input_noise, rng) : z1;
    DTensor z2n = (mode == Mode::Train && d.input_noise > 0) ? add_noise(z2, d.input_noise, rng) : z2;

    DTensor hx = stage_forward(d.sx, xn, mode, rng);
    DTensor h1 = stage_forward(d.sxz1, concat_channels(hx, z1n), mode, rng);
    DTensor emb = stage_forward(d.sxz2_body, concat_channels(h1, z2n), mode, rng);

    Stage out_stage{"disc_out", d.sxz2_body.out_chw, {1, 1, 1}, {d.out}, d.sx.leaky_slope};
    DTensor rho_map = stage_forward(out_stage, emb, mode, rng);

    DiscOut out;
    out.rho = reshape(std::move(rho_map), {x.dim(0)});
    int e = static_cast<int>(emb.numel() / emb.dim(0));
    out.embedding = reshape(std::move(emb), {x.dim(0), e});
    return out;
}

namespace {
double mean_log(const DTensor& v, bool one_minus) {
    double acc = 0;
    for (double x : v.data) {
        double t = one_minus ? 1.0 - x : x;
        acc += std::log(std::max(t, static_cast<double>(kLossLogClamp)));
    }
    return acc / static_cast<double>(v.data.size());
}
} // namespace

double discriminator_loss(const DTensor& rho_q, const DTensor& rho_p) {
    return -mean_log(rho_q, false) - mean_log(rho_p, true);
}

double generator_loss(const DTensor& rho_q, const DTensor& rho_p) {
    return -mean_log(rho_q, true) - mean_log(rho_p, false);
}

} // namespace hali::ref
