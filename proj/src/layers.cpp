#include "hali/layers.hpp"

#include <cmath>

namespace hali {

LayerCfg LayerCfg::conv(int out_ch, int kernel, int stride, int pad, Norm norm, float drop, Act act) {
    LayerCfg c;
    c.kind = Kind::Conv;
    c.out_channels = out_ch;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    c.norm = norm;
    c.drop = drop;
    c.act = act;
    return c;
}

LayerCfg LayerCfg::res(int channels, Norm norm, Act act, float drop) {
    LayerCfg c;
    c.kind = Kind::Res;
    c.out_channels = channels;
    c.kernel = 3;
    c.stride = 1;
    c.pad = 1;
    c.norm = norm;
    c.drop = drop;
    c.act = act;
    return c;
}

LayerCfg LayerCfg::upsample(int factor) {
    LayerCfg c;
    c.kind = Kind::Upsample;
    c.factor = factor;
    return c;
}

LayerCfg LayerCfg::reshape_to(Shape chw) {
    LayerCfg c;
    c.kind = Kind::Reshape;
    c.target_chw = std::move(chw);
    return c;
}

LayerCfg LayerCfg::gaussian(int latent_channels, bool squash_mean) {
    LayerCfg c;
    c.kind = Kind::Gaussian;
    c.latent_channels = latent_channels;
    c.squash_mean = squash_mean;
    return c;
}

LayerCfg LayerCfg::noise(float sigma) {
    LayerCfg c;
    c.kind = Kind::Noise;
    c.sigma = sigma;
    return c;
}

const char* LayerCfg::kind_name() const {
    switch (kind) {
    case Kind::Conv: return "conv";
    case Kind::Res: return "res";
    case Kind::Upsample: return "upsample";
    case Kind::Reshape: return "reshape";
    case Kind::Gaussian: return "gaussian";
    case Kind::Noise: return "noise";
    }
    return "?";
}

Shape layer_output_shape(const LayerCfg& cfg, const Shape& in_chw, const std::string& stage_name, int row) {
    auto fail = [&](const std::string& why) -> ConfigError {
        return ConfigError(stage_name + " row " + std::to_string(row) + " (" + cfg.kind_name() + "): " + why +
                           " [input " + shape_str(in_chw) + "]");
    };
    if (in_chw.size() != 3) throw fail("expected CHW input");
    int c = in_chw[0], h = in_chw[1], w = in_chw[2];
    switch (cfg.kind) {
    case LayerCfg::Kind::Conv: {
        if (h + 2 * cfg.pad < cfg.kernel || w + 2 * cfg.pad < cfg.kernel)
            throw fail("kernel " + std::to_string(cfg.kernel) + " larger than padded input");
        int oh = (h + 2 * cfg.pad - cfg.kernel) / cfg.stride + 1;
        int ow = (w + 2 * cfg.pad - cfg.kernel) / cfg.stride + 1;
        return {cfg.out_channels, oh, ow};
    }
    case LayerCfg::Kind::Res:
        if (cfg.out_channels != c)
            throw fail("residual block needs matching channels, got " + std::to_string(c) + " -> " +
                       std::to_string(cfg.out_channels));
        return in_chw;
    case LayerCfg::Kind::Upsample:
        if (cfg.factor < 2) throw fail("upsample factor must be >= 2");
        return {c, h * cfg.factor, w * cfg.factor};
    case LayerCfg::Kind::Reshape:
        if (shape_numel(cfg.target_chw) != shape_numel(in_chw))
            throw fail("reshape to " + shape_str(cfg.target_chw) + " changes element count");
        return cfg.target_chw;
    case LayerCfg::Kind::Gaussian:
        if (c != 2 * cfg.latent_channels)
            throw fail("gaussian head needs 2*latent channels = " + std::to_string(2 * cfg.latent_channels) +
                       " trunk maps, got " + std::to_string(c));
        return {cfg.latent_channels, h, w};
    case LayerCfg::Kind::Noise:
        return in_chw;
    }
    throw fail("unknown row kind");
}

namespace {

ConvParams init_conv(int in_ch, const LayerCfg& cfg, SeededRng& rng) {
    ConvParams p;
    int fan_in = in_ch * cfg.kernel * cfg.kernel;
    float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    p.w = Tensor::randn({cfg.out_channels, in_ch, cfg.kernel, cfg.kernel}, rng, std, true);
    p.b = Tensor::zeros({cfg.out_channels}, true);
    if (cfg.norm == Norm::Weight) {
        // g starts at ||v|| so the effective weight equals v initially
        p.g = Tensor::zeros({cfg.out_channels}, true);
        size_t stride = static_cast<size_t>(in_ch) * cfg.kernel * cfg.kernel;
        auto wd = p.w.data();
        auto gd = p.g.data();
        for (int u = 0; u < cfg.out_channels; ++u) {
            double acc = 0.0;
            for (size_t j = 0; j < stride; ++j) {
                double x = wd[static_cast<size_t>(u) * stride + j];
                acc += x * x;
            }
            gd[u] = static_cast<float>(std::sqrt(acc));
        }
    } else if (cfg.norm == Norm::Batch) {
        p.gamma = Tensor::full({cfg.out_channels}, 1.0f, true);
        p.beta = Tensor::zeros({cfg.out_channels}, true);
        p.bn = BatchNormState(cfg.out_channels);
    }
    return p;
}

Tensor conv_unit_forward(const ConvParams& p, const LayerCfg& cfg, const Tensor& x, Mode mode,
                         SeededRng& rng, float slope, bool skip_act) {
    Tensor in = x;
    if (cfg.drop > 0.0f) in = dropout(in, 1.0f - cfg.drop, mode, rng);
    Tensor w_eff = (cfg.norm == Norm::Weight) ? weight_norm(p.w, p.g) : p.w;
    Tensor y = conv2d(in, w_eff, p.b, cfg.stride, cfg.pad);
    if (cfg.norm == Norm::Batch) y = batch_norm(y, p.gamma, p.beta, mode, p.bn);
    if (!skip_act) y = activation(y, cfg.act, slope);
    return y;
}

} // namespace

Stage build_stage(const std::string& name, const Shape& in_chw, const std::vector<LayerCfg>& rows,
                  float leaky_slope, SeededRng& rng) {
    Stage s;
    s.name = name;
    s.in_chw = in_chw;
    s.leaky_slope = leaky_slope;
    Shape cur = in_chw;
    for (size_t i = 0; i < rows.size(); ++i) {
        const LayerCfg& cfg = rows[i];
        if (cfg.kind == LayerCfg::Kind::Gaussian)
            throw ConfigError(name + " row " + std::to_string(i) + ": gaussian heads live on kernels, not stages");
        Shape next = layer_output_shape(cfg, cur, name, static_cast<int>(i));
        Block b;
        b.cfg = cfg;
        if (cfg.kind == LayerCfg::Kind::Conv) {
            b.c1 = init_conv(cur[0], cfg, rng);
        } else if (cfg.kind == LayerCfg::Kind::Res) {
            LayerCfg inner = cfg;
            inner.kind = LayerCfg::Kind::Conv;
            inner.drop = 0.0f;
            b.c1 = init_conv(cur[0], inner, rng);
            b.c2 = init_conv(cfg.out_channels, inner, rng);
        }
        s.blocks.push_back(std::move(b));
        cur = next;
    }
    s.out_chw = cur;
    return s;
}

Tensor stage_forward(const Stage& stage, const Tensor& x, Mode mode, SeededRng& rng) {
    if (x.shape().size() != 4)
        throw ShapeError("rank", stage.name + ": stage input must be NCHW, got " + shape_str(x.shape()));
    Tensor cur = x;
    for (const Block& b : stage.blocks) {
        switch (b.cfg.kind) {
        case LayerCfg::Kind::Conv:
            cur = conv_unit_forward(b.c1, b.cfg, cur, mode, rng, stage.leaky_slope, false);
            break;
        case LayerCfg::Kind::Res: {
            // f(x) = bn2(conv2(act(bn1(conv1(x))))); out = act(x + f(x))
            Tensor in = cur;
            if (b.cfg.drop > 0.0f) in = dropout(in, 1.0f - b.cfg.drop, mode, rng);
            LayerCfg inner = b.cfg;
            inner.kind = LayerCfg::Kind::Conv;
            inner.drop = 0.0f;
            Tensor t = conv_unit_forward(b.c1, inner, in, mode, rng, stage.leaky_slope, false);
            Tensor t2 = conv_unit_forward(b.c2, inner, t, mode, rng, stage.leaky_slope, true);
            cur = activation(add(in, t2), b.cfg.act, stage.leaky_slope);
            break;
        }
        case LayerCfg::Kind::Upsample:
            cur = bilinear_upsample(cur, b.cfg.factor);
            break;
        case LayerCfg::Kind::Reshape: {
            Shape target{cur.dim(0)};
            for (int d : b.cfg.target_chw) target.push_back(d);
            cur = reshape(cur, target);
            break;
        }
        case LayerCfg::Kind::Noise:
            cur = add_gaussian_noise(cur, b.cfg.sigma, mode, rng);
            break;
        case LayerCfg::Kind::Gaussian:
            throw ConfigError(stage.name + ": unexpected gaussian row in runtime stage");
        }
    }
    return cur;
}

namespace {
void collect_conv(const std::string& prefix, const ConvParams& p, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w", p.w});
    out.push_back({prefix + ".b", p.b});
    if (p.g.defined()) out.push_back({prefix + ".g", p.g});
    if (p.gamma.defined()) {
        out.push_back({prefix + ".gamma", p.gamma});
        out.push_back({prefix + ".beta", p.beta});
    }
}
void collect_conv_state(const std::string& prefix, const ConvParams& p, std::vector<NamedTensor>& out) {
    if (p.bn.running_mean.defined()) {
        out.push_back({prefix + ".rmean", p.bn.running_mean});
        out.push_back({prefix + ".rvar", p.bn.running_var});
    }
}
} // namespace

void collect_params(const Stage& stage, std::vector<NamedTensor>& out) {
    for (size_t i = 0; i < stage.blocks.size(); ++i) {
        const Block& b = stage.blocks[i];
        std::string prefix = stage.name + "." + std::to_string(i);
        if (b.cfg.kind == LayerCfg::Kind::Conv) collect_conv(prefix + ".c1", b.c1, out);
        if (b.cfg.kind == LayerCfg::Kind::Res) {
            collect_conv(prefix + ".c1", b.c1, out);
            collect_conv(prefix + ".c2", b.c2, out);
        }
    }
}

void collect_state(const Stage& stage, std::vector<NamedTensor>& out) {
    for (size_t i = 0; i < stage.blocks.size(); ++i) {
        const Block& b = stage.blocks[i];
        std::string prefix = stage.name + "." + std::to_string(i);
        if (b.cfg.kind == LayerCfg::Kind::Conv) collect_conv_state(prefix + ".c1", b.c1, out);
        if (b.cfg.kind == LayerCfg::Kind::Res) {
            collect_conv_state(prefix + ".c1", b.c1, out);
            collect_conv_state(prefix + ".c2", b.c2, out);
        }
    }
}

} // namespace hali
