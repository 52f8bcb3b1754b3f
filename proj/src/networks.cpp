#include "hali/networks.hpp"

namespace hali {

namespace {

using K = LayerCfg;

Shape chain_shape(const NetCfg& net, const Shape& in_chw) {
    Shape cur = in_chw;
    for (size_t i = 0; i < net.rows.size(); ++i)
        cur = layer_output_shape(net.rows[i], cur, net.name, static_cast<int>(i));
    return cur;
}

// Kernel stages end with exactly one gaussian row; everything before it is
// the runtime trunk.
void check_kernel_net(const NetCfg& net, const Shape& in_chw, const Shape& target_chw) {
    if (net.rows.empty()) throw ConfigError(net.name + ": empty layer list");
    for (size_t i = 0; i + 1 < net.rows.size(); ++i)
        if (net.rows[i].kind == K::Kind::Gaussian)
            throw ConfigError(net.name + " row " + std::to_string(i) + ": gaussian head before the end of the stage");
    if (net.rows.back().kind != K::Kind::Gaussian)
        throw ConfigError(net.name + ": kernel stage must end with a gaussian head");
    Shape out = chain_shape(net, in_chw);
    if (out != target_chw)
        throw ConfigError(net.name + ": produces " + shape_str(out) + ", declared latent is " +
                          shape_str(target_chw));
}

GaussianKernel build_kernel(const NetCfg& net, const Shape& in_chw, float slope, SeededRng& rng) {
    std::vector<LayerCfg> trunk_rows(net.rows.begin(), net.rows.end() - 1);
    const LayerCfg& head = net.rows.back();
    GaussianKernel k;
    k.trunk = build_stage(net.name, in_chw, trunk_rows, slope, rng);
    k.latent_channels = head.latent_channels;
    k.squash_mean = head.squash_mean;
    k.out_chw = {head.latent_channels, k.trunk.out_chw[1], k.trunk.out_chw[2]};
    return k;
}

} // namespace

ModelConfig ModelConfig::mnist_small() {
    ModelConfig c;
    c.name = "mnist-small";
    c.data_chw = {1, 28, 28};
    c.z1_chw = {16, 7, 7};
    c.z2_chw = {64, 1, 1};
    c.classes = 10;

    c.enc_z1 = {"enc_z1",
                {K::noise(0.2f),
                 K::conv(8, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(16, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::res(16, Norm::Batch, Act::LeakyRelu),
                 K::conv(32, 3, 1, 1, Norm::None, 0.0f, Act::LeakyRelu),
                 K::gaussian(16)}};
    c.enc_z2 = {"enc_z2",
                {K::conv(32, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::res(32, Norm::Batch, Act::LeakyRelu),
                 K::conv(64, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(128, 2, 1, 0, Norm::None, 0.0f, Act::LeakyRelu),
                 K::gaussian(64)}};
    c.dec_z1 = {"dec_z1",
                {K::conv(784, 1, 1, 0, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::reshape_to({16, 7, 7}),
                 K::res(16, Norm::Batch, Act::LeakyRelu),
                 K::conv(32, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(32, 3, 1, 1, Norm::None, 0.0f, Act::LeakyRelu),
                 K::gaussian(16)}};
    c.dec_x = {"dec_x",
               {K::conv(32, 1, 1, 0, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::res(32, Norm::Batch, Act::LeakyRelu),
                K::upsample(2),
                K::conv(16, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::upsample(2),
                K::conv(8, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::conv(2, 3, 1, 1, Norm::None, 0.0f, Act::Linear),
                K::gaussian(1, true)}};

    c.disc_x = {"disc_x",
                {K::conv(8, 3, 2, 1, Norm::Weight, 0.2f, Act::LeakyRelu),
                 K::conv(16, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                 K::conv(32, 3, 1, 1, Norm::Weight, 0.5f, Act::LeakyRelu)}};
    c.disc_xz1 = {"disc_xz1",
                  {K::conv(64, 3, 2, 1, Norm::Weight, 0.2f, Act::LeakyRelu),
                   K::conv(64, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                   K::conv(128, 2, 1, 0, Norm::Weight, 0.5f, Act::LeakyRelu)}};
    c.disc_xz2 = {"disc_xz2",
                  {K::conv(256, 1, 1, 0, Norm::None, 0.2f, Act::LeakyRelu),
                   K::conv(256, 1, 1, 0, Norm::None, 0.5f, Act::LeakyRelu),
                   K::conv(1, 1, 1, 0, Norm::None, 0.5f, Act::Sigmoid)}};

    c.classifier = {"classifier",
                    {K::conv(64, 1, 1, 0, Norm::None, 0.0f, Act::LeakyRelu),
                     K::conv(10, 1, 1, 0, Norm::None, 0.0f, Act::Linear)}};
    return c;
}

ModelConfig ModelConfig::toy2d() {
    ModelConfig c;
    c.name = "toy-2d";
    c.data_chw = {2, 1, 1};
    c.z1_chw = {4, 1, 1};
    c.z2_chw = {2, 1, 1};
    c.classes = 2;

    auto fc = [](int out, Norm n, float drop, Act a) { return K::conv(out, 1, 1, 0, n, drop, a); };

    c.enc_z1 = {"enc_z1", {K::noise(0.2f), fc(16, Norm::Batch, 0, Act::LeakyRelu),
                           K::res(16, Norm::Batch, Act::LeakyRelu), fc(8, Norm::None, 0, Act::LeakyRelu),
                           K::gaussian(4)}};
    c.enc_z2 = {"enc_z2", {fc(16, Norm::Batch, 0, Act::LeakyRelu), K::res(16, Norm::Batch, Act::LeakyRelu),
                           fc(4, Norm::None, 0, Act::LeakyRelu), K::gaussian(2)}};
    c.dec_z1 = {"dec_z1", {fc(16, Norm::Batch, 0, Act::LeakyRelu), K::res(16, Norm::Batch, Act::LeakyRelu),
                           fc(8, Norm::None, 0, Act::LeakyRelu), K::gaussian(4)}};
    c.dec_x = {"dec_x", {fc(16, Norm::Batch, 0, Act::LeakyRelu), K::res(16, Norm::Batch, Act::LeakyRelu),
                         fc(4, Norm::None, 0, Act::Linear), K::gaussian(2, true)}};

    c.disc_x = {"disc_x", {fc(8, Norm::Weight, 0.2f, Act::LeakyRelu), fc(8, Norm::Weight, 0.5f, Act::LeakyRelu)}};
    c.disc_xz1 = {"disc_xz1", {fc(16, Norm::Weight, 0.5f, Act::LeakyRelu), fc(16, Norm::Weight, 0.5f, Act::LeakyRelu)}};
    c.disc_xz2 = {"disc_xz2", {fc(32, Norm::None, 0.5f, Act::LeakyRelu), fc(32, Norm::None, 0.5f, Act::LeakyRelu),
                               fc(1, Norm::None, 0.5f, Act::Sigmoid)}};
    c.classifier = {"classifier", {fc(8, Norm::None, 0, Act::LeakyRelu), fc(2, Norm::None, 0, Act::Linear)}};
    return c;
}

ModelConfig ModelConfig::paper_celeba_shapes() {
    ModelConfig c;
    c.name = "paper-celeba-shapes";
    c.data_chw = {3, 128, 128};
    c.z1_chw = {64, 32, 32};
    c.z2_chw = {256, 1, 1};
    c.classes = 10;

    c.enc_z1 = {"enc_z1",
                {K::noise(0.2f),
                 K::conv(32, 3, 1, 1, Norm::None, 0.0f, Act::LeakyRelu),
                 K::conv(64, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::res(64, Norm::Batch, Act::LeakyRelu),
                 K::res(64, Norm::Batch, Act::LeakyRelu),
                 K::conv(128, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::res(128, Norm::Batch, Act::LeakyRelu),
                 K::conv(128, 3, 1, 1, Norm::None, 0.0f, Act::LeakyRelu),
                 K::gaussian(64)}};
    c.enc_z2 = {"enc_z2",
                {K::conv(256, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(256, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(512, 3, 2, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::res(512, Norm::Batch, Act::LeakyRelu),
                 K::conv(512, 4, 1, 0, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(512, 1, 1, 0, Norm::None, 0.0f, Act::Linear),
                 K::gaussian(256)}};
    c.dec_z1 = {"dec_z1",
                {K::conv(4096, 1, 1, 0, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::reshape_to({256, 4, 4}),
                 K::upsample(2),
                 K::res(256, Norm::Batch, Act::LeakyRelu),
                 K::upsample(2),
                 K::conv(256, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::conv(128, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                 K::upsample(2),
                 K::conv(128, 3, 1, 1, Norm::None, 0.0f, Act::LeakyRelu),
                 K::gaussian(64)}};
    c.dec_x = {"dec_x",
               {K::conv(64, 1, 1, 0, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::res(64, Norm::Batch, Act::LeakyRelu),
                K::upsample(2),
                K::res(64, Norm::Batch, Act::LeakyRelu),
                K::upsample(2),
                K::conv(64, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::conv(32, 3, 1, 1, Norm::Batch, 0.0f, Act::LeakyRelu),
                K::conv(6, 1, 1, 0, Norm::None, 0.0f, Act::Linear),
                K::gaussian(3, true)}};

    c.disc_x = {"disc_x",
                {K::conv(32, 3, 1, 1, Norm::Weight, 0.2f, Act::LeakyRelu),
                 K::conv(64, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                 K::conv(64, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                 K::conv(64, 3, 1, 1, Norm::Weight, 0.5f, Act::LeakyRelu)}};
    c.disc_xz1 = {"disc_xz1",
                  {K::conv(128, 3, 1, 1, Norm::Weight, 0.2f, Act::LeakyRelu),
                   K::conv(256, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                   K::conv(256, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                   K::conv(512, 3, 2, 1, Norm::Weight, 0.5f, Act::LeakyRelu),
                   K::conv(512, 4, 1, 0, Norm::Weight, 0.2f, Act::LeakyRelu)}};
    c.disc_xz2 = {"disc_xz2",
                  {K::conv(1024, 1, 1, 0, Norm::None, 0.5f, Act::LeakyRelu),
                   K::conv(1024, 1, 1, 0, Norm::None, 0.5f, Act::LeakyRelu),
                   K::conv(1, 1, 1, 0, Norm::None, 0.5f, Act::Sigmoid)}};
    c.classifier = {"classifier",
                    {K::conv(256, 1, 1, 0, Norm::None, 0.0f, Act::LeakyRelu),
                     K::conv(10, 1, 1, 0, Norm::None, 0.0f, Act::Linear)}};
    return c;
}

ModelConfig ModelConfig::by_name(const std::string& name) {
    if (name == "mnist-small") return mnist_small();
    if (name == "toy-2d") return toy2d();
    if (name == "paper-celeba-shapes") return paper_celeba_shapes();
    throw ConfigError("unknown model config: " + name);
}

void ModelConfig::validate() const {
    check_kernel_net(enc_z1, data_chw, z1_chw);
    check_kernel_net(enc_z2, z1_chw, z2_chw);
    check_kernel_net(dec_z1, z2_chw, z1_chw);
    check_kernel_net(dec_x, z1_chw, data_chw);

    Shape dx = chain_shape(disc_x, data_chw);
    if (dx[1] != z1_chw[1] || dx[2] != z1_chw[2])
        throw ConfigError("disc_x: output " + shape_str(dx) + " cannot concatenate with z1 " + shape_str(z1_chw));
    Shape dxz1_in{dx[0] + z1_chw[0], dx[1], dx[2]};
    Shape dxz1 = chain_shape(disc_xz1, dxz1_in);
    if (dxz1[1] != z2_chw[1] || dxz1[2] != z2_chw[2])
        throw ConfigError("disc_xz1: output " + shape_str(dxz1) + " cannot concatenate with z2 " +
                          shape_str(z2_chw));
    Shape dxz2_in{dxz1[0] + z2_chw[0], dxz1[1], dxz1[2]};
    if (disc_xz2.rows.size() < 2) throw ConfigError("disc_xz2: needs an embedding row before the sigmoid row");
    Shape dout = chain_shape(disc_xz2, dxz2_in);
    const LayerCfg& last = disc_xz2.rows.back();
    if (last.kind != K::Kind::Conv || last.out_channels != 1 || last.act != Act::Sigmoid)
        throw ConfigError("disc_xz2: final row must be a 1-channel sigmoid conv");
    if (dout != Shape{1, 1, 1})
        throw ConfigError("disc_xz2: discriminator must end at 1x1x1, got " + shape_str(dout));

    Shape cls = chain_shape(classifier, z2_chw);
    if (cls != Shape{classes, 1, 1})
        throw ConfigError("classifier: must end at {classes,1,1}, got " + shape_str(cls));

    if (levels != 2) throw ConfigError("shipped configs use two latent levels");
}

HierarchySpec ModelConfig::hierarchy_spec() const {
    HierarchySpec s;
    s.levels = levels;
    s.data_chw = data_chw;
    s.latent_chw = {z1_chw, z2_chw};
    s.validate();
    return s;
}

int ModelConfig::embedding_channels() const {
    const LayerCfg& row = disc_xz2.rows[disc_xz2.rows.size() - 2];
    return row.out_channels;
}

HaliModel build_networks(const ModelConfig& cfg, SeededRng& rng) {
    cfg.validate();
    HaliModel m;
    m.cfg = cfg;
    m.spec = cfg.hierarchy_spec();

    m.h.enc.push_back(build_kernel(cfg.enc_z1, cfg.data_chw, cfg.leaky_slope, rng));
    m.h.enc.push_back(build_kernel(cfg.enc_z2, cfg.z1_chw, cfg.leaky_slope, rng));
    // dec[0]: z1 -> x, dec[1]: z2 -> z1
    m.h.dec.push_back(build_kernel(cfg.dec_x, cfg.z1_chw, cfg.leaky_slope, rng));
    m.h.dec.push_back(build_kernel(cfg.dec_z1, cfg.z2_chw, cfg.leaky_slope, rng));

    Shape dx = chain_shape(cfg.disc_x, cfg.data_chw);
    Shape dxz1_in{dx[0] + cfg.z1_chw[0], dx[1], dx[2]};
    Shape dxz1 = chain_shape(cfg.disc_xz1, dxz1_in);
    Shape dxz2_in{dxz1[0] + cfg.z2_chw[0], dxz1[1], dxz1[2]};

    m.disc.sx = build_stage(cfg.disc_x.name, cfg.data_chw, cfg.disc_x.rows, cfg.leaky_slope, rng);
    m.disc.sxz1 = build_stage(cfg.disc_xz1.name, dxz1_in, cfg.disc_xz1.rows, cfg.leaky_slope, rng);
    std::vector<LayerCfg> body_rows(cfg.disc_xz2.rows.begin(), cfg.disc_xz2.rows.end() - 1);
    m.disc.sxz2_body = build_stage(cfg.disc_xz2.name, dxz2_in, body_rows, cfg.leaky_slope, rng);
    Stage out_stage = build_stage(cfg.disc_xz2.name + ".out", m.disc.sxz2_body.out_chw,
                                  {cfg.disc_xz2.rows.back()}, cfg.leaky_slope, rng);
    m.disc.out = out_stage.blocks.front();
    m.disc.input_noise = cfg.disc_input_noise;

    m.cls.body = build_stage(cfg.classifier.name, cfg.z2_chw, cfg.classifier.rows, cfg.leaky_slope, rng);
    return m;
}

DiscriminatorOutput discriminator_forward(const Discriminator& d, const Tensor& x, const Tensor& z1,
                                          const Tensor& z2, Mode mode, SeededRng& rng) {
    Tensor xn = add_gaussian_noise(x, d.input_noise, mode, rng);
    Tensor z1n = add_gaussian_noise(z1, d.input_noise, mode, rng);
    Tensor z2n = add_gaussian_noise(z2, d.input_noise, mode, rng);

    Tensor hx = stage_forward(d.sx, xn, mode, rng);
    Tensor h1 = stage_forward(d.sxz1, concat_channels(hx, z1n), mode, rng);
    Tensor emb = stage_forward(d.sxz2_body, concat_channels(h1, z2n), mode, rng);

    Stage out_stage{"disc_out", d.sxz2_body.out_chw, {1, 1, 1}, {d.out}, d.sx.leaky_slope};
    Tensor rho_map = stage_forward(out_stage, emb, mode, rng);

    DiscriminatorOutput out;
    out.rho = reshape(rho_map, {rho_map.dim(0)});
    out.embedding = reshape(emb, {emb.dim(0), static_cast<int>(emb.numel() / emb.dim(0))});
    return out;
}

Tensor classifier_forward(const Classifier& c, const Tensor& z_top, Mode mode, SeededRng& rng) {
    Tensor logits = stage_forward(c.body, z_top, mode, rng);
    Tensor probs = softmax_channels(logits);
    return reshape(probs, {probs.dim(0), probs.dim(1)});
}

namespace {
void collect_kernel(const GaussianKernel& k, std::vector<NamedTensor>& params) { collect_params(k.trunk, params); }
void collect_kernel_state(const GaussianKernel& k, std::vector<NamedTensor>& st) { collect_state(k.trunk, st); }
} // namespace

std::vector<NamedTensor> HaliModel::generator_params() const {
    std::vector<NamedTensor> p;
    for (const auto& k : h.enc) collect_kernel(k, p);
    for (const auto& k : h.dec) collect_kernel(k, p);
    collect_params(cls.body, p);
    return p;
}

std::vector<NamedTensor> HaliModel::discriminator_params() const {
    std::vector<NamedTensor> p;
    collect_params(disc.sx, p);
    collect_params(disc.sxz1, p);
    collect_params(disc.sxz2_body, p);
    Stage tmp{"disc_xz2.out", {}, {}, {disc.out}, 0.2f};
    collect_params(tmp, p);
    return p;
}

std::vector<NamedTensor> HaliModel::all_params() const {
    std::vector<NamedTensor> p = generator_params();
    std::vector<NamedTensor> d = discriminator_params();
    p.insert(p.end(), d.begin(), d.end());
    return p;
}

std::vector<NamedTensor> HaliModel::all_state() const {
    std::vector<NamedTensor> s;
    for (const auto& k : h.enc) collect_kernel_state(k, s);
    for (const auto& k : h.dec) collect_kernel_state(k, s);
    collect_state(cls.body, s);
    collect_state(disc.sx, s);
    collect_state(disc.sxz1, s);
    collect_state(disc.sxz2_body, s);
    return s;
}

} // namespace hali
