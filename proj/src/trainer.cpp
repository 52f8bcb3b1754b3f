#include "hali/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace hali {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {
void check_prob_batch(const Tensor& t, const char* what) {
    if (t.shape().size() != 1) throw ShapeError("rank", std::string(what) + ": expected a {N} probability batch");
}
} // namespace

Tensor discriminator_loss(const Tensor& rho_q, const Tensor& rho_p) {
    check_prob_batch(rho_q, "discriminator_loss");
    check_prob_batch(rho_p, "discriminator_loss");
    Tensor a = mean_all(log_clamped(rho_q, kLossLogClamp));
    Tensor b = mean_all(log_clamped(affine(rho_p, -1.0f, 1.0f), kLossLogClamp));
    return affine(add(a, b), -1.0f, 0.0f);
}

Tensor generator_loss(const Tensor& rho_q, const Tensor& rho_p) {
    check_prob_batch(rho_q, "generator_loss");
    check_prob_batch(rho_p, "generator_loss");
    Tensor a = mean_all(log_clamped(affine(rho_q, -1.0f, 1.0f), kLossLogClamp));
    Tensor b = mean_all(log_clamped(rho_p, kLossLogClamp));
    return affine(add(a, b), -1.0f, 0.0f);
}

Tensor supervised_loss(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.shape().size() != 2) throw ShapeError("rank", "supervised_loss: expected probabilities {N,K}");
    Tensor picked = gather_channel(probs, labels);
    return affine(mean_all(log_clamped(picked, kLossLogClamp)), -1.0f, 0.0f);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamState::init(const std::vector<NamedTensor>& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& p : params) {
        m.emplace_back(static_cast<size_t>(p.t.numel()), 0.0f);
        v.emplace_back(static_cast<size_t>(p.t.numel()), 0.0f);
    }
}

void adam_update(std::vector<NamedTensor>& params, AdamState& state, const AdamHyper& hp) {
    if (state.m.size() != params.size())
        throw ArgumentError("adam_update: optimizer state sized for " + std::to_string(state.m.size()) +
                            " tensors, got " + std::to_string(params.size()));
    state.t += 1;
    float bc1 = 1.0f - std::pow(hp.beta1, static_cast<float>(state.t));
    float bc2 = 1.0f - std::pow(hp.beta2, static_cast<float>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].t;
        auto& m = state.m[i];
        auto& v = state.v[i];
        auto w = p.data();
        const float* g = p.has_grad() ? p.impl()->grad.data() : nullptr;
        for (size_t j = 0; j < m.size(); ++j) {
            float gj = g ? g[j] : 0.0f;
            m[j] = hp.beta1 * m[j] + (1.0f - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0f - hp.beta2) * gj * gj;
            float mhat = m[j] / bc1;
            float vhat = v[j] / bc2;
            w[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

std::string metrics_csv_header() {
    return "step,l_d,l_g,l_sup,rho_q,rho_p,recon_l1,recon_l2,dc_l1,dc_l2";
}

namespace {
std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
} // namespace

std::string metrics_csv_row(const MetricsRecord& r) {
    std::string row = std::to_string(r.step);
    row += "," + fmt_g(r.l_d) + "," + fmt_g(r.l_g) + ",";
    row += r.has_sup ? fmt_g(r.l_sup) : std::string();
    row += "," + fmt_g(r.rho_q) + "," + fmt_g(r.rho_p);
    if (r.has_eval) {
        row += "," + fmt_g(r.recon_l1) + "," + fmt_g(r.recon_l2);
        row += "," + fmt_g(r.dc_l1) + "," + fmt_g(r.dc_l2);
    } else {
        row += ",,,,";
    }
    return row;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

namespace {

uint32_t crc32_bytes(const uint8_t* p, size_t len) {
    static uint32_t table[256];
    static bool built = false;
    if (!built) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            table[i] = c;
        }
        built = true;
    }
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<uint8_t> bytes;
    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f32s(std::span<const float> v) {
        size_t off = bytes.size();
        bytes.resize(off + v.size() * 4);
        std::memcpy(bytes.data() + off, v.data(), v.size() * 4);
    }
    void str(const std::string& s) {
        u16(static_cast<uint16_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
};

struct ByteReader {
    const uint8_t* p;
    size_t len;
    size_t off = 0;
    void need(size_t n) const {
        if (off + n > len) throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint ends mid-record");
    }
    uint8_t u8() {
        need(1);
        return p[off++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[off] | (p[off + 1] << 8));
        off += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    void f32s(std::span<float> out) {
        need(out.size() * 4);
        std::memcpy(out.data(), p + off, out.size() * 4);
        off += out.size() * 4;
    }
    std::string str() {
        uint16_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
};

constexpr uint32_t kCheckpointVersion = 1;

void write_tensor_list(ByteWriter& w, const std::vector<NamedTensor>& list) {
    w.u32(static_cast<uint32_t>(list.size()));
    for (const auto& nt : list) {
        w.str(nt.name);
        w.u8(static_cast<uint8_t>(nt.t.shape().size()));
        for (int d : nt.t.shape()) w.u32(static_cast<uint32_t>(d));
        w.f32s(nt.t.data());
    }
}

void read_tensor_list(ByteReader& r, std::vector<NamedTensor>& list) {
    uint32_t n = r.u32();
    if (n != list.size())
        throw ConfigError("checkpoint holds " + std::to_string(n) + " tensors, model expects " +
                          std::to_string(list.size()));
    for (auto& nt : list) {
        std::string name = r.str();
        if (name != nt.name) throw ConfigError("checkpoint tensor '" + name + "' does not match model '" + nt.name + "'");
        uint8_t rank = r.u8();
        Shape s(rank);
        for (auto& d : s) d = static_cast<int>(r.u32());
        if (s != nt.t.shape()) throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(s) +
                                                 ", model expects " + shape_str(nt.t.shape()));
        r.f32s(nt.t.data());
    }
}

void write_adam(ByteWriter& w, const AdamState& st) {
    w.i64(st.t);
    w.u32(static_cast<uint32_t>(st.m.size()));
    for (size_t i = 0; i < st.m.size(); ++i) {
        w.f32s(st.m[i]);
        w.f32s(st.v[i]);
    }
}

void read_adam(ByteReader& r, AdamState& st) {
    st.t = r.i64();
    uint32_t n = r.u32();
    if (n != st.m.size())
        throw ConfigError("checkpoint optimizer state holds " + std::to_string(n) + " tensors, model expects " +
                          std::to_string(st.m.size()));
    for (size_t i = 0; i < st.m.size(); ++i) {
        r.f32s(st.m[i]);
        r.f32s(st.v[i]);
    }
}

} // namespace

void checkpoint_save(const std::string& path, const HaliModel& model, const AdamState& disc_state,
                     const AdamState& gen_state, const SeededRng& rng, int64_t step, uint64_t config_digest) {
    ByteWriter w;
    w.bytes.insert(w.bytes.end(), {'H', 'A', 'L', 'I'});
    w.u32(kCheckpointVersion);
    size_t size_field = w.bytes.size();
    w.u64(0); // total size, patched below
    w.u64(config_digest);
    w.i64(step);
    SeededRng::State rs = rng.save();
    w.u64(rs.state);
    w.u64(rs.inc);

    std::vector<NamedTensor> params = model.all_params();
    std::vector<NamedTensor> state = model.all_state();
    write_tensor_list(w, params);
    write_tensor_list(w, state);
    write_adam(w, disc_state);
    write_adam(w, gen_state);

    uint64_t total = w.bytes.size() + 4;
    for (int i = 0; i < 8; ++i) w.bytes[size_field + i] = static_cast<uint8_t>(total >> (8 * i));
    uint32_t crc = crc32_bytes(w.bytes.data(), w.bytes.size());
    w.u32(crc);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<long>(w.bytes.size()));
    if (!os) throw IoError("short write on checkpoint: " + path);
}

CheckpointInfo checkpoint_load(const std::string& path, HaliModel& model, AdamState& disc_state,
                               AdamState& gen_state, SeededRng& rng, uint64_t expected_digest) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), "HALI", 4) != 0)
        throw CheckpointError(CheckpointError::Kind::BadMagic, "not a HALI checkpoint: " + path);
    ByteReader r{bytes.data(), bytes.size(), 4};
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                              "checkpoint format version " + std::to_string(version) + ", expected " +
                                  std::to_string(kCheckpointVersion));
    uint64_t total = r.u64();
    if (bytes.size() < total)
        throw CheckpointError(CheckpointError::Kind::Truncated,
                              "checkpoint declares " + std::to_string(total) + " bytes, file has " +
                                  std::to_string(bytes.size()));
    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) stored_crc |= static_cast<uint32_t>(bytes[total - 4 + i]) << (8 * i);
    if (crc32_bytes(bytes.data(), total - 4) != stored_crc)
        throw CheckpointError(CheckpointError::Kind::ChecksumMismatch, "checkpoint checksum mismatch: " + path);

    CheckpointInfo info;
    info.config_digest = r.u64();
    if (expected_digest != 0 && info.config_digest != expected_digest)
        throw CheckpointError(CheckpointError::Kind::DigestMismatch,
                              "checkpoint was written under a different configuration");
    info.step = r.i64();
    SeededRng::State rs;
    rs.state = r.u64();
    rs.inc = r.u64();
    rng.restore(rs);

    std::vector<NamedTensor> params = model.all_params();
    std::vector<NamedTensor> state = model.all_state();
    read_tensor_list(r, params);
    read_tensor_list(r, state);
    read_adam(r, disc_state);
    read_adam(r, gen_state);
    return info;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch < 2) throw ConfigError("train config: batch must be >= 2 (batch norm needs batch statistics)");
    if (steps < 1) throw ConfigError("train config: steps must be >= 1");
    if (!(adam.lr > 0.0f)) throw ConfigError("train config: learning rate must be positive");
    if (labeled_per_class < 0) throw ConfigError("train config: labeled_per_class must be >= 0");
    if (log_every < 1) throw ConfigError("train config: log_every must be >= 1");
}

Trainer::Trainer(HaliModel& model, const TrainConfig& cfg, const data::Dataset& data)
    : model_(model), cfg_(cfg), data_(data), rng_(cfg.seed, 0x7a11) {
    cfg_.validate();
    gen_params_ = model_.generator_params();
    disc_params_ = model_.discriminator_params();
    g_state_.init(gen_params_);
    d_state_.init(disc_params_);
    if (cfg_.labeled_per_class > 0)
        labeled_idx_ = data::semisup_split(data_.train_labels, cfg_.labeled_per_class, data_.classes, cfg_.seed);
    int n_eval = std::min<int>(cfg_.eval_batch, data_.val_images.dim(0));
    if (n_eval > 0) {
        std::vector<int> idx(static_cast<size_t>(n_eval));
        for (int i = 0; i < n_eval; ++i) idx[static_cast<size_t>(i)] = i;
        eval_batch_ = gather_images(data_.val_images, idx);
    }
}

Tensor Trainer::gather_images(const Tensor& images, const std::vector<int>& idx) const {
    const Shape& s = images.shape();
    size_t stride = static_cast<size_t>(images.numel() / s[0]);
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), s[1], s[2], s[3]});
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data().data() + i * stride, images.data().data() + static_cast<size_t>(idx[i]) * stride,
                    stride * sizeof(float));
    return out;
}

MetricsRecord Trainer::step() {
    const int m = cfg_.batch;
    const int n_train = data_.train_images.dim(0);

    std::vector<int> idx(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(rng_.below(static_cast<uint32_t>(n_train)));
    Tensor x = gather_images(data_.train_images, idx);

    MetricsRecord rec;
    rec.step = step_ + 1;

    auto abort_nonfinite = [&](const char* which) {
        if (!cfg_.out_dir.empty()) {
            fs::create_directories(cfg_.out_dir);
            checkpoint_save((fs::path(cfg_.out_dir) / "diagnostic.ckpt").string(), model_, d_state_, g_state_,
                            rng_, step_, cfg_.config_digest);
        }
        throw TrainError(std::string("non-finite ") + which + " at step " + std::to_string(step_ + 1));
    };

    // ---- discriminator update; the chains run unrecorded so no generator
    // gradient can exist in this phase
    {
        LatentSample enc_s = encoder_chain_sample(model_.spec, model_.h, x, Mode::Train, rng_);
        LatentSample dec_s = decoder_chain_sample(model_.spec, model_.h, Tensor(), Mode::Train, rng_, m);

        Tape tape;
        DiscriminatorOutput dq = discriminator_forward(model_.disc, x, enc_s.z[0], enc_s.z[1], Mode::Train, rng_);
        DiscriminatorOutput dp =
            discriminator_forward(model_.disc, dec_s.x, dec_s.z[0], dec_s.z[1], Mode::Train, rng_);
        Tensor ld = discriminator_loss(dq.rho, dp.rho);
        if (!all_finite(ld)) abort_nonfinite("discriminator loss");
        rec.l_d = ld.item();
        double sq = 0, sp = 0;
        for (float v : dq.rho.data()) sq += v;
        for (float v : dp.rho.data()) sp += v;
        rec.rho_q = sq / m;
        rec.rho_p = sp / m;
        tape.backward(ld);
        adam_update(disc_params_, d_state_, cfg_.adam);
    }

    // ---- generator update (encoder + decoder + classifier head)
    {
        Tape tape;
        LatentSample enc_s = encoder_chain_sample(model_.spec, model_.h, x, Mode::Train, rng_);
        LatentSample dec_s = decoder_chain_sample(model_.spec, model_.h, Tensor(), Mode::Train, rng_, m);
        DiscriminatorOutput dq = discriminator_forward(model_.disc, x, enc_s.z[0], enc_s.z[1], Mode::Train, rng_);
        DiscriminatorOutput dp =
            discriminator_forward(model_.disc, dec_s.x, dec_s.z[0], dec_s.z[1], Mode::Train, rng_);
        Tensor lg = generator_loss(dq.rho, dp.rho);
        Tensor total = lg;
        if (!labeled_idx_.empty()) {
            int lb = std::min<int>(cfg_.labeled_batch, static_cast<int>(labeled_idx_.size()));
            std::vector<int> lidx(static_cast<size_t>(lb));
            std::vector<int> labels(static_cast<size_t>(lb));
            for (int i = 0; i < lb; ++i) {
                int pick = labeled_idx_[rng_.below(static_cast<uint32_t>(labeled_idx_.size()))];
                lidx[static_cast<size_t>(i)] = pick;
                labels[static_cast<size_t>(i)] = data_.train_labels[static_cast<size_t>(pick)];
            }
            Tensor xl = gather_images(data_.train_images, lidx);
            LatentSample ls = encoder_chain_sample(model_.spec, model_.h, xl, Mode::Train, rng_);
            Tensor probs = classifier_forward(model_.cls, ls.z.back(), Mode::Train, rng_);
            Tensor lsup = supervised_loss(probs, labels);
            rec.l_sup = lsup.item();
            rec.has_sup = true;
            total = add(lg, affine(lsup, cfg_.lambda_sup, 0.0f));
        }
        if (!all_finite(total)) abort_nonfinite("generator loss");
        rec.l_g = lg.item();
        tape.backward(total);
        adam_update(gen_params_, g_state_, cfg_.adam);
    }

    step_ += 1;
    return rec;
}

void Trainer::fill_eval_metrics(MetricsRecord& r) {
    if (!eval_batch_.defined()) return;
    SeededRng eval_rng(cfg_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(step_ + 1)), 0xEA71);
    r.recon_l1 = reconstruction_error(model_.spec, model_.h, 1, eval_batch_, eval_rng, 1);
    r.recon_l2 = reconstruction_error(model_.spec, model_.h, 2, eval_batch_, eval_rng, 1);
    Tensor x1 = latent::reconstruct_at_level(model_, eval_batch_, 1, latent::SampleMode::Mean, nullptr);
    Tensor x2 = latent::reconstruct_at_level(model_, eval_batch_, 2, latent::SampleMode::Mean, nullptr);
    std::vector<double> d1 = latent::dc_distance(model_, eval_batch_, x1);
    std::vector<double> d2 = latent::dc_distance(model_, eval_batch_, x2);
    double s1 = 0, s2 = 0;
    for (double v : d1) s1 += v;
    for (double v : d2) s2 += v;
    r.dc_l1 = s1 / static_cast<double>(d1.size());
    r.dc_l2 = s2 / static_cast<double>(d2.size());
    r.has_eval = true;
}

void Trainer::run(const std::function<void(const MetricsRecord&)>& on_log) {
    std::ofstream csv;
    if (!cfg_.out_dir.empty()) {
        fs::create_directories(cfg_.out_dir);
        bool fresh = (step_ == 0);
        csv.open((fs::path(cfg_.out_dir) / "metrics.csv").string(),
                 fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw IoError("cannot open metrics.csv under " + cfg_.out_dir);
        if (fresh) csv << metrics_csv_header() << "\n";
    }

    while (step_ < cfg_.steps) {
        auto t0 = std::chrono::steady_clock::now();
        MetricsRecord r = step();
        r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool log_now = (step_ % cfg_.log_every == 0) || (step_ == cfg_.steps);
        if (log_now) {
            fill_eval_metrics(r);
            history_.push_back(r);
            if (csv.is_open()) csv << metrics_csv_row(r) << "\n";
            if (on_log) on_log(r);
        }
        if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && !cfg_.out_dir.empty()) {
            save_checkpoint((fs::path(cfg_.out_dir) / ("checkpoint-" + std::to_string(step_) + ".ckpt")).string());
        }
    }
    if (!cfg_.out_dir.empty()) {
        save_checkpoint((fs::path(cfg_.out_dir) / "final.ckpt").string());
        csv.flush();
    }
}

uint64_t Trainer::state_digest() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& group : {std::cref(gen_params_), std::cref(disc_params_)})
        for (const auto& nt : group.get())
            h = data::fnv1a(nt.t.data().data(), nt.t.data().size() * sizeof(float), h);
    for (const auto* st : {&g_state_, &d_state_}) {
        h = data::fnv1a(&st->t, sizeof(st->t), h);
        for (size_t i = 0; i < st->m.size(); ++i) {
            h = data::fnv1a(st->m[i].data(), st->m[i].size() * sizeof(float), h);
            h = data::fnv1a(st->v[i].data(), st->v[i].size() * sizeof(float), h);
        }
    }
    SeededRng::State rs = rng_.save();
    h = data::fnv1a(&rs, sizeof(rs), h);
    return h;
}

void Trainer::save_checkpoint(const std::string& path) const {
    checkpoint_save(path, model_, d_state_, g_state_, rng_, step_, cfg_.config_digest);
}

void Trainer::load_checkpoint(const std::string& path) {
    CheckpointInfo info = checkpoint_load(path, model_, d_state_, g_state_, rng_, cfg_.config_digest);
    step_ = info.step;
}

double Trainer::evaluate_test_error(int* error_count) const {
    const Tensor& images = data_.test_images;
    const auto& labels = data_.test_labels;
    int n = images.dim(0);
    int errors = 0;
    const int chunk = 250;
    for (int begin = 0; begin < n; begin += chunk) {
        int end = std::min(n, begin + chunk);
        std::vector<int> idx(static_cast<size_t>(end - begin));
        for (int i = begin; i < end; ++i) idx[static_cast<size_t>(i - begin)] = i;
        Tensor xb = gather_images(images, idx);
        std::vector<Tensor> z = latent::encode_means(model_, xb);
        SeededRng tmp(0, 0);
        Tensor probs = classifier_forward(model_.cls, z.back(), Mode::Eval, tmp);
        std::vector<int> pred = argmax_channel(probs);
        for (int i = begin; i < end; ++i)
            if (pred[static_cast<size_t>(i - begin)] != labels[static_cast<size_t>(i)]) ++errors;
    }
    if (error_count) *error_count = errors;
    return static_cast<double>(errors) / static_cast<double>(n);
}

} // namespace hali
