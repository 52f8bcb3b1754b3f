#include "hali/checks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "hali/finite.hpp"
#include "hali/gradcheck.hpp"
#include "hali/kernels.hpp"
#include "hali/networks.hpp"
#include "hali/trainer.hpp"

namespace hali::checks {

namespace {

constexpr double kGradBound = 1e-3;

Tensor rand_unit(Shape s, SeededRng& rng, bool grad = true) {
    Tensor t = Tensor::zeros(std::move(s), grad);
    rng.fill_uniform(t.data(), -2.0f, 2.0f);
    return t;
}

// keeps leaky-relu inputs away from the kink so central differences stay valid
Tensor rand_off_zero(Shape s, SeededRng& rng) {
    Tensor t = Tensor::zeros(std::move(s), true);
    for (float& v : t.data()) {
        float mag = 0.2f + 1.8f * rng.next_float();
        v = (rng.next_float() < 0.5f) ? -mag : mag;
    }
    return t;
}

CheckResult grad_result(const std::string& name, const gradcheck::FdReport& rep) {
    CheckResult r;
    r.name = name;
    r.statistic = rep.max_err;
    r.bound = kGradBound;
    r.margin = r.bound - r.statistic;
    r.pass = r.statistic < r.bound;
    return r;
}

ref::DTensor dt(const Tensor& t) { return ref::from_tensor(t); }

} // namespace

std::vector<CheckResult> gradient_suite(uint64_t seed) {
    std::vector<CheckResult> out;
    SeededRng rng(seed, 11);

    // conv2d: the 2x3x8x8 stride-2 case plus a stride-1 valid case
    {
        Tensor x = rand_unit({2, 3, 8, 8}, rng);
        Tensor w = rand_unit({4, 3, 3, 3}, rng);
        Tensor b = rand_unit({4}, rng);
        auto f = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2, 1); };
        auto r = [](const std::vector<Tensor>& in) { return ref::conv2d(dt(in[0]), dt(in[1]), dt(in[2]), 2, 1); };
        out.push_back(grad_result("gradcheck/conv2d_s2p1", gradcheck::check(f, r, {x, w, b})));
    }
    {
        Tensor x = rand_unit({2, 2, 5, 5}, rng);
        Tensor w = rand_unit({3, 2, 3, 3}, rng);
        Tensor b = rand_unit({3}, rng);
        auto f = [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1, 0); };
        auto r = [](const std::vector<Tensor>& in) { return ref::conv2d(dt(in[0]), dt(in[1]), dt(in[2]), 1, 0); };
        out.push_back(grad_result("gradcheck/conv2d_s1p0", gradcheck::check(f, r, {x, w, b})));
    }

    // bilinear upsample
    {
        Tensor x = rand_unit({2, 2, 3, 3}, rng);
        auto f = [](const std::vector<Tensor>& in) { return bilinear_upsample(in[0], 2); };
        auto r = [](const std::vector<Tensor>& in) { return ref::bilinear_upsample(dt(in[0]), 2); };
        out.push_back(grad_result("gradcheck/bilinear_upsample", gradcheck::check(f, r, {x})));
    }

    // batch norm, train and eval, on the 4x3x2x2 case
    {
        Tensor x = rand_unit({4, 3, 2, 2}, rng);
        Tensor gamma = rand_off_zero({3}, rng);
        Tensor beta = rand_unit({3}, rng);
        auto f_train = [](const std::vector<Tensor>& in) {
            BatchNormState st(3);
            return batch_norm(in[0], in[1], in[2], Mode::Train, st);
        };
        auto r_train = [](const std::vector<Tensor>& in) {
            return ref::batch_norm_train(dt(in[0]), dt(in[1]), dt(in[2]));
        };
        out.push_back(grad_result("gradcheck/batch_norm_train", gradcheck::check(f_train, r_train, {x, gamma, beta})));

        auto stats = [seed]() {
            BatchNormState st(3);
            SeededRng r2(seed, 5);
            r2.fill_uniform(st.running_mean.data(), -0.5f, 0.5f);
            r2.fill_uniform(st.running_var.data(), 0.5f, 1.5f);
            return st;
        };
        auto f_eval = [stats](const std::vector<Tensor>& in) {
            BatchNormState st = stats();
            return batch_norm(in[0], in[1], in[2], Mode::Eval, st);
        };
        auto r_eval = [stats](const std::vector<Tensor>& in) {
            BatchNormState st = stats();
            return ref::batch_norm_eval(dt(in[0]), dt(in[1]), dt(in[2]), dt(st.running_mean), dt(st.running_var));
        };
        out.push_back(grad_result("gradcheck/batch_norm_eval", gradcheck::check(f_eval, r_eval, {x, gamma, beta})));
    }

    // weight norm
    {
        Tensor v = rand_off_zero({4, 6}, rng);
        Tensor g = rand_off_zero({4}, rng);
        auto f = [](const std::vector<Tensor>& in) { return weight_norm(in[0], in[1]); };
        auto r = [](const std::vector<Tensor>& in) { return ref::weight_norm(dt(in[0]), dt(in[1])); };
        out.push_back(grad_result("gradcheck/weight_norm", gradcheck::check(f, r, {v, g})));
    }

    // activations
    {
        Tensor x = rand_off_zero({3, 7}, rng);
        auto mk = [&out, &x](const char* name, Act a) {
            auto f = [a](const std::vector<Tensor>& in) { return activation(in[0], a, 0.2f); };
            auto r = [a](const std::vector<Tensor>& in) { return ref::activation(dt(in[0]), a, 0.2); };
            out.push_back(grad_result(name, gradcheck::check(f, r, {x.clone()})));
        };
        mk("gradcheck/leaky_relu", Act::LeakyRelu);
        mk("gradcheck/tanh", Act::Tanh);
        mk("gradcheck/sigmoid", Act::Sigmoid);
    }
    {
        Tensor x = rand_unit({3, 5, 1, 1}, rng);
        auto f = [](const std::vector<Tensor>& in) { return softmax_channels(in[0]); };
        auto r = [](const std::vector<Tensor>& in) { return ref::softmax_channels(dt(in[0])); };
        out.push_back(grad_result("gradcheck/softmax", gradcheck::check(f, r, {x})));
    }

    // stochastic ops under frozen seeds
    {
        Tensor x = rand_unit({4, 6}, rng);
        auto f_drop = [seed](const std::vector<Tensor>& in) {
            SeededRng r2(seed, 21);
            return dropout(in[0], 0.7f, Mode::Train, r2);
        };
        auto r_drop = [seed](const std::vector<Tensor>& in) {
            SeededRng r2(seed, 21);
            return ref::dropout(dt(in[0]), 0.7, r2);
        };
        out.push_back(grad_result("gradcheck/dropout", gradcheck::check(f_drop, r_drop, {x})));

        auto f_noise = [seed](const std::vector<Tensor>& in) {
            SeededRng r2(seed, 22);
            return add_gaussian_noise(in[0], 0.3f, Mode::Train, r2);
        };
        auto r_noise = [seed](const std::vector<Tensor>& in) {
            SeededRng r2(seed, 22);
            return ref::add_noise(dt(in[0]), 0.3, r2);
        };
        out.push_back(grad_result("gradcheck/gaussian_noise", gradcheck::check(f_noise, r_noise, {x.clone()})));
    }

    // elementwise composite: softplus, log, div, square
    {
        Tensor a = rand_off_zero({3, 4}, rng);
        Tensor b = rand_off_zero({3, 4}, rng);
        auto f = [](const std::vector<Tensor>& in) {
            Tensor sp = affine(softplus(in[1]), 1.0f, 0.1f); // positive denominator
            Tensor q = div(square(in[0]), sp);
            return add(q, log_clamped(sp, 1e-9f));
        };
        auto r = [](const std::vector<Tensor>& in) {
            ref::DTensor sp = ref::affine(ref::softplus(dt(in[1])), 1.0, 0.1);
            ref::DTensor q = ref::div(ref::square(dt(in[0])), sp);
            return ref::add(q, ref::log_clamped(sp, 1e-9));
        };
        out.push_back(grad_result("gradcheck/elementwise_chain", gradcheck::check(f, r, {a, b})));
    }

    // reparameterized gaussian log-density wrt value, mean and raw scale
    {
        Tensor value = rand_unit({2, 3, 2, 2}, rng);
        Tensor mean = rand_unit({2, 3, 2, 2}, rng);
        Tensor raw = rand_unit({2, 3, 2, 2}, rng);
        auto f = [](const std::vector<Tensor>& in) {
            Tensor sigma = affine(softplus(in[2]), 1.0f, kSigmaFloor);
            return gaussian_log_density(in[1], sigma, in[0]);
        };
        auto r = [](const std::vector<Tensor>& in) {
            ref::DTensor sigma = ref::affine(ref::softplus(dt(in[2])), 1.0, static_cast<double>(kSigmaFloor));
            return ref::gaussian_log_density(dt(in[1]), sigma, dt(in[0]));
        };
        out.push_back(grad_result("gradcheck/gaussian_log_density", gradcheck::check(f, r, {value, mean, raw})));
    }

    // end-to-end toy model: discriminator loss wrt discriminator parameters,
    // generator loss wrt encoder/decoder parameters; smaller step keeps the
    // probes clear of leaky-relu kinks
    {
        SeededRng build_rng(seed, 31);
        ModelConfig cfg = ModelConfig::toy2d();
        HaliModel model = build_networks(cfg, build_rng);
        Tensor x = Tensor::zeros({4, 2, 1, 1});
        SeededRng xr(seed, 32);
        xr.fill_uniform(x.data(), -1.0f, 1.0f);

        auto f_disc = [&model, &x, seed](const std::vector<Tensor>&) {
            SeededRng r2(seed, 33);
            LatentSample es = encoder_chain_sample(model.spec, model.h, x, Mode::Train, r2);
            Tensor z1 = es.z[0].detached();
            Tensor z2 = es.z[1].detached();
            LatentSample ds = decoder_chain_sample(model.spec, model.h, Tensor(), Mode::Train, r2, 4);
            Tensor xp = ds.x.detached();
            Tensor z1p = ds.z[0].detached();
            Tensor z2p = ds.z[1].detached();
            DiscriminatorOutput dq = discriminator_forward(model.disc, x, z1, z2, Mode::Train, r2);
            DiscriminatorOutput dp = discriminator_forward(model.disc, xp, z1p, z2p, Mode::Train, r2);
            return discriminator_loss(dq.rho, dp.rho);
        };
        auto r_disc = [&model, &x, seed](const std::vector<Tensor>&) {
            SeededRng r2(seed, 33);
            ref::ChainSample es = ref::encoder_chain_sample(model.spec, model.h, dt(x), Mode::Train, r2);
            ref::ChainSample ds = ref::decoder_chain_sample(model.spec, model.h, Mode::Train, r2, 4);
            ref::DiscOut dq = ref::discriminator_forward(model.disc, dt(x), es.z[0], es.z[1], Mode::Train, r2);
            ref::DiscOut dp = ref::discriminator_forward(model.disc, ds.x, ds.z[0], ds.z[1], Mode::Train, r2);
            ref::DTensor l({1});
            l.data[0] = ref::discriminator_loss(dq.rho, dp.rho);
            return l;
        };
        std::vector<Tensor> dparams;
        for (auto& nt : model.discriminator_params()) dparams.push_back(nt.t);
        out.push_back(
            grad_result("gradcheck/discriminator_end_to_end", gradcheck::check(f_disc, r_disc, dparams, 1e-6)));

        auto f_gen = [&model, &x, seed](const std::vector<Tensor>&) {
            SeededRng r2(seed, 34);
            LatentSample es = encoder_chain_sample(model.spec, model.h, x, Mode::Train, r2);
            LatentSample ds = decoder_chain_sample(model.spec, model.h, Tensor(), Mode::Train, r2, 4);
            DiscriminatorOutput dq = discriminator_forward(model.disc, x, es.z[0], es.z[1], Mode::Train, r2);
            DiscriminatorOutput dp = discriminator_forward(model.disc, ds.x, ds.z[0], ds.z[1], Mode::Train, r2);
            return generator_loss(dq.rho, dp.rho);
        };
        auto r_gen = [&model, &x, seed](const std::vector<Tensor>&) {
            SeededRng r2(seed, 34);
            ref::ChainSample es = ref::encoder_chain_sample(model.spec, model.h, dt(x), Mode::Train, r2);
            ref::ChainSample ds = ref::decoder_chain_sample(model.spec, model.h, Mode::Train, r2, 4);
            ref::DiscOut dq = ref::discriminator_forward(model.disc, dt(x), es.z[0], es.z[1], Mode::Train, r2);
            ref::DiscOut dp = ref::discriminator_forward(model.disc, ds.x, ds.z[0], ds.z[1], Mode::Train, r2);
            ref::DTensor l({1});
            l.data[0] = ref::generator_loss(dq.rho, dp.rho);
            return l;
        };
        std::vector<Tensor> gparams;
        for (auto& nt : model.generator_params()) gparams.push_back(nt.t);
        out.push_back(
            grad_result("gradcheck/generator_end_to_end", gradcheck::check(f_gen, r_gen, gparams, 1e-6)));
    }

    return out;
}

// ---------------------------------------------------------------------------
// theory suite
// ---------------------------------------------------------------------------

namespace {

using namespace hali::finite;

CheckResult bound_result(std::string name, double statistic, double bound, bool ge) {
    CheckResult r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.bound = bound;
    r.margin = ge ? statistic - bound : bound - statistic;
    r.pass = r.margin >= 0.0;
    return r;
}

} // namespace

std::vector<CheckResult> theory_suite(int trials, uint64_t seed) {
    std::vector<CheckResult> out;
    SeededRng rng(seed, 0xd1e);
    const Generator gens[] = {Generator::KL, Generator::Chi2, Generator::JS};

    // Lemma 1 over three joint shapes, every strict subset of axes
    struct ShapeCase {
        const char* label;
        std::vector<Axis> axes;
    };
    const ShapeCase shapes[] = {
        {"2x2", {{"x", 2}, {"z", 2}}},
        {"3x4", {{"x", 3}, {"z", 4}}},
        {"2x3x2", {{"x", 2}, {"z1", 3}, {"z2", 2}}},
    };
    for (const auto& sc : shapes) {
        for (Generator g : gens) {
            double min_margin = 1e300;
            for (int t = 0; t < trials; ++t) {
                FiniteJoint p = FiniteJoint::random(sc.axes, rng);
                FiniteJoint q = FiniteJoint::random(sc.axes, rng);
                // every strict non-empty axis subset
                size_t n_axes = sc.axes.size();
                for (size_t bits = 1; bits + 1 < (1u << n_axes); ++bits) {
                    std::vector<std::string> keep;
                    for (size_t i = 0; i < n_axes; ++i)
                        if (bits & (1u << i)) keep.push_back(sc.axes[i].name);
                    Lemma1Report rep = check_lemma1(p, q, keep, g);
                    if (std::isinf(rep.joint_value)) continue;
                    min_margin = std::min(min_margin, rep.joint_value - rep.marginal_value);
                }
            }
            out.push_back(bound_result(std::string("lemma1/") + generator_name(g) + "/" + sc.label, min_margin,
                                       -kTol, true));
        }
    }

    // Lemma 2 chain on bounded random pairs: KL <= ln(1+chi2) <= chi2 <= K*JS
    {
        double m_kl_log = 1e300, m_log_chi = 1e300, m_chi_kjs = 1e300, m_kl_chi = 1e300;
        for (int t = 0; t < trials; ++t) {
            size_t k = 2 + rng.below(5);
            std::vector<double> pv(k), qv(k);
            {
                FiniteJoint pj = FiniteJoint::random({{"i", static_cast<int>(k)}}, rng, 1e-6);
                FiniteJoint qj = FiniteJoint::random({{"i", static_cast<int>(k)}}, rng, 1e-6);
                pv = pj.table();
                qv = qj.table();
            }
            FiniteDist p(pv), q(qv);
            double kl = f_divergence(p, q, Generator::KL);
            double chi = f_divergence(p, q, Generator::Chi2);
            double js = f_divergence(p, q, Generator::JS);
            KBound kb = compute_K(p, q);
            m_kl_log = std::min(m_kl_log, std::log1p(chi) - kl);
            m_log_chi = std::min(m_log_chi, chi - std::log1p(chi));
            m_kl_chi = std::min(m_kl_chi, chi - kl);
            m_chi_kjs = std::min(m_chi_kjs, kb.K * js - chi);
        }
        out.push_back(bound_result("lemma2/kl_le_log1p_chi2", m_kl_log, -kTol, true));
        out.push_back(bound_result("lemma2/log1p_chi2_le_chi2", m_log_chi, -kTol, true));
        out.push_back(bound_result("lemma2/kl_le_chi2", m_kl_chi, -kTol, true));
        out.push_back(bound_result("lemma2/chi2_le_K_js", m_chi_kjs, -kTol, true));
    }

    // Lemma 2 worked pair p=(0.5,0.5), q=(0.25,0.75)
    {
        FiniteDist p({0.5, 0.5});
        FiniteDist q({0.25, 0.75});
        double kl = f_divergence(p, q, Generator::KL);
        double chi = f_divergence(p, q, Generator::Chi2);
        double js = f_divergence(p, q, Generator::JS);
        KBound kb = compute_K(p, q);
        auto near = [&](const char* name, double got, double want) {
            CheckResult r;
            r.name = std::string("lemma2/worked/") + name;
            r.statistic = got;
            r.bound = want;
            r.margin = 1e-4 - std::abs(got - want);
            r.pass = r.margin >= 0.0;
            out.push_back(r);
        };
        near("kl", kl, 0.14384);
        near("chi2", chi, 0.33333);
        near("K", kb.K, 5.8858);
        near("K_js", kb.K * js, 0.39816);
    }

    // h(t) numerically non-decreasing on [1e-3, 100]
    {
        double min_diff = 1e300;
        double prev = h_ratio(1e-3);
        const int grid = 4000;
        for (int i = 1; i <= grid; ++i) {
            double t = 1e-3 * std::pow(100.0 / 1e-3, static_cast<double>(i) / grid);
            double h = h_ratio(t);
            min_diff = std::min(min_diff, h - prev);
            prev = h;
        }
        out.push_back(bound_result("lemma2/h_monotone", min_diff, -1e-9, true));
    }

    // Propositions 1 and 2 over random finite hierarchies
    {
        int instances = std::max(1, trials / 2);
        double p1_margin = 1e300, p1_ident = 0.0, p2_margin = 1e300, p2_ident = 0.0;
        for (int t = 0; t < instances; ++t) {
            int nx = 2 + static_cast<int>(rng.below(3));
            int nz1 = 2 + static_cast<int>(rng.below(3));
            int nz2 = 2 + static_cast<int>(rng.below(3));
            DiscreteHali hd = build_discrete_hali(nx, nz1, nz2, rng);
            for (const char* level : {"z1", "z2"}) {
                Prop1Report r1 = check_prop1(hd.encoder, hd.decoder, level);
                p1_margin = std::min(p1_margin, r1.rhs - r1.lhs);
                p1_ident = std::max(p1_ident, std::abs(r1.lhs - r1.cond_kl));
                FiniteJoint enc_xz = marginalize(hd.encoder, {"x", level});
                auto cond = conditional_from_joint(hd.decoder, "x", level);
                Prop2Report r2 = check_prop2(enc_xz, cond);
                p2_margin = std::min(p2_margin, r2.nll - r2.cond_entropy);
                p2_ident = std::max(p2_ident, std::abs(r2.gap - r2.cond_kl));
            }
        }
        out.push_back(bound_result("prop1/holds", p1_margin, -kTol, true));
        out.push_back(bound_result("prop1/gap_identity", p1_ident, kTol, false));
        out.push_back(bound_result("prop2/holds", p2_margin, -kTol, true));
        out.push_back(bound_result("prop2/gap_identity", p2_ident, kTol, false));
    }

    return out;
}

int count_failures(const std::vector<CheckResult>& results) {
    int n = 0;
    for (const auto& r : results)
        if (!r.pass) ++n;
    return n;
}

std::string format_result(const CheckResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-36s statistic=%.12g bound=%.12g margin=%.12g %s", r.name.c_str(),
                  r.statistic, r.bound, r.margin, r.pass ? "PASS" : "FAIL");
    return buf;
}

void write_report(const std::string& path, const std::vector<CheckResult>& results) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report: " + path);
    for (const auto& r : results) os << format_result(r) << "\n";
    os << "failures " << count_failures(results) << " of " << results.size() << "\n";
}

} // namespace hali::checks
