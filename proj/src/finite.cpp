#include "hali/finite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hali::finite {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_probs(const std::vector<double>& p, const char* what) {
    double mass = 0.0;
    for (double v : p) {
        if (v < 0.0) throw ArgumentError(std::string(what) + ": negative probability entry");
        mass += v;
    }
    if (std::abs(mass - 1.0) > 1e-9)
        throw ArgumentError(std::string(what) + ": probabilities sum to " + std::to_string(mass) + ", not 1");
}

std::vector<double> dirichlet(size_t k, SeededRng& rng, double floor) {
    std::vector<double> v(k);
    double sum = 0.0;
    for (double& x : v) {
        double u;
        do {
            u = rng.next_double();
        } while (u <= 0.0);
        x = -std::log(u); // Exp(1)
        sum += x;
    }
    for (double& x : v) x /= sum;
    if (floor > 0.0) {
        double s = 0.0;
        for (double& x : v) {
            x = std::max(x, floor);
            s += x;
        }
        for (double& x : v) x /= s;
    }
    return v;
}

// one term of sum q f(p/q), written to avoid forming huge ratios
double f_term(double p, double q, Generator g) {
    switch (g) {
    case Generator::KL:
        if (p == 0.0) return 0.0;
        if (q == 0.0) return kInf;
        return p * std::log(p / q);
    case Generator::Chi2: {
        if (q == 0.0) return (p == 0.0) ? 0.0 : kInf;
        double d = p - q;
        return d * d / q;
    }
    case Generator::JS: {
        // p ln(2p/(p+q)) + q ln(2q/(p+q))
        if (p == 0.0 && q == 0.0) return 0.0;
        double m = p + q;
        double a = (p == 0.0) ? 0.0 : p * std::log(2.0 * p / m);
        double b = (q == 0.0) ? 0.0 : q * std::log(2.0 * q / m);
        return a + b;
    }
    }
    throw ArgumentError("unknown divergence generator");
}

double f_divergence_tables(const std::vector<double>& p, const std::vector<double>& q, Generator g) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double t = f_term(p[i], q[i], g);
        if (t == kInf) return kInf;
        acc += t;
    }
    return acc;
}

} // namespace

FiniteDist::FiniteDist(std::vector<double> probs) : p_(std::move(probs)) {
    validate_probs(p_, "FiniteDist");
}

FiniteJoint::FiniteJoint(std::vector<Axis> axes, std::vector<double> table)
    : axes_(std::move(axes)), table_(std::move(table)) {
    size_t cells = 1;
    for (const Axis& a : axes_) {
        if (a.size < 1) throw ArgumentError("FiniteJoint: axis '" + a.name + "' has size " + std::to_string(a.size));
        cells *= static_cast<size_t>(a.size);
    }
    if (cells != table_.size())
        throw ArgumentError("FiniteJoint: table has " + std::to_string(table_.size()) + " cells, axes imply " +
                            std::to_string(cells));
    validate_probs(table_, "FiniteJoint");
}

int FiniteJoint::axis_index(const std::string& name) const {
    for (size_t i = 0; i < axes_.size(); ++i)
        if (axes_[i].name == name) return static_cast<int>(i);
    throw ArgumentError("unknown axis name: " + name);
}

double FiniteJoint::mass() const {
    double m = 0.0;
    for (double v : table_) m += v;
    return m;
}

FiniteJoint FiniteJoint::uniform(std::vector<Axis> axes) {
    size_t cells = 1;
    for (const Axis& a : axes) cells *= static_cast<size_t>(a.size);
    return FiniteJoint(std::move(axes), std::vector<double>(cells, 1.0 / static_cast<double>(cells)));
}

FiniteJoint FiniteJoint::random(std::vector<Axis> axes, SeededRng& rng, double floor) {
    size_t cells = 1;
    for (const Axis& a : axes) cells *= static_cast<size_t>(a.size);
    return FiniteJoint(std::move(axes), dirichlet(cells, rng, floor));
}

const char* generator_name(Generator g) {
    switch (g) {
    case Generator::KL: return "kl";
    case Generator::Chi2: return "chi2";
    case Generator::JS: return "js";
    }
    return "?";
}

double f_divergence(const FiniteDist& p, const FiniteDist& q, Generator g) {
    if (p.size() != q.size()) throw ArgumentError("f_divergence: distributions of different size");
    return f_divergence_tables(p.probs(), q.probs(), g);
}

double f_divergence(const FiniteJoint& p, const FiniteJoint& q, Generator g) {
    if (p.axes().size() != q.axes().size() || p.cells() != q.cells())
        throw ArgumentError("f_divergence: joints of different shape");
    for (size_t i = 0; i < p.axes().size(); ++i)
        if (p.axes()[i].size != q.axes()[i].size)
            throw ArgumentError("f_divergence: axis '" + p.axes()[i].name + "' sizes differ");
    return f_divergence_tables(p.table(), q.table(), g);
}

double js_half_mixture(const FiniteDist& p, const FiniteDist& q) {
    if (p.size() != q.size()) throw ArgumentError("js_half_mixture: distributions of different size");
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
    }
    return acc;
}

FiniteJoint marginalize(const FiniteJoint& j, const std::vector<std::string>& keep) {
    if (keep.empty()) throw ArgumentError("marginalize: keep set must be non-empty");
    std::vector<bool> kept(j.axes().size(), false);
    for (const std::string& name : keep) kept[static_cast<size_t>(j.axis_index(name))] = true;

    std::vector<Axis> out_axes;
    for (size_t i = 0; i < j.axes().size(); ++i)
        if (kept[i]) out_axes.push_back(j.axes()[i]);

    // strides over the source table, and for kept axes over the target
    size_t n_axes = j.axes().size();
    std::vector<size_t> src_stride(n_axes, 1);
    for (size_t i = n_axes; i-- > 1;) src_stride[i - 1] = src_stride[i] * static_cast<size_t>(j.axes()[i].size);
    std::vector<size_t> dst_stride(n_axes, 0);
    size_t run = 1;
    for (size_t i = n_axes; i-- > 0;) {
        if (kept[i]) {
            dst_stride[i] = run;
            run *= static_cast<size_t>(j.axes()[i].size);
        }
    }

    std::vector<double> out(run, 0.0);
    const std::vector<double>& t = j.table();
    for (size_t cell = 0; cell < t.size(); ++cell) {
        size_t rest = cell, dst = 0;
        for (size_t i = 0; i < n_axes; ++i) {
            size_t idx = rest / src_stride[i];
            rest %= src_stride[i];
            if (kept[i]) dst += idx * dst_stride[i];
        }
        out[dst] += t[cell];
    }
    return FiniteJoint(std::move(out_axes), std::move(out));
}

double conditional_entropy(const FiniteJoint& j, const std::string& target,
                           const std::vector<std::string>& given) {
    for (const std::string& g : given)
        if (g == target) throw ArgumentError("conditional_entropy: target axis also in given set");

    std::vector<std::string> keep_both = given;
    keep_both.push_back(target);
    FiniteJoint a = marginalize(j, keep_both); // over target+given, original axis order

    if (given.empty()) {
        double h = 0.0;
        for (double v : a.table())
            if (v > 0.0) h -= v * std::log(v);
        return h;
    }

    FiniteJoint b = marginalize(j, given);
    // map cells of `a` onto cells of `b` by dropping the target axis
    int t_idx = a.axis_index(target);
    size_t n_axes = a.axes().size();
    std::vector<size_t> a_stride(n_axes, 1);
    for (size_t i = n_axes; i-- > 1;) a_stride[i - 1] = a_stride[i] * static_cast<size_t>(a.axes()[i].size);
    std::vector<size_t> b_stride(n_axes, 0);
    size_t run = 1;
    for (size_t i = n_axes; i-- > 0;) {
        if (static_cast<int>(i) != t_idx) {
            b_stride[i] = run;
            run *= static_cast<size_t>(a.axes()[i].size);
        }
    }

    double h = 0.0;
    for (size_t cell = 0; cell < a.cells(); ++cell) {
        double pxz = a.table()[cell];
        if (pxz <= 0.0) continue;
        size_t rest = cell, bc = 0;
        for (size_t i = 0; i < n_axes; ++i) {
            size_t idx = rest / a_stride[i];
            rest %= a_stride[i];
            if (static_cast<int>(i) != t_idx) bc += idx * b_stride[i];
        }
        h -= pxz * std::log(pxz / b.table()[bc]);
    }
    return h;
}

std::vector<std::vector<double>> conditional_from_joint(const FiniteJoint& j, const std::string& target,
                                                        const std::string& given) {
    FiniteJoint pair = marginalize(j, {target, given});
    int ti = pair.axis_index(target);
    int gi = pair.axis_index(given);
    int nt = pair.axes()[static_cast<size_t>(ti)].size;
    int ng = pair.axes()[static_cast<size_t>(gi)].size;
    // pair has two axes; stride of the later axis is 1
    auto cell = [&](int t, int g) -> double {
        return (ti < gi) ? pair.table()[static_cast<size_t>(t) * ng + g]
                         : pair.table()[static_cast<size_t>(g) * nt + t];
    };
    std::vector<std::vector<double>> rows(static_cast<size_t>(ng), std::vector<double>(static_cast<size_t>(nt), 0.0));
    for (int g = 0; g < ng; ++g) {
        double pg = 0.0;
        for (int t = 0; t < nt; ++t) pg += cell(t, g);
        for (int t = 0; t < nt; ++t) rows[static_cast<size_t>(g)][static_cast<size_t>(t)] = (pg > 0.0) ? cell(t, g) / pg : 0.0;
    }
    return rows;
}

Lemma1Report check_lemma1(const FiniteJoint& p, const FiniteJoint& q, const std::vector<std::string>& keep,
                          Generator g) {
    if (keep.size() >= p.axes().size())
        throw ArgumentError("check_lemma1: keep must be a strict subset of the axes");
    Lemma1Report r;
    r.joint_value = f_divergence(p, q, g);
    r.marginal_value = f_divergence(marginalize(p, keep), marginalize(q, keep), g);
    r.holds = (r.joint_value >= r.marginal_value - kTol);
    return r;
}

double h_ratio(double t) {
    if (t < 0.0) throw ArgumentError("h_ratio: t must be non-negative");
    double u = t - 1.0;
    // both generators vanish to second order at t=1; the ratio expands as
    // 4 + 2(t-1) + O((t-1)^2)
    if (std::abs(u) <= 1e-4) return 4.0 + 2.0 * u;
    double fjs = f_term(t, 1.0, Generator::JS); // q=1 gives exactly f_JS(t)
    return u * u / fjs;
}

KBound compute_K(const FiniteDist& p, const FiniteDist& q) {
    if (p.size() != q.size()) throw ArgumentError("compute_K: distributions of different size");
    KBound kb;
    kb.c1 = kInf;
    double pmax = 0.0;
    for (size_t i = 0; i < q.size(); ++i) {
        kb.c1 = std::min(kb.c1, q[i]);
        pmax = std::max(pmax, p[i]);
    }
    if (kb.c1 < 1e-9)
        throw ArgumentError("compute_K: q is not bounded away from zero (min entry " + std::to_string(kb.c1) + ")");
    kb.c2 = pmax / kb.c1;
    kb.K = h_ratio(kb.c2);
    return kb;
}

KBound compute_K(const FiniteJoint& p, const FiniteJoint& q) {
    return compute_K(FiniteDist(p.table()), FiniteDist(q.table()));
}

Prop1Report check_prop1(const FiniteJoint& encoder_joint, const FiniteJoint& decoder_joint,
                        const std::string& level) {
    const std::string x_name = encoder_joint.axes().front().name;
    FiniteJoint mq = marginalize(encoder_joint, {x_name, level});
    FiniteJoint mp = marginalize(decoder_joint, {x_name, level});
    int nx = mq.axes()[0].size;
    int nz = mq.axes()[1].size;
    auto q_at = [&](int x, int z) { return mq.table()[static_cast<size_t>(x) * nz + z]; };
    auto p_at = [&](int x, int z) { return mp.table()[static_cast<size_t>(x) * nz + z]; };

    Prop1Report r;

    // E_q[-ln p(x|z)] - H_q(x|z), accumulated cell by cell
    std::vector<double> pz(static_cast<size_t>(nz), 0.0), qz(static_cast<size_t>(nz), 0.0);
    for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) {
            pz[static_cast<size_t>(z)] += p_at(x, z);
            qz[static_cast<size_t>(z)] += q_at(x, z);
        }
    double nll = 0.0;
    for (int x = 0; x < nx; ++x)
        for (int z = 0; z < nz; ++z) {
            double qxz = q_at(x, z);
            if (qxz <= 0.0) continue;
            double pcond = p_at(x, z) / pz[static_cast<size_t>(z)];
            nll -= qxz * std::log(pcond);
        }
    double hq = conditional_entropy(encoder_joint, x_name, {level});
    r.lhs = nll - hq;

    // independent route: sum_z q(z) KL(q(x|z) || p(x|z))
    double ckl = 0.0;
    for (int z = 0; z < nz; ++z) {
        double qzv = qz[static_cast<size_t>(z)];
        if (qzv <= 0.0) continue;
        double kl = 0.0;
        for (int x = 0; x < nx; ++x) {
            double qc = q_at(x, z) / qzv;
            if (qc <= 0.0) continue;
            double pc = p_at(x, z) / pz[static_cast<size_t>(z)];
            kl += qc * std::log(qc / pc);
        }
        ckl += qzv * kl;
    }
    r.cond_kl = ckl;

    KBound kb = compute_K(mq, mp); // Lemma 2 with p := encoder marginal, q := decoder marginal
    r.K = kb.K;
    r.js_full = f_divergence(decoder_joint, encoder_joint, Generator::JS);
    r.rhs = r.K * r.js_full;
    r.holds = (r.lhs <= r.rhs + kTol);
    return r;
}

Prop2Report check_prop2(const FiniteJoint& encoder_xz,
                        const std::vector<std::vector<double>>& decoder_conditional) {
    if (encoder_xz.axes().size() != 2) throw ArgumentError("check_prop2: encoder joint must have axes (x, z)");
    int nx = encoder_xz.axes()[0].size;
    int nz = encoder_xz.axes()[1].size;
    if (static_cast<int>(decoder_conditional.size()) != nz)
        throw ArgumentError("check_prop2: conditional has " + std::to_string(decoder_conditional.size()) +
                            " rows, expected one per z value (" + std::to_string(nz) + ")");
    for (const auto& row : decoder_conditional) {
        if (static_cast<int>(row.size()) != nx)
            throw ArgumentError("check_prop2: conditional row length mismatch");
        double s = 0.0;
        for (double v : row) {
            if (v < 0.0) throw ArgumentError("check_prop2: negative conditional probability");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw ArgumentError("check_prop2: conditional row sums to " + std::to_string(s) + ", not 1");
    }

    auto q_at = [&](int x, int z) { return encoder_xz.table()[static_cast<size_t>(x) * nz + z]; };

    Prop2Report r;
    double nll = 0.0;
    for (int x = 0; x < nx; ++x)
        for (int z = 0; z < nz; ++z) {
            double qxz = q_at(x, z);
            if (qxz <= 0.0) continue;
            double p = decoder_conditional[static_cast<size_t>(z)][static_cast<size_t>(x)];
            if (p <= 0.0) {
                nll = std::numeric_limits<double>::infinity();
            } else {
                nll -= qxz * std::log(p);
            }
        }
    r.nll = nll;
    r.cond_entropy =
        conditional_entropy(encoder_xz, encoder_xz.axes()[0].name, {encoder_xz.axes()[1].name});
    r.gap = r.nll - r.cond_entropy;

    // gap must equal E_z KL(q(x|z)||p(x|z)), evaluated independently
    double ckl = 0.0;
    for (int z = 0; z < nz; ++z) {
        double qz = 0.0;
        for (int x = 0; x < nx; ++x) qz += q_at(x, z);
        if (qz <= 0.0) continue;
        double kl = 0.0;
        for (int x = 0; x < nx; ++x) {
            double qc = q_at(x, z) / qz;
            if (qc <= 0.0) continue;
            kl += qc * std::log(qc / decoder_conditional[static_cast<size_t>(z)][static_cast<size_t>(x)]);
        }
        ckl += qz * kl;
    }
    r.cond_kl = ckl;
    r.holds = (r.nll >= r.cond_entropy - kTol);
    return r;
}

DiscreteHali build_discrete_hali(int nx, int nz1, int nz2, SeededRng& rng) {
    if (nx < 2 || nz1 < 2 || nz2 < 2) throw ArgumentError("build_discrete_hali: alphabet sizes must be >= 2");
    constexpr double kFloor = 1e-6;

    auto rows = [&](int n, int k) {
        std::vector<std::vector<double>> m(static_cast<size_t>(n));
        for (auto& r : m) r = dirichlet(static_cast<size_t>(k), rng, kFloor);
        return m;
    };

    std::vector<double> q_x = dirichlet(static_cast<size_t>(nx), rng, kFloor);
    auto q_z1_given_x = rows(nx, nz1);
    auto q_z2_given_z1 = rows(nz1, nz2);

    std::vector<double> p_z2 = dirichlet(static_cast<size_t>(nz2), rng, kFloor);
    auto p_z1_given_z2 = rows(nz2, nz1);
    auto p_x_given_z1 = rows(nz1, nx);

    std::vector<Axis> axes{{"x", nx}, {"z1", nz1}, {"z2", nz2}};
    std::vector<double> enc(static_cast<size_t>(nx) * nz1 * nz2);
    std::vector<double> dec(enc.size());
    for (int x = 0; x < nx; ++x)
        for (int z1 = 0; z1 < nz1; ++z1)
            for (int z2 = 0; z2 < nz2; ++z2) {
                size_t c = (static_cast<size_t>(x) * nz1 + z1) * nz2 + z2;
                enc[c] = q_x[static_cast<size_t>(x)] * q_z1_given_x[static_cast<size_t>(x)][static_cast<size_t>(z1)] *
                         q_z2_given_z1[static_cast<size_t>(z1)][static_cast<size_t>(z2)];
                dec[c] = p_z2[static_cast<size_t>(z2)] *
                         p_z1_given_z2[static_cast<size_t>(z2)][static_cast<size_t>(z1)] *
                         p_x_given_z1[static_cast<size_t>(z1)][static_cast<size_t>(x)];
            }

    DiscreteHali out{FiniteJoint(axes, std::move(enc)), FiniteJoint(axes, std::move(dec)),
                     std::move(q_x), std::move(q_z1_given_x), std::move(q_z2_given_z1),
                     std::move(p_z2), std::move(p_z1_given_z2), std::move(p_x_given_z1)};
    return out;
}

} // namespace hali::finite
