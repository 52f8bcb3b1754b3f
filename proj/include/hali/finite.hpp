#pragma once

#include <string>
#include <vector>

#include "hali/error.hpp"
#include "hali/rng.hpp"

// Exact enumeration oracle over finite probability tables. Everything here
// is 64-bit; tolerances are absolute 1e-12. This module is deliberately
// independent of the float32 tensor stack.
namespace hali::finite {

inline constexpr double kTol = 1e-12;

// Probability vector; entries non-negative and summing to 1 within kTol.
class FiniteDist {
public:
    explicit FiniteDist(std::vector<double> probs);
    const std::vector<double>& probs() const { return p_; }
    size_t size() const { return p_.size(); }
    double operator[](size_t i) const { return p_[i]; }

private:
    std::vector<double> p_;
};

struct Axis {
    std::string name;
    int size = 0;
};

// Joint table over named finite axes, row-major in axis order.
class FiniteJoint {
public:
    FiniteJoint(std::vector<Axis> axes, std::vector<double> table);

    const std::vector<Axis>& axes() const { return axes_; }
    const std::vector<double>& table() const { return table_; }
    size_t cells() const { return table_.size(); }
    int axis_index(const std::string& name) const; // throws ArgumentError on unknown name
    double mass() const;

    static FiniteJoint uniform(std::vector<Axis> axes);
    // iid Dirichlet(1,...,1) over the whole table, optional probability
    // floor applied before renormalization
    static FiniteJoint random(std::vector<Axis> axes, SeededRng& rng, double floor = 0.0);

private:
    std::vector<Axis> axes_;
    std::vector<double> table_;
};

enum class Generator { KL, Chi2, JS };

const char* generator_name(Generator g);

// D_f(p||q) = sum_i q_i f(p_i/q_i) with
//   f_KL(t)   = t ln t
//   f_chi2(t) = (t-1)^2
//   f_JS(t)   = t ln(2t/(t+1)) + ln(2/(t+1))
// The JS generator form equals twice the half-mixture Jensen-Shannon value
// (see js_half_mixture). Cells with q=0,p>0 give +inf for KL and chi2 and
// p*ln2 for JS; 0/0 cells contribute nothing.
double f_divergence(const FiniteDist& p, const FiniteDist& q, Generator g);
double f_divergence(const FiniteJoint& p, const FiniteJoint& q, Generator g);

// Standard half-mixture Jensen-Shannon: (KL(p||m) + KL(q||m))/2, m=(p+q)/2.
double js_half_mixture(const FiniteDist& p, const FiniteDist& q);

// Sums out every axis not in `keep`; kept axes stay in their original order.
FiniteJoint marginalize(const FiniteJoint& j, const std::vector<std::string>& keep);

// H(target | given) in nats under j; `given` may be empty (plain entropy).
double conditional_entropy(const FiniteJoint& j, const std::string& target,
                           const std::vector<std::string>& given);

// Rows of p(target | given) as matrix[given][target], taken from the joint.
std::vector<std::vector<double>> conditional_from_joint(const FiniteJoint& j, const std::string& target,
                                                        const std::string& given);

struct Lemma1Report {
    double joint_value = 0;
    double marginal_value = 0;
    bool holds = false;
};

// Data-processing monotonicity: D_f over the full joint must dominate D_f
// over any strict marginal.
Lemma1Report check_lemma1(const FiniteJoint& p, const FiniteJoint& q, const std::vector<std::string>& keep,
                          Generator g);

// h(t) = f_chi2(t) / f_JS(t); h(1) = 4 taken as the limit value.
double h_ratio(double t);

struct KBound {
    double c1 = 0; // min q
    double c2 = 0; // max p / c1
    double K = 0;  // h(c2)
};

// Constants of the KL <= chi2 <= K*JS chain. Requires q bounded away from
// zero (all entries >= 1e-9), else throws ArgumentError.
KBound compute_K(const FiniteDist& p, const FiniteDist& q);
KBound compute_K(const FiniteJoint& p, const FiniteJoint& q);

struct Prop1Report {
    double lhs = 0;     // E_q[-ln p(x|z_l)] - H_q(x|z_l)
    double K = 0;       // from compute_K on the (x, z_l) marginals
    double js_full = 0; // JS between the full decoder and encoder joints
    double rhs = 0;     // K * js_full
    double cond_kl = 0; // sum_z q(z) KL(q(x|z) || p(x|z)); equals lhs exactly
    bool holds = false;
};

// Both joints share axes (x first, latents after). `level` names the latent
// axis the reconstruction runs through.
Prop1Report check_prop1(const FiniteJoint& encoder_joint, const FiniteJoint& decoder_joint,
                        const std::string& level);

struct Prop2Report {
    double nll = 0;          // E_{(x,z)~q}[-ln p(x|z)]
    double cond_entropy = 0; // H_q(x|z)
    double gap = 0;          // nll - cond_entropy
    double cond_kl = 0;      // independent evaluation of the gap
    bool holds = false;
};

// encoder_xz: two-axis joint (x, z). decoder_conditional: rows p(x|z)
// indexed [z][x]; rows must be normalized (ArgumentError otherwise).
Prop2Report check_prop2(const FiniteJoint& encoder_xz,
                        const std::vector<std::vector<double>>& decoder_conditional);

struct DiscreteHali {
    FiniteJoint encoder;               // q(x) q(z1|x) q(z2|z1) over axes (x,z1,z2)
    FiniteJoint decoder;               // p(z2) p(z1|z2) p(x|z1) over the same axes
    std::vector<double> q_x;           // sampled q(x) factor
    std::vector<std::vector<double>> q_z1_given_x;
    std::vector<std::vector<double>> q_z2_given_z1;
    std::vector<double> p_z2;
    std::vector<std::vector<double>> p_z1_given_z2;
    std::vector<std::vector<double>> p_x_given_z1;
};

// Random finite HALI instance. Every factor is Dirichlet-sampled with a
// 1e-6 floor and renormalized, which keeps both joints bounded away from
// zero as Lemma 2 requires.
DiscreteHali build_discrete_hali(int nx, int nz1, int nz2, SeededRng& rng);

} // namespace hali::finite
