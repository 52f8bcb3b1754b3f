#include "hali/gradcheck.hpp"

#include <cmath>

namespace hali::gradcheck {

FdReport check(const std::function<Tensor(const std::vector<Tensor>&)>& float_fn,
               const std::function<ref::DTensor(const std::vector<Tensor>&)>& ref_fn,
               std::vector<Tensor> inputs, double step, double abs_floor, uint64_t weight_seed) {
    for (const Tensor& t : inputs) {
        if (!t.requires_grad()) throw ArgumentError("gradcheck: every input must require gradients");
    }

    FdReport rep;
    Tensor weights;
    ref::DTensor weights_d;
    std::vector<std::vector<float>> analytic;
    {
        Tape tape;
        Tensor out = float_fn(inputs);
        SeededRng wrng(weight_seed, 0xfd);
        weights = Tensor::zeros(out.shape());
        wrng.fill_uniform(weights.data(), -1.0f, 1.0f);
        weights_d = ref::from_tensor(weights);

        ref::DTensor ref_out = ref_fn(inputs);
        if (ref_out.shape != out.shape())
            throw ArgumentError("gradcheck: float and reference outputs disagree on shape");
        for (size_t i = 0; i < ref_out.data.size(); ++i) {
            double f = out.data()[i];
            double r = ref_out.data[i];
            double denom = std::max({std::abs(f), std::abs(r), 1e-6});
            rep.forward_err = std::max(rep.forward_err, std::abs(f - r) / denom);
        }

        Tensor loss = sum_all(mul(out, weights));
        tape.backward(loss);
        for (Tensor& t : inputs) {
            if (t.has_grad()) {
                const auto& g = t.impl()->grad;
                analytic.emplace_back(g.begin(), g.end());
            } else {
                analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
            }
        }
    }

    float h = static_cast<float>(step);
    for (size_t k = 0; k < inputs.size(); ++k) {
        auto data = inputs[k].data();
        for (size_t j = 0; j < data.size(); ++j) {
            float saved = data[j];
            float xp = saved + h;
            float xm = saved - h;
            data[j] = xp;
            double lp = ref::dot(ref_fn(inputs), weights_d);
            data[j] = xm;
            double lm = ref::dot(ref_fn(inputs), weights_d);
            data[j] = saved;
            double fd = (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
            double a = analytic[k][j];
            double diff = std::abs(a - fd);
            rep.max_abs_diff = std::max(rep.max_abs_diff, diff);
            double err = (diff <= abs_floor) ? 0.0 : diff / std::max(std::abs(a), std::abs(fd));
            rep.max_err = std::max(rep.max_err, err);
            ++rep.checked;
        }
    }
    return rep;
}

} // namespace hali::gradcheck
