#pragma once

#include "hali/networks.hpp"

namespace hali::latent {

enum class SampleMode { Mean, Sample };

// Encoder latents of x by conditional means (eval mode): {z1m, z2m, ...}.
std::vector<Tensor> encode_means(const HaliModel& m, const Tensor& x);

// x -> z_level -> x; Mean mode is a pure function of (checkpoint, x).
// level is 1-based. rng may be null in Mean mode.
Tensor reconstruct_at_level(const HaliModel& m, const Tensor& x, int level, SampleMode mode, SeededRng* rng);

// Penultimate-layer discriminator embedding of the (x, z1, z2) triple with
// the latents inferred by conditional means; eval mode throughout. {N,E}
Tensor disc_embedding(const HaliModel& m, const Tensor& x);

// Eq.-9 style distance: ||emb(u) - emb(v)||_2 per row.
std::vector<double> dc_distance(const HaliModel& m, const Tensor& u, const Tensor& v);

// Per-sample pixel mean squared error between same-shape batches.
std::vector<double> mse_rows(const Tensor& a, const Tensor& b);

// One decoded image per alpha, all decodes through conditional means.
// level 2: scales a single z2 coordinate. level 1: scales one whole z1
// feature map with z2 untouched. base_x undefined -> z2 drawn from the
// prior with `rng`.
std::vector<Tensor> latent_sweep(const HaliModel& m, const Tensor& base_x, int level, int coordinate,
                                 const std::vector<float>& alphas, SeededRng* rng);

struct InnovationEdit {
    Tensor z2_edited;
    Tensor eta;       // innovation tensor, shape of z1
    Tensor z1_edited; // z1_hat - eta
    Tensor image;     // decoded from z1_edited via means
};

// The five-step edit: encode, scale one z2 coordinate, regenerate z1 from
// both codes, subtract the innovation from the encoded z1, decode. With
// alpha=1 in Mean mode the edit is the identity (eta == 0).
InnovationEdit innovation_edit(const HaliModel& m, const Tensor& x, int coordinate, float alpha,
                               SampleMode mode, SeededRng* rng);

struct InpaintTask {
    Tensor x;           // {1,C,H,W}
    Tensor mask;        // {1,1,H,W}, 1 = observed, 0 = hidden
    int iterations = 5;
};

// Iteration 0 fills the hidden pixels from the level-2 reconstruction of the
// masked image; later iterations re-encode the composite and fill from
// level-1 reconstructions. Observed pixels are copied back verbatim after
// every iteration, no blending. Returns one composite per iteration.
std::vector<Tensor> inpaint(const HaliModel& m, const InpaintTask& task, SeededRng* rng);

} // namespace hali::latent
