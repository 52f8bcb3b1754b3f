#pragma once

#include "hali/kernels.hpp"

namespace hali {

struct NetCfg {
    std::string name;
    std::vector<LayerCfg> rows;
};

// Declarative description of the four kernel networks, the three-stage
// discriminator (latents concatenated along the channel axis between
// stages) and the classifier head on the top latent.
struct ModelConfig {
    std::string name;
    int levels = 2;
    Shape data_chw;
    Shape z1_chw;
    Shape z2_chw;

    NetCfg enc_z1, enc_z2; // q(z1|x), q(z2|z1); enc_z1 starts with an input-noise row
    NetCfg dec_z1, dec_x;  // p(z1|z2), p(x|z1)

    NetCfg disc_x;   // trunk on x; output concatenated with z1
    NetCfg disc_xz1; // trunk on (D(x), z1); output concatenated with z2
    NetCfg disc_xz2; // 1x1 stack ending in the 1-channel sigmoid row;
                     // the row before it is the embedding
    NetCfg classifier; // on z2, ends with a `classes`-channel linear row

    float disc_input_noise = 0.2f;
    float leaky_slope = 0.2f;
    int classes = 10;

    static ModelConfig mnist_small();
    static ModelConfig toy2d();
    static ModelConfig paper_celeba_shapes();
    static ModelConfig by_name(const std::string& name);

    // Type-checks every layer chain and the concatenation points; throws
    // ConfigError naming the stage and row that breaks.
    void validate() const;

    HierarchySpec hierarchy_spec() const;
    int embedding_channels() const; // channel count of the penultimate disc row
};

struct Discriminator {
    Stage sx, sxz1, sxz2_body; // sxz2_body = all disc_xz2 rows except the final sigmoid row
    Block out;                 // final 1-channel sigmoid conv
    float input_noise = 0.2f;
};

struct DiscriminatorOutput {
    Tensor rho;       // {N}, in (0,1)
    Tensor embedding; // {N, E}: penultimate activations, flattened
};

struct Classifier {
    Stage body;
};

struct HaliModel {
    ModelConfig cfg;
    HierarchySpec spec;
    Hierarchy h;
    Discriminator disc;
    Classifier cls;

    std::vector<NamedTensor> generator_params() const; // encoder + decoder + classifier
    std::vector<NamedTensor> discriminator_params() const;
    std::vector<NamedTensor> all_params() const;
    std::vector<NamedTensor> all_state() const; // batch-norm running stats
};

// Builds and He-initializes all four networks from the config; two builds
// from the same seed are bit-identical.
HaliModel build_networks(const ModelConfig& cfg, SeededRng& rng);

// Train mode adds N(0, sigma^2) noise to all three inputs and applies the
// configured dropout; eval mode applies neither.
DiscriminatorOutput discriminator_forward(const Discriminator& d, const Tensor& x, const Tensor& z1,
                                          const Tensor& z2, Mode mode, SeededRng& rng);

// Softmax class probabilities {N, classes} from the top-level latent.
Tensor classifier_forward(const Classifier& c, const Tensor& z_top, Mode mode, SeededRng& rng);

} // namespace hali
