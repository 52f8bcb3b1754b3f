#pragma once

#include <string>
#include <vector>

#include "hali/autodiff.hpp"

namespace hali {

enum class Norm { None, Batch, Weight };

// One declarative network row. The layer lists in ModelConfig follow the
// same conventions as the architecture tables this mirrors: a conv row
// carries its norm kind, dropout and nonlinearity; dropout is the drop
// probability and applies to the row's input (retention = 1 - drop).
struct LayerCfg {
    enum class Kind { Conv, Res, Upsample, Reshape, Gaussian, Noise };
    Kind kind = Kind::Conv;

    // Conv / Res
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    Norm norm = Norm::None;
    float drop = 0.0f;
    Act act = Act::LeakyRelu;

    // Upsample
    int factor = 2;

    // Reshape (per-sample target)
    Shape target_chw;

    // Gaussian head: splits 2*latent_channels trunk maps into mean and raw
    // scale. Must be the last row of a kernel stage.
    int latent_channels = 0;
    bool squash_mean = false;

    // Noise
    float sigma = 0.0f;

    static LayerCfg conv(int out_ch, int kernel, int stride, int pad, Norm norm, float drop, Act act);
    static LayerCfg res(int channels, Norm norm, Act act, float drop = 0.0f);
    static LayerCfg upsample(int factor);
    static LayerCfg reshape_to(Shape chw);
    static LayerCfg gaussian(int latent_channels, bool squash_mean = false);
    static LayerCfg noise(float sigma);

    const char* kind_name() const;
};

// Computes the output CHW of a row, throwing ConfigError (naming the stage
// and row) when the chain does not type-check.
Shape layer_output_shape(const LayerCfg& cfg, const Shape& in_chw, const std::string& stage_name, int row);

// Parameters of one conv row (shared by plain convs and the two halves of a
// residual block). Under weight norm, `w` holds the direction v and `g` the
// per-unit scale.
struct ConvParams {
    Tensor w;
    Tensor b;
    Tensor g;
    Tensor gamma, beta;
    mutable BatchNormState bn; // running stats advance during train-mode forward
};

struct Block {
    LayerCfg cfg;
    ConvParams c1;
    ConvParams c2; // second conv of a residual block
};

// A runtime stack of rows. Gaussian rows never appear here; they terminate
// kernel stages and are applied by GaussianKernel.
struct Stage {
    std::string name;
    Shape in_chw;
    Shape out_chw;
    std::vector<Block> blocks;
    float leaky_slope = 0.2f;
};

Stage build_stage(const std::string& name, const Shape& in_chw, const std::vector<LayerCfg>& rows,
                  float leaky_slope, SeededRng& rng);

Tensor stage_forward(const Stage& stage, const Tensor& x, Mode mode, SeededRng& rng);

struct NamedTensor {
    std::string name;
    Tensor t;
};

// Trainable parameters, in a fixed deterministic order.
void collect_params(const Stage& stage, std::vector<NamedTensor>& out);
// Non-trainable state (batch-norm running stats).
void collect_state(const Stage& stage, std::vector<NamedTensor>& out);

} // namespace hali
