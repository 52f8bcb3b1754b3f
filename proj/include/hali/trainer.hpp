#pragma once

#include <functional>
#include <optional>

#include "hali/data.hpp"
#include "hali/latent.hpp"
#include "hali/networks.hpp"

namespace hali {

inline constexpr float kLossLogClamp = 1e-7f;

// L_d = -(1/M) sum log(rho_q) - (1/M) sum log(1 - rho_p)
Tensor discriminator_loss(const Tensor& rho_q, const Tensor& rho_p);
// L_g = -(1/M) sum log(1 - rho_q) - (1/M) sum log(rho_p)
Tensor generator_loss(const Tensor& rho_q, const Tensor& rho_p);
// mean cross-entropy of softmax probabilities {N,K} against class labels
Tensor supervised_loss(const Tensor& probs, const std::vector<int>& labels);

struct AdamHyper {
    float lr = 1e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::vector<std::vector<float>> m, v;
    int64_t t = 0;
    void init(const std::vector<NamedTensor>& params);
};

// Bias-corrected moment update over a parameter group. Parameters whose
// gradient buffer was never touched this step are treated as zero-gradient.
void adam_update(std::vector<NamedTensor>& params, AdamState& state, const AdamHyper& hp);

struct TrainConfig {
    int batch = 64;
    int steps = 1500;
    AdamHyper adam;
    float lambda_sup = 1.0f;
    int labeled_per_class = 0; // 0 = unsupervised
    int labeled_batch = 32;
    uint64_t seed = 1;
    int checkpoint_every = 0; // 0 = only the final checkpoint
    int log_every = 10;
    int eval_batch = 64;
    std::string out_dir; // empty = no files
    uint64_t config_digest = 0;
    void validate() const;
};

struct MetricsRecord {
    int64_t step = 0;
    double l_d = 0, l_g = 0, l_sup = 0;
    double rho_q = 0, rho_p = 0;     // batch means from the discriminator phase
    double recon_l1 = 0, recon_l2 = 0; // Monte-Carlo negative log density per level
    double dc_l1 = 0, dc_l2 = 0;       // mean embedded distance x vs per-level recon
    double wall_s = 0;                 // console only, never written to the CSV
    bool has_sup = false;
    bool has_eval = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

// Checkpoint file: "HALI" magic, u32 version, u64 total size, u64 config
// digest, step counter, RNG state, named little-endian parameter and
// running-stat blobs, both Adam states, trailing CRC32.
void checkpoint_save(const std::string& path, const HaliModel& model, const AdamState& disc_state,
                     const AdamState& gen_state, const SeededRng& rng, int64_t step, uint64_t config_digest);

struct CheckpointInfo {
    int64_t step = 0;
    uint64_t config_digest = 0;
};

// Restores into an already built model; throws CheckpointError with a
// distinct kind per failure mode. expected_digest 0 skips the digest check.
CheckpointInfo checkpoint_load(const std::string& path, HaliModel& model, AdamState& disc_state,
                               AdamState& gen_state, SeededRng& rng, uint64_t expected_digest);

class Trainer {
public:
    Trainer(HaliModel& model, const TrainConfig& cfg, const data::Dataset& data);

    // One Algorithm-1 iteration: discriminator update on L_d, then
    // encoder/decoder (and classifier, when labels are present) update on
    // L_g + lambda * L_sup. Throws TrainError on a non-finite loss after
    // writing a diagnostic snapshot.
    MetricsRecord step();

    // Full loop with logging, checkpoint cadence and the final checkpoint.
    void run(const std::function<void(const MetricsRecord&)>& on_log = {});

    void fill_eval_metrics(MetricsRecord& r);

    int64_t current_step() const { return step_; }
    uint64_t state_digest() const; // FNV over parameters + moments, for resume tests
    const std::vector<MetricsRecord>& history() const { return history_; }
    const std::vector<int>& labeled_indices() const { return labeled_idx_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    double evaluate_test_error(int* error_count = nullptr) const; // classifier on encoder means

private:
    Tensor gather_images(const Tensor& images, const std::vector<int>& idx) const;

    HaliModel& model_;
    TrainConfig cfg_;
    const data::Dataset& data_;
    SeededRng rng_;
    std::vector<NamedTensor> gen_params_, disc_params_;
    AdamState g_state_, d_state_;
    std::vector<int> labeled_idx_;
    Tensor eval_batch_;
    int64_t step_ = 0;
    std::vector<MetricsRecord> history_;
};

} // namespace hali
