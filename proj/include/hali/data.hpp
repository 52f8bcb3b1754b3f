#pragma once

#include <string>
#include <vector>

#include "hali/tensor.hpp"

namespace hali::data {

// Images live in [-1,1] as {N,1,H,W}; labels are class indices. The
// labeled subset for semi-supervised runs is an index list into train.
struct Dataset {
    Tensor train_images;
    std::vector<int> train_labels;
    Tensor val_images;
    std::vector<int> val_labels;
    Tensor test_images;
    std::vector<int> test_labels;
    int classes = 10;
    uint64_t checksum = 0; // FNV-1a over the raw IDX payload bytes
    std::string source;    // directory the IDX files came from
};

// Raw big-endian IDX file: magic-derived dims plus payload bytes.
// Distinct errors: IoError (missing), DataError with "magic" (wrong magic),
// DataError with "truncated" (short payload).
struct IdxFile {
    uint32_t magic = 0;
    std::vector<int> dims;
    std::vector<uint8_t> payload;
};
IdxFile read_idx_file(const std::string& path);

// magic 2051, dims (N,H,W); pixels rescaled from [0,255] to [-1,1]
Tensor load_idx_images(const std::string& path);
// magic 2049, dims (N)
std::vector<int> load_idx_labels(const std::string& path);

// Parses an images/labels pair and cross-checks the counts.
struct LabeledImages {
    Tensor images;
    std::vector<int> labels;
};
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);

void write_idx_images(const std::string& path, const Tensor& images); // [-1,1] -> bytes
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// Loads train/test IDX pairs from dir using the conventional MNIST file
// names, carves `val_count` validation images off the train tail and caps
// train at `train_limit` (0 = no cap).
Dataset load_dataset(const std::string& dir, int train_limit, int val_count);

// Deterministic stratified sample: exactly per_class indices per class.
std::vector<int> semisup_split(const std::vector<int>& labels, int per_class, int classes, uint64_t seed);

// Renders the deterministic ten-class segment-glyph set (digit-shaped
// strokes with pose/thickness/noise jitter) and writes it as standard IDX
// files, so the regular loader path is exercised even without MNIST.
void write_synthetic_idx(const std::string& dir, int n_train, int n_test, uint64_t seed);

// dir, if non-empty and populated with IDX files, wins; otherwise the
// synthetic set is generated under fallback_dir (once) and loaded.
Dataset load_or_synthesize(const std::string& dir, const std::string& fallback_dir, int train_limit,
                           int val_count);

uint64_t fnv1a(const void* bytes, size_t len, uint64_t seed = 1469598103934665603ULL);

} // namespace hali::data
