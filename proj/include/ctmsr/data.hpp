#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctmsr/tensor.hpp"

namespace ctmsr {

// Aligned training triple: HR target x0, conditioner y0 (the LR bicubic
// upsampled to the HR grid) and the raw LR image. All values in [-1, 1].
struct SRPair {
    Tensor hr;    // x0, (C, H, W)
    Tensor cond;  // y0, same shape as hr
    Tensor lr;    // (C, H/scale, W/scale)
};

// Parametric stand-in for a real degradation pipeline: Gaussian blur, x4
// downsample with the chosen kernel, additive Gaussian noise, clamp.
struct DegradationSpec {
    double blur_sigma = 1.2;
    std::string kernel = "box";  // "box" or "bicubic"
    double noise_sigma = 0.02;
    uint64_t seed = 0;

    void validate() const;
};

constexpr int kScaleFactor = 4;

struct ManifestEntry {
    int id = 0;
    std::string hr_path;
    std::string lr_path;
    std::string split;  // "train" or "val"
    uint64_t seed = 0;
    std::string sha256;  // over hr file bytes followed by lr file bytes
};

struct DatasetHandle {
    std::string manifest_path;
    int patch_size = 32;  // HR side
    int scale = kScaleFactor;
    uint64_t generator_seed = 0;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split_entries(const std::string& split) const;
};

// Synthetic HR patch: a seeded blend of Gaussian random fields, oriented
// gradients and piecewise-constant shapes, shared across channels with a
// small per-channel perturbation.
Tensor synth_hr_patch(int patch_size, uint64_t seed);

Tensor degrade(const Tensor& hr, const DegradationSpec& spec);

SRPair make_pair(const Tensor& hr, const DegradationSpec& spec);

// Builds y0/lr from already-decoded images (used when loading from disk).
SRPair assemble_pair(const Tensor& hr, const Tensor& lr);

// Generates n HR/LR image pairs under out_dir, writes the manifest and
// returns the handle. Split is 90/10 train/val by index.
DatasetHandle generate_corpus(int n, int patch_size, uint64_t seed, const std::string& out_dir,
                              const DegradationSpec& degradation);

DatasetHandle read_manifest(const std::string& manifest_path);
void write_manifest(const DatasetHandle& handle);

// Loads the decoded pairs for one split into memory.
std::vector<SRPair> load_split(const DatasetHandle& handle, const std::string& split);

std::string sha256_file_pair(const std::string& path_a, const std::string& path_b);

}  // namespace ctmsr
