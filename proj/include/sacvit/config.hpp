#pragma once

#include <cstdint>
#include <string>

namespace sacvit {

// How the shared class token is recombined after per-cluster attention.
enum class ClsAverage {
    equal,         // plain mean over cluster copies
    size_weighted, // weighted by cluster size (patches + class copy)
};

// Architectural and algorithmic hyperparameters. One config drives both
// pipeline stages; the defaults mirror a DeiT-S sized model at 224x224.
struct ModelConfig {
    int embed_dim = 384;    // D, must be divisible by heads
    int layers = 12;        // L
    int heads = 6;          // h
    int patch_size = 16;    // P, pixels
    int image_height = 224; // H
    int image_width = 224;  // W
    int num_classes = 1000; // C
    double alpha = 0.5;     // target-token ratio, in (0,1)
    double beta = 0.99;     // attention moving-average decay, in [0,1)
    double eta = 0.5;       // early-exit confidence threshold, in [0,1]
    int ffn_ratio = 4;
    std::uint64_t seed = 42;
    ClsAverage cls_average = ClsAverage::equal;

    // Low-resolution patch grid (stage 1 runs on the 2x downsampled image).
    int grid_h() const { return image_height / (2 * patch_size); }
    int grid_w() const { return image_width / (2 * patch_size); }
    int num_low_tokens() const { return grid_h() * grid_w(); }  // N
    int num_high_tokens() const { return 4 * num_low_tokens(); } // 4N
    int head_dim() const { return embed_dim / heads; }
    int ffn_dim() const { return ffn_ratio * embed_dim; }

    // Number of target tokens M = floor(alpha * N), clamped so both
    // clusters stay non-empty.
    int num_targets() const;

    // Throws Error(invalid_argument) when any invariant fails.
    void validate() const;
};

// Built-in tiny configuration used by the gradient checker and tests:
// D=8, h=2, L=2, 8x8 images, P=2, C=2.
ModelConfig tiny_config();

ModelConfig config_from_json(const std::string& json_text);
std::string config_to_json(const ModelConfig& cfg);

} // namespace sacvit
