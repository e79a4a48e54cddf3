#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sacvit/tensor.hpp"

namespace sacvit {

// Raw tensor file: 8-byte magic "SACT0001", 4-byte dtype tag "f32\0",
// shape (channels, height, width) as little-endian uint32, then the
// channel-major float32 payload.
void write_raw_tensor(const std::string& path, const Image& img);
Image read_raw_tensor(const std::string& path);

struct Sample {
    Image image;
    int label = 0;
    std::string path;
};

// A labeled dataset directory: raw tensor files plus a labels.tsv index,
// one "path<TAB>label" line per sample.
std::vector<Sample> load_dataset(const std::string& dir);

// Seeded synthetic dataset: one Gaussian blob per class at a class-specific
// position, with per-sample jitter and noise. Writes tensors + labels.tsv.
void synth_dataset(const std::string& dir, int classes, int per_class, int height, int width,
                   std::uint64_t seed);

} // namespace sacvit
