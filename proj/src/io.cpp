#include "sacvit/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sacvit/params.hpp"

namespace sacvit {

static_assert(std::endian::native == std::endian::little,
              "raw tensor payloads are little-endian; big-endian hosts unsupported");

namespace {
constexpr char kMagic[8] = {'S', 'A', 'C', 'T', '0', '0', '0', '1'};
constexpr char kDtypeF32[4] = {'f', '3', '2', '\0'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
} // namespace

void write_raw_tensor(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_io("raw tensor: cannot open for write: " + path);
    out.write(kMagic, 8);
    out.write(kDtypeF32, 4);
    write_u32(out, static_cast<std::uint32_t>(img.channels));
    write_u32(out, static_cast<std::uint32_t>(img.height));
    write_u32(out, static_cast<std::uint32_t>(img.width));
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!out) throw_io("raw tensor: write failed: " + path);
}

Image read_raw_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("raw tensor: cannot open: " + path);
    char magic[8], dtype[4];
    std::uint32_t shape[3];
    in.read(magic, 8);
    in.read(dtype, 4);
    in.read(reinterpret_cast<char*>(shape), 12);
    if (!in) throw_truncated("raw tensor: short header: " + path);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw_format("raw tensor: bad magic in " + path);
    }
    if (std::memcmp(dtype, kDtypeF32, 4) != 0) {
        throw_format("raw tensor: unsupported dtype tag in " + path);
    }
    Image img(static_cast<int>(shape[0]), static_cast<int>(shape[1]),
              static_cast<int>(shape[2]));
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != img.data.size() * sizeof(float)) {
        throw_truncated("raw tensor: payload shorter than shape implies: " + path);
    }
    return img;
}

std::vector<Sample> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path index = fs::path(dir) / "labels.tsv";
    std::ifstream in(index);
    if (!in) throw_io("dataset: cannot open " + index.string());

    std::vector<Sample> samples;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw_format("dataset: " + index.string() + ":" + std::to_string(lineno) +
                         ": expected path<TAB>label");
        }
        Sample s;
        s.path = (fs::path(dir) / line.substr(0, tab)).string();
        try {
            s.label = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw_format("dataset: bad label at " + index.string() + ":" +
                         std::to_string(lineno));
        }
        s.image = read_raw_tensor(s.path);
        samples.push_back(std::move(s));
    }
    if (samples.empty()) throw_format("dataset: " + index.string() + " lists no samples");
    return samples;
}

void synth_dataset(const std::string& dir, int classes, int per_class, int height, int width,
                   std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (classes < 2 || per_class < 1 || height < 4 || width < 4) {
        throw_invalid("synth: need classes >= 2, per_class >= 1, dims >= 4");
    }
    fs::create_directories(dir);
    std::ostringstream labels;
    Rng rng(seed);
    const double sigma = std::min(height, width) / 6.0;
    for (int cls = 0; cls < classes; ++cls) {
        // Class centers spread on a circle around the image center.
        const double angle = 2.0 * 3.14159265358979323846 * cls / classes;
        const double cx0 = width / 2.0 + 0.25 * width * std::cos(angle);
        const double cy0 = height / 2.0 + 0.25 * height * std::sin(angle);
        for (int k = 0; k < per_class; ++k) {
            const double cx = cx0 + (rng.uniform() - 0.5) * 0.1 * width;
            const double cy = cy0 + (rng.uniform() - 0.5) * 0.1 * height;
            Image img(3, height, width);
            for (int c = 0; c < 3; ++c) {
                const double gain = 1.0 - 0.2 * c;
                for (int y = 0; y < height; ++y) {
                    for (int x = 0; x < width; ++x) {
                        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        const double blob = gain * std::exp(-d2 / (2.0 * sigma * sigma));
                        img.at(c, y, x) =
                            static_cast<float>(blob + 0.05 * (rng.uniform() - 0.5));
                    }
                }
            }
            char name[64];
            std::snprintf(name, sizeof(name), "sample_%03d_%03d.sact", cls, k);
            write_raw_tensor((fs::path(dir) / name).string(), img);
            labels << name << "\t" << cls << "\n";
        }
    }
    std::ofstream out(fs::path(dir) / "labels.tsv", std::ios::trunc);
    if (!out) throw_io("synth: cannot write labels.tsv");
    out << labels.str();
}

} // namespace sacvit
