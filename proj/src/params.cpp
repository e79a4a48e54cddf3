#include "sacvit/params.hpp"

#include <cmath>

namespace sacvit {

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::normal() {
    // Box-Muller; u1 shifted away from zero for the log.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::truncated_normal() {
    for (;;) {
        const double z = normal();
        if (z >= -2.0 && z <= 2.0) return z;
    }
}

namespace {

// Initialization class of a parameter, keyed by its leaf name.
enum class InitKind { normal, zero, one };

InitKind init_kind(const std::string& name) {
    const auto leaf = name.find('/') == std::string::npos ? name : name.substr(name.find('/') + 1);
    if (leaf == "ln1_g" || leaf == "ln2_g") return InitKind::one;
    if (leaf == "patch_w" || leaf == "pos_embed" || leaf == "classifier_w" ||
        leaf == "fusion_w" || leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo" ||
        leaf == "ffn_w1" || leaf == "ffn_w2") {
        return InitKind::normal;
    }
    return InitKind::zero;
}

} // namespace

template <typename T>
Params<T> make_empty_params(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const int patch_dim = 3 * cfg.patch_size * cfg.patch_size;
    const int n_high = cfg.num_high_tokens();
    const int f = cfg.ffn_dim();

    Params<T> p;
    p.patch_w = Mat<T>(patch_dim, d);
    p.patch_b = Mat<T>(1, d);
    p.pos_embed = Mat<T>(n_high + 1, d);
    p.cls_token = Mat<T>(1, d);
    p.layers.resize(cfg.layers);
    for (auto& lp : p.layers) {
        lp.wq = Mat<T>(d, d);
        lp.bq = Mat<T>(1, d);
        lp.wk = Mat<T>(d, d);
        lp.bk = Mat<T>(1, d);
        lp.wv = Mat<T>(d, d);
        lp.bv = Mat<T>(1, d);
        lp.wo = Mat<T>(d, d);
        lp.bo = Mat<T>(1, d);
        lp.ln1_g = Mat<T>(1, d);
        lp.ln1_b = Mat<T>(1, d);
        lp.ffn_w1 = Mat<T>(d, f);
        lp.ffn_b1 = Mat<T>(1, f);
        lp.ffn_w2 = Mat<T>(f, d);
        lp.ffn_b2 = Mat<T>(1, d);
        lp.ln2_g = Mat<T>(1, d);
        lp.ln2_b = Mat<T>(1, d);
    }
    p.classifier_w = Mat<T>(d, cfg.num_classes);
    p.classifier_b = Mat<T>(1, cfg.num_classes);
    p.fusion_w = Mat<T>(d, 4 * d);
    p.fusion_b = Mat<T>(1, 4 * d);
    return p;
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg) {
    Params<T> p = make_empty_params<T>(cfg);
    Rng rng(cfg.seed);
    visit_params(p, [&](const std::string& name, Mat<T>& m) {
        switch (init_kind(name)) {
        case InitKind::normal:
            for (T& v : m.data) v = static_cast<T>(0.02 * rng.truncated_normal());
            break;
        case InitKind::one:
            for (T& v : m.data) v = T(1);
            break;
        case InitKind::zero:
            break;
        }
    });
    return p;
}

template <typename T>
void audit_shapes(const Params<T>& p, const ModelConfig& cfg) {
    if (static_cast<int>(p.layers.size()) != cfg.layers) {
        throw_shape("params: expected " + std::to_string(cfg.layers) + " layers, have " +
                    std::to_string(p.layers.size()));
    }
    Params<T> expect = make_empty_params<T>(cfg);
    visit_params2(expect, const_cast<Params<T>&>(p),
                  [](const std::string& name, Mat<T>& e, Mat<T>& got) {
                      if (e.rows != got.rows || e.cols != got.cols) {
                          throw_shape("params: " + name + " is " + std::to_string(got.rows) +
                                      "x" + std::to_string(got.cols) + ", expected " +
                                      std::to_string(e.rows) + "x" + std::to_string(e.cols));
                      }
                  });
}

template <typename T>
std::size_t param_count(const Params<T>& p) {
    std::size_t n = 0;
    visit_params(p, [&](const std::string&, const Mat<T>& m) { n += m.size(); });
    return n;
}

std::uint64_t params_checksum(const Params<float>& p) {
    std::uint64_t h = 1469598103934665603ULL;
    visit_params(p, [&](const std::string&, const Mat<float>& m) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(m.data.data());
        for (size_t i = 0; i < m.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    });
    return h;
}

Params<double> params_to_double(const Params<float>& p) {
    Params<double> out;
    out.layers.resize(p.layers.size());
    visit_params2(const_cast<Params<float>&>(p), out,
                  [](const std::string&, Mat<float>& src, Mat<double>& dst) {
                      dst = Mat<double>(src.rows, src.cols);
                      for (size_t i = 0; i < src.size(); ++i) {
                          dst.data[i] = static_cast<double>(src.data[i]);
                      }
                  });
    return out;
}

#define SACVIT_PARAMS_INSTANTIATE(T)                              \
    template Params<T> make_empty_params<T>(const ModelConfig&);  \
    template Params<T> init_params<T>(const ModelConfig&);        \
    template void audit_shapes(const Params<T>&, const ModelConfig&); \
    template std::size_t param_count(const Params<T>&);

SACVIT_PARAMS_INSTANTIATE(float)
SACVIT_PARAMS_INSTANTIATE(double)

#undef SACVIT_PARAMS_INSTANTIATE

} // namespace sacvit
