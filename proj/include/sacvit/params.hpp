#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sacvit/config.hpp"
#include "sacvit/tensor.hpp"

namespace sacvit {

// One encoder layer's parameters. M is Mat<T> for real parameter storage and
// int when the same structure tracks tape node ids.
template <typename M>
struct LayerParamsT {
    M wq, bq, wk, bk, wv, bv, wo, bo;
    M ln1_g, ln1_b;
    M ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    M ln2_g, ln2_b;
};

template <typename M>
struct ParamSetT {
    M patch_w, patch_b;    // (3P^2 x D), (1 x D)
    M pos_embed;           // (4N+1 x D), full-resolution grid + class row
    M cls_token;           // (1 x D)
    std::vector<LayerParamsT<M>> layers;
    M classifier_w, classifier_b; // (D x C), (1 x C)
    M fusion_w, fusion_b;         // (D x 4D), (1 x 4D)
};

template <typename T>
using Params = ParamSetT<Mat<T>>;
using ParamIds = ParamSetT<int>;

// Visits every parameter in a fixed order; f(name, member). The order is the
// contract for RNG consumption, checkpoint layout and gradient extraction.
template <typename M, typename F>
void visit_params(ParamSetT<M>& p, F&& f) {
    f("patch_w", p.patch_w);
    f("patch_b", p.patch_b);
    f("pos_embed", p.pos_embed);
    f("cls_token", p.cls_token);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& lp = p.layers[l];
        const std::string pre = "layer" + std::to_string(l) + "/";
        f(pre + "wq", lp.wq);
        f(pre + "bq", lp.bq);
        f(pre + "wk", lp.wk);
        f(pre + "bk", lp.bk);
        f(pre + "wv", lp.wv);
        f(pre + "bv", lp.bv);
        f(pre + "wo", lp.wo);
        f(pre + "bo", lp.bo);
        f(pre + "ln1_g", lp.ln1_g);
        f(pre + "ln1_b", lp.ln1_b);
        f(pre + "ffn_w1", lp.ffn_w1);
        f(pre + "ffn_b1", lp.ffn_b1);
        f(pre + "ffn_w2", lp.ffn_w2);
        f(pre + "ffn_b2", lp.ffn_b2);
        f(pre + "ln2_g", lp.ln2_g);
        f(pre + "ln2_b", lp.ln2_b);
    }
    f("classifier_w", p.classifier_w);
    f("classifier_b", p.classifier_b);
    f("fusion_w", p.fusion_w);
    f("fusion_b", p.fusion_b);
}

template <typename M, typename F>
void visit_params(const ParamSetT<M>& p, F&& f) {
    visit_params(const_cast<ParamSetT<M>&>(p),
                 [&](const std::string& name, M& m) { f(name, static_cast<const M&>(m)); });
}

// Parallel visit over two structurally identical sets.
template <typename A, typename B, typename F>
void visit_params2(ParamSetT<A>& a, ParamSetT<B>& b, F&& f) {
    std::vector<A*> av;
    visit_params(a, [&](const std::string&, A& m) { av.push_back(&m); });
    size_t i = 0;
    visit_params(b, [&](const std::string& name, B& m) { f(name, *av[i++], m); });
}

// Deterministic scalar RNG (splitmix64 + Box-Muller); identical streams
// across platforms for a given seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    double uniform();              // [0, 1)
    double normal();               // standard normal
    double truncated_normal();     // standard normal restricted to [-2, 2]
    std::uint64_t next_u64();

  private:
    std::uint64_t state_;
};

// Allocates every tensor at the shapes implied by cfg, zero-filled.
template <typename T>
Params<T> make_empty_params(const ModelConfig& cfg);

// Deterministic initialization from cfg.seed: truncated-normal std 0.02 for
// weight matrices and the positional grid, ones for LN gains, zeros for
// biases and the class token.
template <typename T>
Params<T> init_params(const ModelConfig& cfg);

// Verifies every tensor shape against cfg; throws Error(shape_mismatch).
template <typename T>
void audit_shapes(const Params<T>& p, const ModelConfig& cfg);

template <typename T>
std::size_t param_count(const Params<T>& p);

// FNV-1a over all tensor bytes in visit order.
std::uint64_t params_checksum(const Params<float>& p);

Params<double> params_to_double(const Params<float>& p);

} // namespace sacvit
