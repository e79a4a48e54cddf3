#include "sacvit/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace sacvit {

// LayerNorm epsilon used across the encoder.
static constexpr double kLnEps = 1e-5;

void ClusterMask::validate(int n_tokens) const {
    if (clusters.empty()) throw_shape("cluster mask: no clusters");
    std::vector<char> seen(n_tokens, 0);
    int covered = 0;
    for (const auto& c : clusters) {
        for (int idx : c) {
            if (idx < 0 || idx >= n_tokens) {
                throw_shape("cluster mask: patch index out of range");
            }
            if (seen[idx]) throw_shape("cluster mask: duplicate patch index");
            seen[idx] = 1;
            ++covered;
        }
    }
    if (covered != n_tokens) {
        throw_shape("cluster mask: covers " + std::to_string(covered) + " of " +
                    std::to_string(n_tokens) + " patch tokens");
    }
}

template <typename T>
TapedModel<T> push_model(ad::Tape<T>& tape, const ModelConfig& cfg, const Params<T>& params,
                         bool trainable) {
    audit_shapes(params, cfg);
    TapedModel<T> model;
    model.cfg = &cfg;
    model.ids.layers.resize(params.layers.size());
    visit_params2(const_cast<Params<T>&>(params), model.ids,
                  [&](const std::string&, Mat<T>& m, int& id) {
                      id = trainable ? tape.param(m) : tape.leaf(m);
                  });
    return model;
}

template <typename T>
Mat<T> image_to_patches(const ImageT<T>& img, int patch_size) {
    if (img.height % patch_size != 0 || img.width % patch_size != 0) {
        throw_shape("image_to_patches: dims not divisible by patch size");
    }
    const int gh = img.height / patch_size;
    const int gw = img.width / patch_size;
    Mat<T> out(gh * gw, img.channels * patch_size * patch_size);
    for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
            T* row = out.row(r * gw + c);
            for (int ch = 0; ch < img.channels; ++ch) {
                for (int dy = 0; dy < patch_size; ++dy) {
                    for (int dx = 0; dx < patch_size; ++dx) {
                        row[(ch * patch_size + dy) * patch_size + dx] =
                            img.at(ch, r * patch_size + dy, c * patch_size + dx);
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
TokenSeq embed_patches(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                       Resolution res, MacCounter* counter, const std::string& stage_label) {
    const ModelConfig& cfg = *model.cfg;
    if (res == Resolution::mixed) throw_invalid("embed_patches: mixed is assembled elsewhere");
    const bool low = res == Resolution::low;
    const int want_h = low ? cfg.image_height / 2 : cfg.image_height;
    const int want_w = low ? cfg.image_width / 2 : cfg.image_width;
    if (img.channels != 3 || img.height != want_h || img.width != want_w) {
        throw_shape("embed_patches: image is " + std::to_string(img.channels) + "x" +
                    std::to_string(img.height) + "x" + std::to_string(img.width) +
                    ", expected 3x" + std::to_string(want_h) + "x" + std::to_string(want_w));
    }

    const int patches_id = tape.leaf(image_to_patches(img, cfg.patch_size));
    int proj = ad::op_matmul(tape, patches_id, model.ids.patch_w, counter, stage_label + "/embed");
    proj = ad::op_add_row(tape, proj, model.ids.patch_b);
    int seq = ad::op_concat_rows(tape, {model.ids.cls_token, proj});

    const int pos = low ? ad::op_pool_pos_grid(tape, model.ids.pos_embed, cfg.grid_h(), cfg.grid_w())
                        : model.ids.pos_embed;
    seq = ad::op_add(tape, seq, pos);

    TokenSeq out;
    out.id = seq;
    out.grid_h = low ? cfg.grid_h() : 2 * cfg.grid_h();
    out.grid_w = low ? cfg.grid_w() : 2 * cfg.grid_w();
    out.n_tokens = out.grid_h * out.grid_w;
    out.res = res;
    return out;
}

namespace {

// QKV projections + multi-head attention + output projection over one
// sequence (or cluster subsequence). Returns the projected n x D output.
template <typename T>
int mhsa_block(ad::Tape<T>& tape, const TapedModel<T>& model, int x_ln, int layer_index,
               MacCounter* counter, const std::string& stage_label,
               std::vector<Mat<T>>* head_rows) {
    const auto& lp = model.ids.layers[layer_index];
    const T logit_scale = T(1) / std::sqrt(T(model.cfg->head_dim()));
    int q = ad::op_add_row(tape, ad::op_matmul(tape, x_ln, lp.wq, counter, stage_label + "/qkv"),
                           lp.bq);
    int k = ad::op_add_row(tape, ad::op_matmul(tape, x_ln, lp.wk, counter, stage_label + "/qkv"),
                           lp.bk);
    int v = ad::op_add_row(tape, ad::op_matmul(tape, x_ln, lp.wv, counter, stage_label + "/qkv"),
                           lp.bv);
    int attn = ad::op_attention_heads(tape, q, k, v, model.cfg->heads, logit_scale, counter,
                                      stage_label + "/", head_rows);
    return ad::op_add_row(tape, ad::op_matmul(tape, attn, lp.wo, counter, stage_label + "/proj"),
                          lp.bo);
}

} // namespace

template <typename T>
int encoder_layer(ad::Tape<T>& tape, const TapedModel<T>& model, int x_id, int layer_index,
                  int n_tokens, const ClusterMask* mask, AttentionTrace* trace,
                  MacCounter* counter, const std::string& stage_label) {
    const auto& lp = model.ids.layers[layer_index];
    const int n_rows = tape.val(x_id).rows;
    if (n_rows != n_tokens + 1) throw_shape("encoder_layer: sequence rows");

    int ln1 = ad::op_layer_norm(tape, x_id, lp.ln1_g, lp.ln1_b, T(kLnEps));

    int mhsa;
    if (mask == nullptr) {
        std::vector<Mat<T>> head_rows;
        mhsa = mhsa_block(tape, model, ln1, layer_index, counter, stage_label,
                          trace ? &head_rows : nullptr);
        if (trace) {
            // Head-averaged class-attention over patch tokens; the
            // class->class entry is dropped and the rest kept unnormalized.
            std::vector<double> row(n_tokens, 0.0);
            for (const Mat<T>& r : head_rows) {
                for (int j = 0; j < n_tokens; ++j) row[j] += static_cast<double>(r.data[j + 1]);
            }
            for (double& v : row) v /= static_cast<double>(head_rows.size());
            trace->per_layer_cls_rows.push_back(std::move(row));
        }
    } else {
        if (trace) throw_invalid("encoder_layer: tracing is unmasked-only");
        mask->validate(n_tokens);
        const size_t k = mask->clusters.size();

        // Per-cluster attention over [class; cluster rows]; the class copy is
        // duplicated into each cluster and the updated copies averaged.
        std::vector<int> cluster_out(k);
        std::vector<double> weights(k);
        double wsum = 0.0;
        for (size_t c = 0; c < k; ++c) {
            std::vector<int> rows;
            rows.reserve(mask->clusters[c].size() + 1);
            rows.push_back(0);
            for (int idx : mask->clusters[c]) rows.push_back(idx + 1);
            int sub = ad::op_gather_rows(tape, ln1, std::move(rows));
            cluster_out[c] = mhsa_block(tape, model, sub, layer_index, counter, stage_label,
                                        static_cast<std::vector<Mat<T>>*>(nullptr));
            weights[c] = model.cfg->cls_average == ClsAverage::size_weighted
                             ? static_cast<double>(mask->clusters[c].size() + 1)
                             : 1.0;
            wsum += weights[c];
        }

        int cls_avg = -1;
        for (size_t c = 0; c < k; ++c) {
            int cls_c = ad::op_gather_rows(tape, cluster_out[c], {0});
            cls_c = ad::op_scale(tape, cls_c, static_cast<T>(weights[c] / wsum));
            cls_avg = c == 0 ? cls_c : ad::op_add(tape, cls_avg, cls_c);
        }

        // Reassemble in sequence order: concatenate [class; cluster patch
        // outputs...] and gather through the inverse permutation.
        std::vector<int> parts{cls_avg};
        std::vector<int> order(n_tokens + 1);
        order[0] = 0;
        int at = 1;
        for (size_t c = 0; c < k; ++c) {
            const int nc = static_cast<int>(mask->clusters[c].size());
            parts.push_back(ad::op_gather_rows(tape, cluster_out[c], [&] {
                std::vector<int> rows(nc);
                for (int i = 0; i < nc; ++i) rows[i] = i + 1;
                return rows;
            }()));
            for (int i = 0; i < nc; ++i) {
                order[mask->clusters[c][i] + 1] = at++;
            }
        }
        int packed = ad::op_concat_rows(tape, parts);
        mhsa = ad::op_gather_rows(tape, packed, order);
    }

    int x1 = ad::op_add(tape, x_id, mhsa);
    int ln2 = ad::op_layer_norm(tape, x1, lp.ln2_g, lp.ln2_b, T(kLnEps));
    int f1 = ad::op_gelu(
        tape, ad::op_add_row(tape, ad::op_matmul(tape, ln2, lp.ffn_w1, counter,
                                                 stage_label + "/ffn"),
                             lp.ffn_b1));
    int f2 = ad::op_add_row(
        tape, ad::op_matmul(tape, f1, lp.ffn_w2, counter, stage_label + "/ffn"), lp.ffn_b2);
    return ad::op_add(tape, x1, f2);
}

template <typename T>
TokenSeq forward_stack(ad::Tape<T>& tape, const TapedModel<T>& model, const TokenSeq& seq,
                       const ClusterMask* mask, AttentionTrace* trace, MacCounter* counter,
                       const std::string& stage_label) {
    TokenSeq out = seq;
    for (int l = 0; l < model.cfg->layers; ++l) {
        out.id = encoder_layer(tape, model, out.id, l, out.n_tokens, mask, trace, counter,
                               stage_label);
    }
    return out;
}

template <typename T>
int classify(ad::Tape<T>& tape, const TapedModel<T>& model, int seq_id, MacCounter* counter,
             const std::string& stage_label) {
    int cls = ad::op_gather_rows(tape, seq_id, {0});
    int logits = ad::op_matmul(tape, cls, model.ids.classifier_w, counter,
                               stage_label + "/classifier");
    return ad::op_add_row(tape, logits, model.ids.classifier_b);
}

#define SACVIT_ENCODER_INSTANTIATE(T)                                                         \
    template TapedModel<T> push_model(ad::Tape<T>&, const ModelConfig&, const Params<T>&,     \
                                      bool);                                                  \
    template Mat<T> image_to_patches(const ImageT<T>&, int);                                  \
    template TokenSeq embed_patches(ad::Tape<T>&, const TapedModel<T>&, const ImageT<T>&,     \
                                    Resolution, MacCounter*, const std::string&);             \
    template int encoder_layer(ad::Tape<T>&, const TapedModel<T>&, int, int, int,             \
                               const ClusterMask*, AttentionTrace*, MacCounter*,              \
                               const std::string&);                                           \
    template TokenSeq forward_stack(ad::Tape<T>&, const TapedModel<T>&, const TokenSeq&,      \
                                    const ClusterMask*, AttentionTrace*, MacCounter*,         \
                                    const std::string&);                                      \
    template int classify(ad::Tape<T>&, const TapedModel<T>&, int, MacCounter*,               \
                          const std::string&);

SACVIT_ENCODER_INSTANTIATE(float)
SACVIT_ENCODER_INSTANTIATE(double)

#undef SACVIT_ENCODER_INSTANTIATE

} // namespace sacvit
