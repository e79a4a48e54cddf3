#pragma once

#include <string>
#include <vector>

#include "sacvit/autodiff.hpp"
#include "sacvit/config.hpp"
#include "sacvit/params.hpp"

namespace sacvit {

enum class Resolution { low, high, mixed };

// Token sequence on a tape: (n_tokens + 1) x D with the class token at row 0.
struct TokenSeq {
    int id = -1;
    int n_tokens = 0;
    int grid_h = 0;
    int grid_w = 0;
    Resolution res = Resolution::low;
};

// Head-averaged class-attention rows (class->class entry dropped, not
// renormalized) captured per layer, plus the moving average once computed.
struct AttentionTrace {
    std::vector<std::vector<double>> per_layer_cls_rows;
    std::vector<double> running_avg;
};

// Partition of patch token positions into attention clusters. Positions are
// 0-based patch indices (sequence row = position + 1); the class token is
// shared between all clusters.
struct ClusterMask {
    std::vector<std::vector<int>> clusters;

    // Throws Error(shape_mismatch) unless clusters disjointly cover
    // {0..n_tokens-1}.
    void validate(int n_tokens) const;
};

// A model whose parameters have been pushed onto a tape.
template <typename T>
struct TapedModel {
    const ModelConfig* cfg = nullptr;
    ParamIds ids;
};

template <typename T>
TapedModel<T> push_model(ad::Tape<T>& tape, const ModelConfig& cfg, const Params<T>& params,
                         bool trainable);

// Flattens an image into a (n_patches x channels*P*P) matrix, patches in
// row-major grid order, each patch channel-major.
template <typename T>
Mat<T> image_to_patches(const ImageT<T>& img, int patch_size);

// Patch embedding + class token + positional embedding. For Resolution::low
// the positional grid is 2x2 mean-pooled from the full-resolution grid.
template <typename T>
TokenSeq embed_patches(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                       Resolution res, MacCounter* counter, const std::string& stage_label);

// One pre-LN transformer layer: LN -> MHSA -> residual -> LN -> FFN ->
// residual, attention logits scaled by 1/sqrt(D/h). With a mask, attention
// runs independently inside each cluster over [class; cluster] and the
// per-cluster class outputs are averaged before the residual. With a trace,
// the head-averaged class-attention row is appended.
template <typename T>
int encoder_layer(ad::Tape<T>& tape, const TapedModel<T>& model, int x_id, int layer_index,
                  int n_tokens, const ClusterMask* mask, AttentionTrace* trace,
                  MacCounter* counter, const std::string& stage_label);

template <typename T>
TokenSeq forward_stack(ad::Tape<T>& tape, const TapedModel<T>& model, const TokenSeq& seq,
                       const ClusterMask* mask, AttentionTrace* trace, MacCounter* counter,
                       const std::string& stage_label);

// Classifier logits from the class token row: 1 x C.
template <typename T>
int classify(ad::Tape<T>& tape, const TapedModel<T>& model, int seq_id, MacCounter* counter,
             const std::string& stage_label);

} // namespace sacvit
