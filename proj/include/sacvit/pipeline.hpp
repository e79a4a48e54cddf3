#pragma once

#include <cstdint>
#include <vector>

#include "sacvit/clustering.hpp"
#include "sacvit/encoder.hpp"

namespace sacvit {

enum class Stage { EE, SAC };

// Result of one classification head: the full distribution, the argmax and
// its probability, and whether inference terminates at this stage.
template <typename T>
struct StageOutcome {
    std::vector<T> p;
    int predicted = -1;
    T confidence = T(0);
    bool exited = false;
    Stage stage = Stage::EE;
};

struct ExitDecision {
    int predicted;
    double confidence;
    bool exited;
};

// argmax with lowest-index tie-breaking; exits iff p[j] > eta (strict).
ExitDecision decide_exit(const std::vector<double>& p, double eta);

template <typename T>
struct EeRun {
    StageOutcome<T> outcome;
    TokenSeq final_seq; // low-res representation kept for reuse
    AttentionTrace trace;
    int logits_id = -1;
    int probs_id = -1;
};

// Stage 1: 2x2 mean-pool the input, embed at low resolution, run the full
// unmasked stack with class-attention tracing, classify, decide the exit.
template <typename T>
EeRun<T> run_ee_stage(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                      double eta, MacCounter* counter = nullptr);

template <typename T>
struct SacRun {
    StageOutcome<T> outcome;
    int logits_id = -1;
    int probs_id = -1;
    int mixed_seq_id = -1;
};

// Full-resolution patch embedding of the whole image with rows selected by
// partition.target_high, in partition order: 4M x D.
template <typename T>
int gather_high_res_targets(ad::Tape<T>& tape, const TapedModel<T>& model,
                            const ImageT<T>& img, const ClusterPartition& partition,
                            MacCounter* counter = nullptr);

// Expands each EE target row through the fusion map (D -> 4D), reshapes to
// four D-rows per source in mapped sub-token order, and adds the result to
// the high-resolution target rows.
template <typename T>
int fuse_features(ad::Tape<T>& tape, const TapedModel<T>& model, int ee_targets_id,
                  int high_targets_id, MacCounter* counter = nullptr);

// Stage 2: assemble [class; fused targets; reused non-targets], run the
// cluster-masked stack, classify. The class token restarts from the learned
// class-token parameter plus its positional embedding.
template <typename T>
SacRun<T> run_sac_stage(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                        const TokenSeq& ee_final, const ClusterPartition& partition,
                        MacCounter* counter = nullptr);

// SAC computation over all 4N full-resolution tokens in a single cluster,
// with no reuse and no fusion (the schedule's pre-clustering phase, also the
// no-clustering cost crosscheck path).
template <typename T>
SacRun<T> run_sac_stage_full(ad::Tape<T>& tape, const TapedModel<T>& model,
                             const ImageT<T>& img, MacCounter* counter = nullptr);

struct InferenceRecord {
    StageOutcome<float> outcome;
    std::uint64_t macs = 0;
};

// End-to-end inference: EE, then SAC only when the exit criterion fails.
InferenceRecord run_pipeline(const ModelConfig& cfg, const Params<float>& params,
                             const Image& img, double eta);

} // namespace sacvit
