#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "sacvit/pipeline.hpp"

namespace sacvit {

enum class LossMode { ce_kl, ce_ce };

struct TrainConfig {
    int epochs = 10;
    int phase1_epochs = 5; // clustering disabled for the first epochs
    double learning_rate = 0.05;
    int batch_size = 8;
    LossMode loss_mode = LossMode::ce_kl;
    std::uint64_t seed = 1;
    double momentum = 0.0;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& json_text);

// total = ce_sac + second_term; the second term is KL(p_ee || p_sac) or
// CE(p_ee, y) depending on the mode.
template <typename T>
struct LossBreakdown {
    T ce_sac = T(0);
    T second_term = T(0);
    T total = T(0);
};

// Loss on detached distributions: CE from the log of the true-class
// probability, KL = sum p_ee * log(p_ee / p_sac), with 1e-12 clamping
// inside the logs.
template <typename T>
LossBreakdown<T> compute_loss(const std::vector<T>& p_ee, const std::vector<T>& p_sac,
                              int label, LossMode mode);

template <typename T>
struct TapeLoss {
    int total_id = -1;
    int ce_sac_id = -1;
    int second_id = -1;
};

// Same loss assembled from tape nodes (softmax outputs) so gradients flow to
// both stages.
template <typename T>
TapeLoss<T> loss_on_tape(ad::Tape<T>& tape, int probs_ee_id, int probs_sac_id, int label,
                         LossMode mode);

template <typename T>
struct TrainForward {
    StageOutcome<T> ee_outcome;
    StageOutcome<T> sac_outcome;
    TapeLoss<T> loss;
};

// Both stages with eta pinned to 1 (no sample skips the second stage during
// training). clustered=false runs the single-cluster full-resolution phase.
// Index selection is non-differentiable routing; the gradient checker pins
// the partition across perturbed evaluations via fixed_partition.
template <typename T>
TrainForward<T> training_forward(ad::Tape<T>& tape, const TapedModel<T>& model,
                                 const ImageT<T>& img, int label, LossMode mode,
                                 bool clustered, MacCounter* counter = nullptr,
                                 const ClusterPartition* fixed_partition = nullptr);

// Mean loss over a batch, backward, gradients read back in parameter order.
template <typename T>
struct BatchResult {
    LossBreakdown<T> loss; // batch mean
    int ee_correct = 0;
    int sac_correct = 0;
    Params<T> grads;
};

template <typename T>
struct TrainSample {
    ImageT<T> image;
    int label = 0;
};

template <typename T>
BatchResult<T> backward(const ModelConfig& cfg, const Params<T>& params,
                        const std::vector<const TrainSample<T>*>& batch, LossMode mode,
                        bool clustered);

// Plain SGD: p -= lr * g.
template <typename T>
void sgd_step(Params<T>& params, const Params<T>& grads, double lr);

struct TrainLog {
    std::string jsonl;             // one JSON object per epoch
    double final_ee_accuracy = 0;  // train accuracy, last epoch
    double final_sac_accuracy = 0;
    int steps = 0;
};

// Two-phase toy training: phase 1 (no clustering) then phase 2 with the full
// partition/reuse/fusion path. Deterministic for a given seed.
TrainLog train_toy(Params<float>& params, const ModelConfig& cfg,
                   const std::vector<TrainSample<float>>& dataset, const TrainConfig& tcfg,
                   std::ostream* log_stream = nullptr);

struct GradCheckResult {
    double max_rel_err = 0;
    bool pass = false;
    std::string worst_param;
};

// Central finite differences against the tape gradients, every parameter
// scalar, 64-bit precision. Threshold: relative error 1e-4.
GradCheckResult gradient_check(const ModelConfig& cfg, LossMode mode, bool clustered,
                               int n_samples = 2);

// All four mode/phase combinations; returns the worst.
GradCheckResult gradient_check_all(const ModelConfig& cfg);

} // namespace sacvit
