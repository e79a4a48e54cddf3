#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sacvit/config.hpp"
#include "sacvit/tensor.hpp"

namespace sacvit {

// Analytic MAC totals for both stages, split the same way the instrumented
// counter labels its matmuls. All counts are per sample; 1 MAC = 1 reported
// FLOP and only matmuls count.
struct CostReport {
    std::uint64_t ee_macs = 0;  // EE encoder stack (MHSA + FFN)
    std::uint64_t sac_macs = 0; // SAC encoder stack
    std::uint64_t embed_ee_macs = 0;
    std::uint64_t embed_sac_macs = 0;
    std::uint64_t embed_macs = 0;
    std::uint64_t classifier_ee_macs = 0;
    std::uint64_t classifier_sac_macs = 0;
    std::uint64_t classifier_macs = 0;
    std::uint64_t fusion_macs = 0;
    std::uint64_t total_per_sample_exit = 0; // EE path only
    std::uint64_t total_per_sample_full = 0; // both stages

    // MHSA-only per-layer figures with the class token and FFN left out, the
    // way the complexity formulas present them.
    std::uint64_t literal_ee_mhsa = 0;
    std::uint64_t literal_sac_target_mhsa = 0;
    std::uint64_t literal_sac_nontarget_mhsa = 0;
    std::uint64_t literal_per_layer_total = 0;
    std::uint64_t literal_stack_total = 0;

    // ee + (1 - exit_fraction) * sac
    double expected_total(double exit_fraction) const;
    // The exit fraction at which expected_total hits the budget, clamped to
    // [0, 1].
    double exit_fraction_for_budget(double budget_macs) const;

    std::string to_json(double exit_fraction) const;
};

// Encoder stack MACs for n tokens (class included): per layer
// 4nD^2 + 2n^2 D for MHSA plus 2 n D ffn_dim for the FFN.
std::uint64_t encoder_stack_macs(std::uint64_t n_tokens_incl_cls, std::uint64_t embed_dim,
                                 std::uint64_t layers, std::uint64_t ffn_dim);

// Plain single-pass ViT cost at the given input resolution: encoder stack
// over all patches + class token, patch embedding, classifier.
std::uint64_t macs_vanilla_vit(const ModelConfig& cfg, int image_h, int image_w);

// Full two-stage accounting for cfg (clustered SAC stage).
CostReport macs_sac_vit(const ModelConfig& cfg);

// Per-label analytic counts matching the instrumented counter's labels.
// clustered=false models the single-cluster full-resolution SAC pass.
std::map<std::string, std::uint64_t> analytic_labels(const ModelConfig& cfg, bool clustered);

struct CrosscheckResult {
    long long delta = 0; // analytic - instrumented
    std::map<std::string, long long> per_label_delta;
    MacCounter instrumented;
    std::map<std::string, std::uint64_t> analytic;
};

// Label-by-label comparison of an analytic count map against an instrumented
// counter; mismatched labels land in per_label_delta.
CrosscheckResult diff_labels(const std::map<std::string, std::uint64_t>& analytic,
                             const MacCounter& instrumented);

// Runs an instrumented two-stage forward on a deterministic dummy sample and
// compares against the analytic model, label by label. Contract: delta == 0.
CrosscheckResult crosscheck(const ModelConfig& cfg, bool clustered);

} // namespace sacvit
