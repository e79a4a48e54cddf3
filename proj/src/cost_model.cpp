#include "sacvit/cost_model.hpp"

#include <algorithm>

#include <json.hpp>

#include "sacvit/pipeline.hpp"

namespace sacvit {

namespace {
using u64 = std::uint64_t;

u64 mhsa_macs(u64 n, u64 d) { return 4 * n * d * d + 2 * n * n * d; }
} // namespace

double CostReport::expected_total(double exit_fraction) const {
    const double ee = static_cast<double>(total_per_sample_exit);
    const double sac = static_cast<double>(total_per_sample_full - total_per_sample_exit);
    return ee + (1.0 - exit_fraction) * sac;
}

double CostReport::exit_fraction_for_budget(double budget_macs) const {
    const double sac = static_cast<double>(total_per_sample_full - total_per_sample_exit);
    if (sac <= 0.0) return 1.0;
    const double f = (static_cast<double>(total_per_sample_full) - budget_macs) / sac;
    return std::clamp(f, 0.0, 1.0);
}

std::string CostReport::to_json(double exit_fraction) const {
    nlohmann::ordered_json j;
    j["ee_macs"] = ee_macs;
    j["sac_macs"] = sac_macs;
    j["embed_macs"] = embed_macs;
    j["embed_ee_macs"] = embed_ee_macs;
    j["embed_sac_macs"] = embed_sac_macs;
    j["classifier_macs"] = classifier_macs;
    j["classifier_ee_macs"] = classifier_ee_macs;
    j["classifier_sac_macs"] = classifier_sac_macs;
    j["fusion_macs"] = fusion_macs;
    j["total_per_sample_exit"] = total_per_sample_exit;
    j["total_per_sample_full"] = total_per_sample_full;
    j["exit_fraction"] = exit_fraction;
    j["expected_total"] = expected_total(exit_fraction);
    j["paper_literal"] = {
        {"ee_mhsa_per_layer", literal_ee_mhsa},
        {"sac_target_mhsa_per_layer", literal_sac_target_mhsa},
        {"sac_nontarget_mhsa_per_layer", literal_sac_nontarget_mhsa},
        {"per_layer_total", literal_per_layer_total},
        {"stack_total", literal_stack_total},
    };
    return j.dump(2);
}

u64 encoder_stack_macs(u64 n, u64 d, u64 layers, u64 ffn_dim) {
    return layers * (mhsa_macs(n, d) + 2 * n * d * ffn_dim);
}

u64 macs_vanilla_vit(const ModelConfig& cfg, int image_h, int image_w) {
    if (image_h % cfg.patch_size != 0 || image_w % cfg.patch_size != 0) {
        throw_invalid("macs_vanilla_vit: resolution not divisible by patch size");
    }
    const u64 d = cfg.embed_dim;
    const u64 patches =
        static_cast<u64>(image_h / cfg.patch_size) * static_cast<u64>(image_w / cfg.patch_size);
    const u64 patch_dim = 3ULL * cfg.patch_size * cfg.patch_size;
    return encoder_stack_macs(patches + 1, d, cfg.layers, cfg.ffn_dim()) +
           patches * d * patch_dim + d * static_cast<u64>(cfg.num_classes);
}

std::map<std::string, u64> analytic_labels(const ModelConfig& cfg, bool clustered) {
    const u64 d = cfg.embed_dim;
    const u64 f = cfg.ffn_dim();
    const u64 layers = cfg.layers;
    const u64 n_low = cfg.num_low_tokens();
    const u64 n_high = cfg.num_high_tokens();
    const u64 patch_dim = 3ULL * cfg.patch_size * cfg.patch_size;
    const u64 classes = cfg.num_classes;

    std::map<std::string, u64> lab;
    // Stage 1 over N low-res patches + class token.
    const u64 n_ee = n_low + 1;
    lab["ee/embed"] = n_low * d * patch_dim;
    lab["ee/qkv"] = layers * 3 * n_ee * d * d;
    lab["ee/scores"] = layers * n_ee * n_ee * d;
    lab["ee/values"] = layers * n_ee * n_ee * d;
    lab["ee/proj"] = layers * n_ee * d * d;
    lab["ee/ffn"] = layers * 2 * n_ee * d * f;
    lab["ee/classifier"] = d * classes;

    lab["sac/embed"] = n_high * d * patch_dim;
    lab["sac/classifier"] = d * classes;
    if (clustered) {
        const u64 m = cfg.num_targets();
        const u64 n_t = 4 * m + 1;          // target cluster + class copy
        const u64 n_nt = (n_low - m) + 1;   // non-target cluster + class copy
        const u64 n_seq = 4 * m + (n_low - m) + 1;
        lab["sac/fusion"] = m * d * 4 * d;
        lab["sac/qkv"] = layers * 3 * (n_t + n_nt) * d * d;
        lab["sac/scores"] = layers * (n_t * n_t + n_nt * n_nt) * d;
        lab["sac/values"] = layers * (n_t * n_t + n_nt * n_nt) * d;
        lab["sac/proj"] = layers * (n_t + n_nt) * d * d;
        lab["sac/ffn"] = layers * 2 * n_seq * d * f;
    } else {
        const u64 n_full = n_high + 1;
        lab["sac/qkv"] = layers * 3 * n_full * d * d;
        lab["sac/scores"] = layers * n_full * n_full * d;
        lab["sac/values"] = layers * n_full * n_full * d;
        lab["sac/proj"] = layers * n_full * d * d;
        lab["sac/ffn"] = layers * 2 * n_full * d * f;
    }
    return lab;
}

CostReport macs_sac_vit(const ModelConfig& cfg) {
    cfg.validate();
    const auto lab = analytic_labels(cfg, /*clustered=*/true);
    CostReport r;
    r.ee_macs = lab.at("ee/qkv") + lab.at("ee/scores") + lab.at("ee/values") +
                lab.at("ee/proj") + lab.at("ee/ffn");
    r.sac_macs = lab.at("sac/qkv") + lab.at("sac/scores") + lab.at("sac/values") +
                 lab.at("sac/proj") + lab.at("sac/ffn");
    r.embed_ee_macs = lab.at("ee/embed");
    r.embed_sac_macs = lab.at("sac/embed");
    r.embed_macs = r.embed_ee_macs + r.embed_sac_macs;
    r.classifier_ee_macs = lab.at("ee/classifier");
    r.classifier_sac_macs = lab.at("sac/classifier");
    r.classifier_macs = r.classifier_ee_macs + r.classifier_sac_macs;
    r.fusion_macs = lab.at("sac/fusion");
    r.total_per_sample_exit = r.ee_macs + r.embed_ee_macs + r.classifier_ee_macs;
    r.total_per_sample_full = r.total_per_sample_exit + r.sac_macs + r.embed_sac_macs +
                              r.classifier_sac_macs + r.fusion_macs;

    const u64 d = cfg.embed_dim;
    const u64 n = cfg.num_low_tokens();
    const u64 m = cfg.num_targets();
    r.literal_ee_mhsa = mhsa_macs(n, d);
    r.literal_sac_target_mhsa = 16 * m * d * d + 2 * (4 * m) * (4 * m) * d;
    r.literal_sac_nontarget_mhsa = mhsa_macs(n - m, d);
    r.literal_per_layer_total =
        r.literal_ee_mhsa + r.literal_sac_target_mhsa + r.literal_sac_nontarget_mhsa;
    r.literal_stack_total = r.literal_per_layer_total * cfg.layers;
    return r;
}

CrosscheckResult diff_labels(const std::map<std::string, std::uint64_t>& analytic,
                             const MacCounter& instrumented) {
    CrosscheckResult res;
    res.analytic = analytic;
    res.instrumented = instrumented;
    u64 analytic_total = 0;
    for (const auto& [label, macs] : analytic) {
        analytic_total += macs;
        const auto it = instrumented.per_label.find(label);
        const u64 got = it == instrumented.per_label.end() ? 0 : it->second;
        if (macs != got) {
            res.per_label_delta[label] =
                static_cast<long long>(macs) - static_cast<long long>(got);
        }
    }
    for (const auto& [label, macs] : instrumented.per_label) {
        if (!analytic.count(label)) {
            res.per_label_delta[label] = -static_cast<long long>(macs);
        }
    }
    res.delta = static_cast<long long>(analytic_total) -
                static_cast<long long>(instrumented.total_macs);
    return res;
}

CrosscheckResult crosscheck(const ModelConfig& cfg, bool clustered) {
    cfg.validate();
    Params<float> params = init_params<float>(cfg);

    // Deterministic dummy input; values only shape the trace, not the counts.
    Image img(3, cfg.image_height, cfg.image_width);
    Rng rng(cfg.seed + 101);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());

    MacCounter counter;
    ad::Tape<float> tape(/*grad_enabled=*/false);
    TapedModel<float> model = push_model(tape, cfg, params, /*trainable=*/false);
    EeRun<float> ee = run_ee_stage(tape, model, img, /*eta=*/1.0, &counter);
    if (clustered) {
        const ClusterPartition partition = build_partition(ee.trace, cfg);
        run_sac_stage(tape, model, img, ee.final_seq, partition, &counter);
    } else {
        run_sac_stage_full(tape, model, img, &counter);
    }
    return diff_labels(analytic_labels(cfg, clustered), counter);
}

} // namespace sacvit
