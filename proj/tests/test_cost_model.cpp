#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "sacvit/cost_model.hpp"

using namespace sacvit;

TEST_CASE("golden single-pass totals at DeiT-S shape") {
    const ModelConfig cfg; // defaults: D=384, L=12, h=6, P=16, C=1000
    const double at224 = static_cast<double>(macs_vanilla_vit(cfg, 224, 224));
    const double at112 = static_cast<double>(macs_vanilla_vit(cfg, 112, 112));
    CHECK(std::abs(at224 - 4.60e9) / 4.60e9 < 0.02);
    CHECK(std::abs(at112 - 1.10e9) / 1.10e9 < 0.03);
}

TEST_CASE("encoder stack closed form on a one-unit example") {
    // n=2, D=1, one layer: 4*2*1 + 2*4*1 + (ffn) 2*2*1*4 = 32.
    CHECK(encoder_stack_macs(2, 1, 1, 4) == 32);
}

TEST_CASE("literal per-layer MHSA terms at N=49 M=24 D=384") {
    const ModelConfig cfg;
    const CostReport r = macs_sac_vit(cfg);
    // Direct evaluation of the three per-layer terms.
    const std::uint64_t d = 384, n = 49, m = 24;
    CHECK(r.literal_ee_mhsa == 4 * n * d * d + 2 * n * n * d);
    CHECK(r.literal_sac_target_mhsa == 16 * m * d * d + 2 * (4 * m) * (4 * m) * d);
    CHECK(r.literal_sac_nontarget_mhsa ==
          4 * (n - m) * d * d + 2 * (n - m) * (n - m) * d);
    // Frozen numeric values.
    CHECK(r.literal_ee_mhsa == 30745344ULL);
    CHECK(r.literal_sac_target_mhsa == 63700992ULL);
    CHECK(r.literal_sac_nontarget_mhsa == 15225600ULL);
    CHECK(r.literal_per_layer_total ==
          r.literal_ee_mhsa + r.literal_sac_target_mhsa + r.literal_sac_nontarget_mhsa);
    CHECK(r.literal_stack_total == 12 * r.literal_per_layer_total);
}

TEST_CASE("report totals are sums of their parts") {
    for (int hw : {224, 288}) {
        ModelConfig cfg;
        cfg.image_height = hw;
        cfg.image_width = hw;
        const CostReport r = macs_sac_vit(cfg);
        CHECK(r.embed_macs == r.embed_ee_macs + r.embed_sac_macs);
        CHECK(r.classifier_macs == r.classifier_ee_macs + r.classifier_sac_macs);
        CHECK(r.total_per_sample_exit ==
              r.ee_macs + r.embed_ee_macs + r.classifier_ee_macs);
        CHECK(r.total_per_sample_full ==
              r.total_per_sample_exit + r.sac_macs + r.embed_sac_macs +
                  r.classifier_sac_macs + r.fusion_macs);
    }
}

TEST_CASE("expected cost is affine and non-increasing in the exit fraction") {
    const ModelConfig cfg;
    const CostReport r = macs_sac_vit(cfg);
    CHECK(r.expected_total(1.0) ==
          doctest::Approx(static_cast<double>(r.total_per_sample_exit)));
    CHECK(r.expected_total(0.0) ==
          doctest::Approx(static_cast<double>(r.total_per_sample_full)));
    double prev = r.expected_total(0.0);
    for (double f = 0.1; f <= 1.0; f += 0.1) {
        const double cur = r.expected_total(f);
        CHECK(cur <= prev);
        prev = cur;
    }
    // Affine: midpoint property.
    const double mid = r.expected_total(0.5);
    CHECK(mid == doctest::Approx(0.5 * (r.expected_total(0.0) + r.expected_total(1.0))));
}

TEST_CASE("exit fraction for the published 1.75G operating point") {
    const ModelConfig cfg;
    const CostReport r = macs_sac_vit(cfg);
    const double f = r.exit_fraction_for_budget(1.75e9);
    CHECK(f == doctest::Approx(0.7646).epsilon(2e-3));
    CHECK(r.expected_total(f) == doctest::Approx(1.75e9).epsilon(1e-9));
    // Consistency with the headline reduction against the single-pass model:
    // 1.75G is a ~62% cut from the 224x224 full ViT cost.
    const double full = static_cast<double>(macs_vanilla_vit(cfg, 224, 224));
    CHECK(1.0 - 1.75e9 / full == doctest::Approx(0.62).epsilon(0.01));
}

TEST_CASE("clustered attention stays below full high-resolution attention") {
    // SAC-stage MHSA (target + non-target clusters) vs a single pass over all
    // 4N tokens, for every admissible M.
    for (const std::uint64_t d : {64ULL, 192ULL, 384ULL}) {
        for (const std::uint64_t n : {16ULL, 49ULL, 81ULL}) {
            const std::uint64_t full = 4 * (4 * n) * d * d + 2 * (4 * n) * (4 * n) * d;
            for (std::uint64_t m = 1; m < n; ++m) {
                const std::uint64_t target = 16 * m * d * d + 2 * (4 * m) * (4 * m) * d;
                const std::uint64_t nontarget =
                    4 * (n - m) * d * d + 2 * (n - m) * (n - m) * d;
                CHECK(target + nontarget < full);
            }
        }
    }
    // With the EE stage included the two-stage total still wins at the
    // default ratio.
    ModelConfig cfg;
    const CostReport r = macs_sac_vit(cfg);
    CHECK(r.literal_per_layer_total <
          4 * 196ULL * 384 * 384 + 2 * 196ULL * 196 * 384);
}

TEST_CASE("crosscheck: analytic equals instrumented exactly on the tiny config") {
    const ModelConfig cfg = tiny_config();
    for (bool clustered : {true, false}) {
        const CrosscheckResult res = crosscheck(cfg, clustered);
        CHECK(res.delta == 0);
        CHECK(res.per_label_delta.empty());
    }
}

TEST_CASE("crosscheck on a mid-size config") {
    ModelConfig cfg;
    cfg.embed_dim = 24;
    cfg.heads = 4;
    cfg.layers = 3;
    cfg.patch_size = 8;
    cfg.image_height = 64;
    cfg.image_width = 64; // low grid 4x4
    cfg.num_classes = 7;
    for (bool clustered : {true, false}) {
        const CrosscheckResult res = crosscheck(cfg, clustered);
        CHECK(res.delta == 0);
        CHECK(res.per_label_delta.empty());
    }
}

TEST_CASE("a mis-sized analytic term is flagged with its label") {
    const ModelConfig cfg = tiny_config();
    const CrosscheckResult good = crosscheck(cfg, true);
    auto analytic = good.analytic;
    analytic["sac/ffn"] += 1234;
    const CrosscheckResult bad = diff_labels(analytic, good.instrumented);
    CHECK(bad.delta == 1234);
    REQUIRE(bad.per_label_delta.count("sac/ffn") == 1);
    CHECK(bad.per_label_delta.at("sac/ffn") == 1234);
    CHECK(bad.per_label_delta.size() == 1);
}

TEST_CASE("cost report serializes with fixed field names") {
    const ModelConfig cfg = tiny_config();
    const CostReport r = macs_sac_vit(cfg);
    const auto j = nlohmann::json::parse(r.to_json(0.25));
    for (const char* key :
         {"ee_macs", "sac_macs", "embed_macs", "classifier_macs", "fusion_macs",
          "total_per_sample_exit", "total_per_sample_full", "expected_total",
          "paper_literal"}) {
        CHECK(j.contains(key));
    }
    CHECK(j["ee_macs"].get<std::uint64_t>() == r.ee_macs);
    CHECK(j["expected_total"].get<double>() == doctest::Approx(r.expected_total(0.25)));
    CHECK(j["paper_literal"]["stack_total"].get<std::uint64_t>() == r.literal_stack_total);
}
