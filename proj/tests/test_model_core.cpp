#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sacvit/checkpoint.hpp"
#include "sacvit/params.hpp"

using namespace sacvit;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());

    ModelConfig bad = cfg;
    bad.embed_dim = 9; // not divisible by heads=2
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.image_height = 10; // not divisible by 2P=4
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.beta = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);

    bad = cfg;
    bad.eta = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("config json round trip") {
    ModelConfig cfg = tiny_config();
    cfg.alpha = 0.3;
    cfg.cls_average = ClsAverage::size_weighted;
    const ModelConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.alpha == doctest::Approx(cfg.alpha));
    CHECK(back.cls_average == ClsAverage::size_weighted);
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(config_from_json("{not json"), Error);
    CHECK_THROWS_AS(config_from_json("{\"embed_dim\": 7}"), Error); // 7 % 6 heads
}

TEST_CASE("init_params is deterministic per seed") {
    ModelConfig cfg = tiny_config();
    const auto a = init_params<float>(cfg);
    const auto b = init_params<float>(cfg);
    CHECK(params_checksum(a) == params_checksum(b));

    ModelConfig other = cfg;
    other.seed = cfg.seed + 1;
    const auto c = init_params<float>(other);
    CHECK(params_checksum(a) != params_checksum(c));
}

TEST_CASE("init fills gains with ones and biases with zeros") {
    const auto p = init_params<float>(tiny_config());
    for (float v : p.layers[0].ln1_g.data) CHECK(v == 1.0f);
    for (float v : p.layers[0].bq.data) CHECK(v == 0.0f);
    for (float v : p.cls_token.data) CHECK(v == 0.0f);
    // Weights are truncated at 2 sigma.
    for (float v : p.layers[0].wq.data) CHECK(std::abs(v) <= 0.04f);
}

TEST_CASE("DeiT-S-shaped config lands near 22M parameters") {
    ModelConfig cfg; // defaults mirror DeiT-S at 224x224, C=1000
    const auto p = make_empty_params<float>(cfg);

    // Closed-form expectation, accumulated independently of visit_params.
    const std::size_t d = 384, f = 4 * 384, classes = 1000;
    std::size_t expect = 0;
    expect += 3 * 16 * 16 * d + d;      // patch projection
    expect += (196 + 1) * d;            // positional grid
    expect += d;                        // class token
    expect += 12 * (4 * (d * d + d)     // qkv + output projections
                    + (d * f + f + f * d + d) // ffn
                    + 4 * d);           // two layer norms
    expect += d * classes + classes;    // classifier
    expect += d * 4 * d + 4 * d;        // fusion map

    CHECK(param_count(p) == expect);
    CHECK(static_cast<double>(param_count(p)) ==
          doctest::Approx(22e6).epsilon(0.10));
}

TEST_CASE("audit_shapes flags inconsistent tensors") {
    ModelConfig cfg = tiny_config();
    auto p = init_params<float>(cfg);
    CHECK_NOTHROW(audit_shapes(p, cfg));
    p.layers[1].wq = Mat<float>(4, 4);
    CHECK_THROWS_AS(audit_shapes(p, cfg), Error);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelConfig cfg = tiny_config();
    const auto p = init_params<float>(cfg);
    const std::string path = temp_path("sacvit_ckpt_test.sacvit");
    save_checkpoint(p, cfg, path);
    const auto [loaded, cfg2] = load_checkpoint(path);
    CHECK(params_checksum(p) == params_checksum(loaded));
    CHECK(cfg2.embed_dim == cfg.embed_dim);
    CHECK(cfg2.seed == cfg.seed);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint load errors are distinct") {
    ModelConfig cfg = tiny_config();
    const auto p = init_params<float>(cfg);
    const std::string path = temp_path("sacvit_ckpt_err.sacvit");
    save_checkpoint(p, cfg, path);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }

    SUBCASE("truncating the blob by 4 bytes") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 4));
        out.close();
        try {
            load_checkpoint(path);
            FAIL("expected truncation error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::truncated);
        }
    }

    SUBCASE("editing a header shape") {
        // fusion_b is 1 x 32 in the tiny config; corrupt its shape field.
        const std::string needle = "\"shape\":[1,32]";
        const size_t at = bytes.rfind(needle);
        REQUIRE(at != std::string::npos);
        std::string edited = bytes;
        edited.replace(at, needle.size(), "\"shape\":[2,16]");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(edited.data(), static_cast<std::streamsize>(edited.size()));
        out.close();
        try {
            load_checkpoint(path);
            FAIL("expected shape error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::shape_mismatch);
        }
    }

    SUBCASE("bad magic") {
        std::string edited = bytes;
        const size_t at = edited.find("SACVIT01");
        REQUIRE(at != std::string::npos);
        edited.replace(at, 8, "SACVIT99");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(edited.data(), static_cast<std::streamsize>(edited.size()));
        out.close();
        try {
            load_checkpoint(path);
            FAIL("expected format error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::format);
        }
    }

    std::remove(path.c_str());
}

TEST_CASE("rng truncated normal stays inside two sigma") {
    Rng rng(12345);
    for (int i = 0; i < 5000; ++i) {
        const double z = rng.truncated_normal();
        CHECK(z >= -2.0);
        CHECK(z <= 2.0);
    }
}
