#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "sacvit/encoder.hpp"

using namespace sacvit;

namespace {

// ---- independent reference layer -------------------------------------------
//
// Full-sequence attention with cluster restriction expressed as additive
// -1e9 logits, the class query getting one masked softmax per cluster and the
// per-cluster class outputs averaged after the output projection. A different
// route than the library's gather/compute/scatter layer on purpose.

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
    return add_row_broadcast(matmul(x, w), b);
}

template <typename T>
Mat<T> oracle_layer(const Mat<T>& x, const Params<T>& params, int layer, int heads,
                    const std::vector<std::vector<int>>* clusters, ClsAverage cls_avg) {
    const auto& lp = params.layers[layer];
    const int n = x.rows;
    const int d = x.cols;
    const int dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));

    const Mat<T> ln1 = layer_norm(x, lp.ln1_g, lp.ln1_b, T(1e-5));
    const Mat<T> q = linear(ln1, lp.wq, lp.bq);
    const Mat<T> k = linear(ln1, lp.wk, lp.bk);
    const Mat<T> v = linear(ln1, lp.wv, lp.bv);

    std::vector<std::vector<int>> groups;
    if (clusters) {
        groups = *clusters;
    } else {
        groups.emplace_back(n - 1);
        std::iota(groups.back().begin(), groups.back().end(), 0);
    }

    // Per-cluster full-matrix attention (heads concatenated), then W_O.
    std::vector<Mat<T>> proj_per_cluster;
    for (const auto& cluster : groups) {
        std::vector<char> allowed(n, 0);
        allowed[0] = 1;
        for (int idx : cluster) allowed[idx + 1] = 1;

        Mat<T> concat(n, d);
        for (int h = 0; h < heads; ++h) {
            Mat<T> logits(n, n);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    T dot = T(0);
                    for (int e = 0; e < dh; ++e) {
                        dot += q.at(i, h * dh + e) * k.at(j, h * dh + e);
                    }
                    logits.at(i, j) = allowed[j] ? dot * scale : T(-1e9);
                }
            }
            const Mat<T> p = softmax_rows(logits);
            for (int i = 0; i < n; ++i) {
                for (int e = 0; e < dh; ++e) {
                    T acc = T(0);
                    for (int j = 0; j < n; ++j) acc += p.at(i, j) * v.at(j, h * dh + e);
                    concat.at(i, h * dh + e) = acc;
                }
            }
        }
        proj_per_cluster.push_back(linear(concat, lp.wo, lp.bo));
    }

    Mat<T> mhsa(n, d);
    double wsum = 0.0;
    std::vector<double> weights(groups.size());
    for (size_t c = 0; c < groups.size(); ++c) {
        weights[c] =
            cls_avg == ClsAverage::size_weighted ? double(groups[c].size() + 1) : 1.0;
        wsum += weights[c];
    }
    for (size_t c = 0; c < groups.size(); ++c) {
        for (int j = 0; j < d; ++j) {
            mhsa.at(0, j) += static_cast<T>(weights[c] / wsum) * proj_per_cluster[c].at(0, j);
        }
        for (int idx : groups[c]) {
            for (int j = 0; j < d; ++j) mhsa.at(idx + 1, j) = proj_per_cluster[c].at(idx + 1, j);
        }
    }

    const Mat<T> x1 = add(x, mhsa);
    const Mat<T> ln2 = layer_norm(x1, lp.ln2_g, lp.ln2_b, T(1e-5));
    const Mat<T> f = linear(gelu(linear(ln2, lp.ffn_w1, lp.ffn_b1)), lp.ffn_w2, lp.ffn_b2);
    return add(x1, f);
}

template <typename T>
Mat<T> run_layer(const ModelConfig& cfg, const Params<T>& params, const Mat<T>& x,
                 const ClusterMask* mask, MacCounter* counter = nullptr) {
    ad::Tape<T> tape(false);
    TapedModel<T> model = push_model(tape, cfg, params, false);
    const int out =
        encoder_layer(tape, model, tape.leaf(x), 0, x.rows - 1, mask, nullptr, counter, "t");
    return tape.val(out);
}

ModelConfig small_cfg(int d = 8, int heads = 2, int layers = 2) {
    ModelConfig cfg = tiny_config();
    cfg.embed_dim = d;
    cfg.heads = heads;
    cfg.layers = layers;
    return cfg;
}

template <typename T>
Mat<T> random_mat(int rows, int cols, Rng& rng) {
    Mat<T> m(rows, cols);
    for (T& v : m.data) v = static_cast<T>(rng.uniform() * 2.0 - 1.0);
    return m;
}

// Random partition of {0..n-1} into k non-empty clusters.
std::vector<std::vector<int>> random_partition(int n, int k, Rng& rng) {
    std::vector<std::vector<int>> out(k);
    for (int i = 0; i < k; ++i) out[i].push_back(i); // keep non-empty
    for (int i = k; i < n; ++i) out[rng.next_u64() % k].push_back(i);
    for (auto& c : out) std::sort(c.begin(), c.end());
    // The fixed seeds in this file keep indices 0..k-1 in distinct clusters,
    // which is general enough for equivalence checks.
    return out;
}

} // namespace

TEST_CASE("embed_patches token counts at paper resolutions") {
    for (const auto [hw, want] : {std::pair{224, 49}, {288, 81}}) {
        ModelConfig cfg;
        cfg.embed_dim = 6;
        cfg.heads = 2;
        cfg.layers = 1;
        cfg.image_height = hw;
        cfg.image_width = hw;
        cfg.num_classes = 3;
        const auto params = init_params<float>(cfg);
        ad::Tape<float> tape(false);
        auto model = push_model(tape, cfg, params, false);
        Image low(3, hw / 2, hw / 2);
        const TokenSeq seq = embed_patches(tape, model, low, Resolution::low, nullptr, "t");
        CHECK(seq.n_tokens == want);
        CHECK(tape.val(seq.id).rows == want + 1);
    }
}

TEST_CASE("embed_patches rejects wrong spatial dims") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<float>(cfg);
    ad::Tape<float> tape(false);
    auto model = push_model(tape, cfg, params, false);
    Image wrong(3, 8, 8); // low resolution expects 4x4
    CHECK_THROWS_AS(embed_patches(tape, model, wrong, Resolution::low, nullptr, "t"), Error);
}

TEST_CASE("zero image with zero bias embeds to the positional grid") {
    ModelConfig cfg = small_cfg();
    auto params = init_params<float>(cfg); // biases and class token are zero
    ad::Tape<float> tape(false);
    auto model = push_model(tape, cfg, params, false);
    Image zero(3, 8, 8);
    const TokenSeq seq = embed_patches(tape, model, zero, Resolution::high, nullptr, "t");
    const Mat<float>& got = tape.val(seq.id);
    for (int i = 0; i < got.rows; ++i) {
        for (int j = 0; j < got.cols; ++j) {
            CHECK(got.at(i, j) == params.pos_embed.at(i, j));
        }
    }
}

TEST_CASE("unmasked layer equals the reference layer") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<double>(cfg);
    Rng rng(41);
    for (int n_tokens : {1, 5, 9}) {
        const Mat<double> x = random_mat<double>(n_tokens + 1, cfg.embed_dim, rng);
        const Mat<double> got = run_layer(cfg, params, x, nullptr);
        const Mat<double> want = oracle_layer(x, params, 0, cfg.heads, nullptr,
                                              ClsAverage::equal);
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("single-cluster mask is bit-identical to the unmasked layer") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<float>(cfg);
    Rng rng(42);
    const int n_tokens = 7;
    const Mat<float> x = random_mat<float>(n_tokens + 1, cfg.embed_dim, rng);

    ClusterMask all;
    all.clusters.resize(1);
    for (int i = 0; i < n_tokens; ++i) all.clusters[0].push_back(i);

    const Mat<float> unmasked = run_layer(cfg, params, x, nullptr);
    const Mat<float> masked = run_layer(cfg, params, x, &all);
    CHECK(std::memcmp(unmasked.data.data(), masked.data.data(),
                      unmasked.size() * sizeof(float)) == 0);
}

TEST_CASE("cluster-masked layer equals the reference, block-diagonal route") {
    ModelConfig cfg = small_cfg();
    const auto params64 = init_params<double>(cfg);
    const auto params32 = init_params<float>(cfg);
    Rng rng(43);
    for (int trial = 0; trial < 30; ++trial) {
        const int n_tokens = 2 + static_cast<int>(rng.next_u64() % 11);
        const int k = 2 + static_cast<int>(rng.next_u64() % 2);
        if (n_tokens < k) continue;
        const auto clusters = random_partition(n_tokens, k, rng);
        ClusterMask mask;
        mask.clusters = clusters;

        Mat<double> x64 = random_mat<double>(n_tokens + 1, cfg.embed_dim, rng);
        const Mat<double> got64 = run_layer(cfg, params64, x64, &mask);
        const Mat<double> want64 =
            oracle_layer(x64, params64, 0, cfg.heads, &clusters, ClsAverage::equal);
        for (size_t i = 0; i < got64.size(); ++i) {
            CHECK(std::abs(got64.data[i] - want64.data[i]) < 1e-10);
        }

        Mat<float> x32(x64.rows, x64.cols);
        for (size_t i = 0; i < x32.size(); ++i) x32.data[i] = static_cast<float>(x64.data[i]);
        const Mat<float> got32 = run_layer(cfg, params32, x32, &mask);
        const Mat<float> want32 =
            oracle_layer(x32, params32, 0, cfg.heads, &clusters, ClsAverage::equal);
        for (size_t i = 0; i < got32.size(); ++i) {
            CHECK(got32.data[i] == doctest::Approx(want32.data[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("size-weighted class averaging matches the reference") {
    ModelConfig cfg = small_cfg();
    cfg.cls_average = ClsAverage::size_weighted;
    const auto params = init_params<double>(cfg);
    Rng rng(44);
    const auto clusters = random_partition(9, 2, rng);
    ClusterMask mask;
    mask.clusters = clusters;
    const Mat<double> x = random_mat<double>(10, cfg.embed_dim, rng);
    const Mat<double> got = run_layer(cfg, params, x, &mask);
    const Mat<double> want =
        oracle_layer(x, params, 0, cfg.heads, &clusters, ClsAverage::size_weighted);
    for (size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-10);
    }
}

TEST_CASE("mask validation rejects bad partitions") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<float>(cfg);
    Rng rng(45);
    const Mat<float> x = random_mat<float>(6, cfg.embed_dim, rng);

    ClusterMask missing;
    missing.clusters = {{0, 1}, {3, 4}}; // index 2 uncovered
    CHECK_THROWS_AS(run_layer(cfg, params, x, &missing), Error);

    ClusterMask dup;
    dup.clusters = {{0, 1, 2}, {2, 3, 4}};
    CHECK_THROWS_AS(run_layer(cfg, params, x, &dup), Error);

    ClusterMask oob;
    oob.clusters = {{0, 1, 2}, {3, 4, 7}};
    CHECK_THROWS_AS(run_layer(cfg, params, x, &oob), Error);
}

TEST_CASE("permutation consistency of patch tokens") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<double>(cfg);
    Rng rng(46);
    const int n_tokens = 8;
    const Mat<double> x = random_mat<double>(n_tokens + 1, cfg.embed_dim, rng);

    std::vector<int> perm(n_tokens);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.next_u64() % i]);
    }
    Mat<double> xp(x.rows, x.cols);
    for (int j = 0; j < x.cols; ++j) xp.at(0, j) = x.at(0, j);
    for (int i = 0; i < n_tokens; ++i) {
        for (int j = 0; j < x.cols; ++j) xp.at(i + 1, j) = x.at(perm[i] + 1, j);
    }

    SUBCASE("unmasked") {
        const Mat<double> base = run_layer(cfg, params, x, nullptr);
        const Mat<double> permuted = run_layer(cfg, params, xp, nullptr);
        for (int j = 0; j < x.cols; ++j) {
            CHECK(permuted.at(0, j) == doctest::Approx(base.at(0, j)).epsilon(1e-5));
        }
        for (int i = 0; i < n_tokens; ++i) {
            for (int j = 0; j < x.cols; ++j) {
                CHECK(permuted.at(i + 1, j) ==
                      doctest::Approx(base.at(perm[i] + 1, j)).epsilon(1e-5));
            }
        }
    }

    SUBCASE("masked, permuted clusters") {
        ClusterMask mask;
        mask.clusters = random_partition(n_tokens, 2, rng);
        // Positions in xp that now hold each original token.
        std::vector<int> pos_of(n_tokens);
        for (int i = 0; i < n_tokens; ++i) pos_of[perm[i]] = i;
        ClusterMask pmask;
        pmask.clusters.resize(mask.clusters.size());
        for (size_t c = 0; c < mask.clusters.size(); ++c) {
            for (int idx : mask.clusters[c]) pmask.clusters[c].push_back(pos_of[idx]);
            std::sort(pmask.clusters[c].begin(), pmask.clusters[c].end());
        }
        const Mat<double> base = run_layer(cfg, params, x, &mask);
        const Mat<double> permuted = run_layer(cfg, params, xp, &pmask);
        for (int j = 0; j < x.cols; ++j) {
            CHECK(permuted.at(0, j) == doctest::Approx(base.at(0, j)).epsilon(1e-5));
        }
        for (int i = 0; i < n_tokens; ++i) {
            for (int j = 0; j < x.cols; ++j) {
                CHECK(permuted.at(i + 1, j) ==
                      doctest::Approx(base.at(perm[i] + 1, j)).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("unmasked layer MAC count matches the closed form") {
    ModelConfig cfg = small_cfg(12, 3, 1);
    const auto params = init_params<float>(cfg);
    Rng rng(47);
    const int n_tokens = 9;
    const Mat<float> x = random_mat<float>(n_tokens + 1, cfg.embed_dim, rng);
    MacCounter counter;
    run_layer(cfg, params, x, nullptr, &counter);
    const std::uint64_t n = n_tokens + 1, d = cfg.embed_dim;
    CHECK(counter.total_macs == 4 * n * d * d + 2 * n * n * d + 8 * n * d * d);
}

TEST_CASE("masked layer MAC count is per-cluster") {
    ModelConfig cfg = small_cfg(12, 3, 1);
    const auto params = init_params<float>(cfg);
    Rng rng(48);
    const int n_tokens = 10;
    const Mat<float> x = random_mat<float>(n_tokens + 1, cfg.embed_dim, rng);
    ClusterMask mask;
    mask.clusters = {{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9}};
    MacCounter counter;
    run_layer(cfg, params, x, &mask, &counter);
    const std::uint64_t d = cfg.embed_dim, a = 7, b = 5, seq = n_tokens + 1;
    const std::uint64_t want = (4 * a * d * d + 2 * a * a * d) + (4 * b * d * d + 2 * b * b * d) +
                               8 * seq * d * d;
    CHECK(counter.total_macs == want);
}

TEST_CASE("forward_stack traces one row per layer and L=0 is identity") {
    ModelConfig cfg = small_cfg(8, 2, 3);
    const auto params = init_params<float>(cfg);
    Rng rng(49);

    ad::Tape<float> tape(false);
    auto model = push_model(tape, cfg, params, false);
    TokenSeq seq;
    seq.n_tokens = 6;
    seq.id = tape.leaf(random_mat<float>(7, cfg.embed_dim, rng));
    AttentionTrace trace;
    forward_stack(tape, model, seq, nullptr, &trace, nullptr, "t");
    CHECK(trace.per_layer_cls_rows.size() == 3);
    for (const auto& row : trace.per_layer_cls_rows) {
        CHECK(row.size() == 6);
        for (double v : row) CHECK(v >= 0.0);
    }

    ModelConfig id_cfg = small_cfg(8, 2, 0);
    const auto id_params = init_params<float>(id_cfg);
    ad::Tape<float> tape2(false);
    auto id_model = push_model(tape2, id_cfg, id_params, false);
    TokenSeq seq2;
    seq2.n_tokens = 6;
    const Mat<float> x = random_mat<float>(7, id_cfg.embed_dim, rng);
    seq2.id = tape2.leaf(x);
    const TokenSeq out = forward_stack(tape2, id_model, seq2, nullptr, nullptr, nullptr, "t");
    CHECK(std::memcmp(tape2.val(out.id).data.data(), x.data.data(),
                      x.size() * sizeof(float)) == 0);
}

TEST_CASE("layers are deterministic") {
    ModelConfig cfg = small_cfg();
    const auto params = init_params<float>(cfg);
    Rng rng(50);
    const Mat<float> x = random_mat<float>(6, cfg.embed_dim, rng);
    const Mat<float> a = run_layer(cfg, params, x, nullptr);
    const Mat<float> b = run_layer(cfg, params, x, nullptr);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * sizeof(float)) == 0);
}
