#include "sacvit/pipeline.hpp"

#include <cmath>

namespace sacvit {

ExitDecision decide_exit(const std::vector<double>& p, double eta) {
    if (p.empty()) throw_invalid("decide_exit: empty distribution");
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return ExitDecision{best, p[best], p[best] > eta};
}

namespace {

template <typename T>
StageOutcome<T> make_outcome(ad::Tape<T>& tape, int probs_id, double eta, Stage stage) {
    const Mat<T>& probs = tape.val(probs_id);
    StageOutcome<T> out;
    out.p.assign(probs.data.begin(), probs.data.end());
    std::vector<double> pd(out.p.begin(), out.p.end());
    const ExitDecision d = decide_exit(pd, eta);
    out.predicted = d.predicted;
    out.confidence = static_cast<T>(d.confidence);
    out.stage = stage;
    out.exited = stage == Stage::SAC ? true : d.exited;
    return out;
}

} // namespace

template <typename T>
EeRun<T> run_ee_stage(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                      double eta, MacCounter* counter) {
    const ImageT<T> low = avg_pool_2x2(img);
    EeRun<T> run;
    TokenSeq seq = embed_patches(tape, model, low, Resolution::low, counter, "ee");
    run.final_seq = forward_stack(tape, model, seq, nullptr, &run.trace, counter, "ee");
    run.logits_id = classify(tape, model, run.final_seq.id, counter, "ee");
    run.probs_id = ad::op_softmax_rows(tape, run.logits_id);
    run.outcome = make_outcome(tape, run.probs_id, eta, Stage::EE);
    return run;
}

template <typename T>
int gather_high_res_targets(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                            const ClusterPartition& partition, MacCounter* counter) {
    validate_partition(partition, model.cfg->num_low_tokens());
    TokenSeq high = embed_patches(tape, model, img, Resolution::high, counter, "sac");
    std::vector<int> rows;
    rows.reserve(partition.target_high.size());
    for (int i : partition.target_high) rows.push_back(i + 1); // skip class row
    return ad::op_gather_rows(tape, high.id, std::move(rows));
}

template <typename T>
int fuse_features(ad::Tape<T>& tape, const TapedModel<T>& model, int ee_targets_id,
                  int high_targets_id, MacCounter* counter) {
    const Mat<T>& ee = tape.val(ee_targets_id);
    const Mat<T>& high = tape.val(high_targets_id);
    if (high.rows != 4 * ee.rows) {
        throw_shape("fuse_features: expected 4x as many high-res rows");
    }
    int expanded = ad::op_matmul(tape, ee_targets_id, model.ids.fusion_w, counter, "sac/fusion");
    expanded = ad::op_add_row(tape, expanded, model.ids.fusion_b);
    int blocks = ad::op_rows_to_blocks(tape, expanded, 4);
    return ad::op_add(tape, blocks, high_targets_id);
}

template <typename T>
SacRun<T> run_sac_stage(ad::Tape<T>& tape, const TapedModel<T>& model, const ImageT<T>& img,
                        const TokenSeq& ee_final, const ClusterPartition& partition,
                        MacCounter* counter) {
    const ModelConfig& cfg = *model.cfg;
    if (ee_final.n_tokens != cfg.num_low_tokens() || ee_final.res != Resolution::low) {
        throw_shape("run_sac_stage: ee sequence does not match config");
    }
    const int m = partition.num_targets();

    int high_targets = gather_high_res_targets(tape, model, img, partition, counter);

    std::vector<int> ee_target_rows;
    ee_target_rows.reserve(m);
    for (int i : partition.target_low) ee_target_rows.push_back(i + 1);
    int ee_targets = ad::op_gather_rows(tape, ee_final.id, std::move(ee_target_rows));

    int fused = fuse_features(tape, model, ee_targets, high_targets, counter);

    std::vector<int> reuse_rows;
    reuse_rows.reserve(partition.nontarget_low.size());
    for (int i : partition.nontarget_low) reuse_rows.push_back(i + 1);
    int reused = ad::op_gather_rows(tape, ee_final.id, std::move(reuse_rows));

    int cls_pos = ad::op_gather_rows(tape, model.ids.pos_embed, {0});
    int cls_row = ad::op_add(tape, model.ids.cls_token, cls_pos);

    TokenSeq mixed;
    mixed.id = ad::op_concat_rows(tape, {cls_row, fused, reused});
    mixed.n_tokens = 4 * m + (cfg.num_low_tokens() - m);
    mixed.res = Resolution::mixed;
    mixed.grid_h = 0;
    mixed.grid_w = 0;

    ClusterMask mask;
    mask.clusters.resize(2);
    for (int i = 0; i < 4 * m; ++i) mask.clusters[0].push_back(i);
    for (int i = 4 * m; i < mixed.n_tokens; ++i) mask.clusters[1].push_back(i);

    SacRun<T> run;
    run.mixed_seq_id = mixed.id;
    TokenSeq final_seq = forward_stack(tape, model, mixed, &mask, nullptr, counter, "sac");
    run.logits_id = classify(tape, model, final_seq.id, counter, "sac");
    run.probs_id = ad::op_softmax_rows(tape, run.logits_id);
    run.outcome = make_outcome(tape, run.probs_id, /*eta=*/0.0, Stage::SAC);
    return run;
}

template <typename T>
SacRun<T> run_sac_stage_full(ad::Tape<T>& tape, const TapedModel<T>& model,
                             const ImageT<T>& img, MacCounter* counter) {
    TokenSeq seq = embed_patches(tape, model, img, Resolution::high, counter, "sac");
    SacRun<T> run;
    run.mixed_seq_id = seq.id;
    TokenSeq final_seq = forward_stack(tape, model, seq, nullptr, nullptr, counter, "sac");
    run.logits_id = classify(tape, model, final_seq.id, counter, "sac");
    run.probs_id = ad::op_softmax_rows(tape, run.logits_id);
    run.outcome = make_outcome(tape, run.probs_id, /*eta=*/0.0, Stage::SAC);
    return run;
}

InferenceRecord run_pipeline(const ModelConfig& cfg, const Params<float>& params,
                             const Image& img, double eta) {
    ad::Tape<float> tape(/*grad_enabled=*/false);
    TapedModel<float> model = push_model(tape, cfg, params, /*trainable=*/false);
    MacCounter counter;
    InferenceRecord rec;

    EeRun<float> ee = run_ee_stage(tape, model, img, eta, &counter);
    if (ee.outcome.exited) {
        rec.outcome = ee.outcome;
        rec.macs = counter.total_macs;
        return rec;
    }
    const ClusterPartition partition = build_partition(ee.trace, cfg);
    SacRun<float> sac = run_sac_stage(tape, model, img, ee.final_seq, partition, &counter);
    rec.outcome = sac.outcome;
    rec.macs = counter.total_macs;
    return rec;
}

#define SACVIT_PIPELINE_INSTANTIATE(T)                                                       \
    template EeRun<T> run_ee_stage(ad::Tape<T>&, const TapedModel<T>&, const ImageT<T>&,     \
                                   double, MacCounter*);                                     \
    template int gather_high_res_targets(ad::Tape<T>&, const TapedModel<T>&,                 \
                                         const ImageT<T>&, const ClusterPartition&,          \
                                         MacCounter*);                                       \
    template int fuse_features(ad::Tape<T>&, const TapedModel<T>&, int, int, MacCounter*);   \
    template SacRun<T> run_sac_stage(ad::Tape<T>&, const TapedModel<T>&, const ImageT<T>&,   \
                                     const TokenSeq&, const ClusterPartition&, MacCounter*); \
    template SacRun<T> run_sac_stage_full(ad::Tape<T>&, const TapedModel<T>&,                \
                                          const ImageT<T>&, MacCounter*);

SACVIT_PIPELINE_INSTANTIATE(float)
SACVIT_PIPELINE_INSTANTIATE(double)

#undef SACVIT_PIPELINE_INSTANTIATE

} // namespace sacvit
