#include "sacvit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace sacvit {

namespace {
constexpr double kProbClamp = 1e-12;
}

void TrainConfig::validate() const {
    if (epochs < 0 || phase1_epochs < 0 || phase1_epochs > epochs) {
        throw_invalid("train config: need 0 <= phase1_epochs <= epochs");
    }
    if (!(learning_rate > 0.0)) throw_invalid("train config: learning_rate must be > 0");
    if (batch_size < 1) throw_invalid("train config: batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw_invalid("train config: momentum in [0,1)");
}

TrainConfig train_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw_format(std::string("train config: bad JSON: ") + e.what());
    }
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.phase1_epochs = j.value("phase1_epochs", c.phase1_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.momentum = j.value("momentum", c.momentum);
    const std::string mode = j.value("loss_mode", std::string("ce_kl"));
    if (mode == "ce_kl") {
        c.loss_mode = LossMode::ce_kl;
    } else if (mode == "ce_ce") {
        c.loss_mode = LossMode::ce_ce;
    } else {
        throw_invalid("train config: loss_mode must be 'ce_kl' or 'ce_ce'");
    }
    c.validate();
    return c;
}

template <typename T>
LossBreakdown<T> compute_loss(const std::vector<T>& p_ee, const std::vector<T>& p_sac,
                              int label, LossMode mode) {
    if (p_ee.size() != p_sac.size() || p_ee.empty()) {
        throw_invalid("compute_loss: distribution sizes differ");
    }
    if (label < 0 || label >= static_cast<int>(p_sac.size())) {
        throw_invalid("compute_loss: label out of range");
    }
    auto clog = [](T v) { return std::log(v > T(kProbClamp) ? v : T(kProbClamp)); };

    LossBreakdown<T> out;
    out.ce_sac = -clog(p_sac[label]);
    if (mode == LossMode::ce_kl) {
        T kl = T(0);
        for (size_t i = 0; i < p_ee.size(); ++i) {
            if (p_ee[i] > T(0)) {
                kl += p_ee[i] * (clog(p_ee[i]) - clog(p_sac[i]));
            }
        }
        out.second_term = kl;
    } else {
        out.second_term = -clog(p_ee[label]);
    }
    out.total = out.ce_sac + out.second_term;
    return out;
}

template <typename T>
TapeLoss<T> loss_on_tape(ad::Tape<T>& tape, int probs_ee_id, int probs_sac_id, int label,
                         LossMode mode) {
    const int classes = tape.val(probs_sac_id).cols;
    if (label < 0 || label >= classes) throw_invalid("loss_on_tape: label out of range");

    TapeLoss<T> out;
    int log_sac = ad::op_log_clamped(tape, probs_sac_id, T(kProbClamp));
    out.ce_sac_id = ad::op_scale(tape, ad::op_pick(tape, log_sac, 0, label), T(-1));
    if (mode == LossMode::ce_kl) {
        int log_ee = ad::op_log_clamped(tape, probs_ee_id, T(kProbClamp));
        int diff = ad::op_sub(tape, log_ee, log_sac);
        out.second_id = ad::op_sum_all(tape, ad::op_mul(tape, probs_ee_id, diff));
    } else {
        int log_ee = ad::op_log_clamped(tape, probs_ee_id, T(kProbClamp));
        out.second_id = ad::op_scale(tape, ad::op_pick(tape, log_ee, 0, label), T(-1));
    }
    out.total_id = ad::op_add(tape, out.ce_sac_id, out.second_id);
    return out;
}

template <typename T>
TrainForward<T> training_forward(ad::Tape<T>& tape, const TapedModel<T>& model,
                                 const ImageT<T>& img, int label, LossMode mode,
                                 bool clustered, MacCounter* counter,
                                 const ClusterPartition* fixed_partition) {
    TrainForward<T> out;
    EeRun<T> ee = run_ee_stage(tape, model, img, /*eta=*/1.0, counter);
    out.ee_outcome = ee.outcome;
    SacRun<T> sac;
    if (clustered) {
        const ClusterPartition partition =
            fixed_partition ? *fixed_partition : build_partition(ee.trace, *model.cfg);
        sac = run_sac_stage(tape, model, img, ee.final_seq, partition, counter);
    } else {
        sac = run_sac_stage_full(tape, model, img, counter);
    }
    out.sac_outcome = sac.outcome;
    out.loss = loss_on_tape(tape, ee.probs_id, sac.probs_id, label, mode);
    return out;
}

template <typename T>
BatchResult<T> backward(const ModelConfig& cfg, const Params<T>& params,
                        const std::vector<const TrainSample<T>*>& batch, LossMode mode,
                        bool clustered) {
    if (batch.empty()) throw_invalid("backward: empty batch");
    ad::Tape<T> tape(/*grad_enabled=*/true);
    TapedModel<T> model = push_model(tape, cfg, params, /*trainable=*/true);

    BatchResult<T> res;
    int total_id = -1;
    for (const TrainSample<T>* s : batch) {
        TrainForward<T> fwd = training_forward(tape, model, s->image, s->label, mode, clustered);
        res.loss.ce_sac += tape.val(fwd.loss.ce_sac_id).data[0];
        res.loss.second_term += tape.val(fwd.loss.second_id).data[0];
        res.ee_correct += fwd.ee_outcome.predicted == s->label ? 1 : 0;
        res.sac_correct += fwd.sac_outcome.predicted == s->label ? 1 : 0;
        total_id = total_id < 0 ? fwd.loss.total_id : ad::op_add(tape, total_id, fwd.loss.total_id);
    }
    const T inv = T(1) / T(batch.size());
    total_id = ad::op_scale(tape, total_id, inv);
    res.loss.ce_sac *= inv;
    res.loss.second_term *= inv;
    res.loss.total = res.loss.ce_sac + res.loss.second_term;

    tape.backward(total_id);

    res.grads = make_empty_params<T>(cfg);
    visit_params2(res.grads, model.ids, [&](const std::string&, Mat<T>& g, int& id) {
        // Untouched parameters keep their zero gradient.
        Mat<T>& tg = tape.grad(id);
        g.data.assign(tg.data.begin(), tg.data.end());
    });
    return res;
}

template <typename T>
void sgd_step(Params<T>& params, const Params<T>& grads, double lr) {
    visit_params2(params, const_cast<Params<T>&>(grads),
                  [&](const std::string&, Mat<T>& p, Mat<T>& g) {
                      for (size_t i = 0; i < p.size(); ++i) {
                          p.data[i] -= static_cast<T>(lr) * g.data[i];
                      }
                  });
}

TrainLog train_toy(Params<float>& params, const ModelConfig& cfg,
                   const std::vector<TrainSample<float>>& dataset, const TrainConfig& tcfg,
                   std::ostream* log_stream) {
    tcfg.validate();
    if (dataset.empty()) throw_invalid("train_toy: empty dataset");
    audit_shapes(params, cfg);

    Params<float> velocity;
    const bool use_momentum = tcfg.momentum > 0.0;
    if (use_momentum) velocity = make_empty_params<float>(cfg);

    TrainLog log;
    std::ostringstream jsonl;
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const bool clustered = epoch >= tcfg.phase1_epochs;
        // Deterministic per-epoch shuffle.
        Rng rng(tcfg.seed * 2654435761ULL + static_cast<std::uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng.next_u64() % i;
            std::swap(order[i - 1], order[j]);
        }

        double ep_ce = 0.0, ep_second = 0.0;
        int ee_correct = 0, sac_correct = 0;
        for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
            std::vector<const TrainSample<float>*> batch;
            for (size_t k = start; k < std::min(order.size(), start + tcfg.batch_size); ++k) {
                batch.push_back(&dataset[order[k]]);
            }
            BatchResult<float> res = backward(cfg, params, batch, tcfg.loss_mode, clustered);
            if (use_momentum) {
                visit_params2(velocity, res.grads,
                              [&](const std::string&, Mat<float>& v, Mat<float>& g) {
                                  for (size_t i = 0; i < v.size(); ++i) {
                                      v.data[i] = static_cast<float>(tcfg.momentum) * v.data[i] -
                                                  static_cast<float>(tcfg.learning_rate) *
                                                      g.data[i];
                                  }
                              });
                visit_params2(params, velocity,
                              [](const std::string&, Mat<float>& p, Mat<float>& v) {
                                  for (size_t i = 0; i < p.size(); ++i) p.data[i] += v.data[i];
                              });
            } else {
                sgd_step(params, res.grads, tcfg.learning_rate);
            }
            ep_ce += res.loss.ce_sac * batch.size();
            ep_second += res.loss.second_term * batch.size();
            ee_correct += res.ee_correct;
            sac_correct += res.sac_correct;
            ++log.steps;
        }
        const double n = static_cast<double>(dataset.size());
        log.final_ee_accuracy = ee_correct / n;
        log.final_sac_accuracy = sac_correct / n;

        nlohmann::ordered_json line;
        line["epoch"] = epoch;
        line["step"] = log.steps;
        line["phase"] = clustered ? 2 : 1;
        line["loss"] = (ep_ce + ep_second) / n;
        line["ce_sac"] = ep_ce / n;
        line["second_term"] = ep_second / n;
        line["ee_acc"] = log.final_ee_accuracy;
        line["sac_acc"] = log.final_sac_accuracy;
        jsonl << line.dump() << "\n";
    }
    log.jsonl = jsonl.str();
    if (log_stream) (*log_stream) << log.jsonl;
    return log;
}

namespace {

// Deterministic toy inputs for the gradient checker.
template <typename T>
std::vector<TrainSample<T>> gradcheck_samples(const ModelConfig& cfg, int n) {
    Rng rng(cfg.seed + 77);
    std::vector<TrainSample<T>> out;
    for (int i = 0; i < n; ++i) {
        TrainSample<T> s;
        s.image = ImageT<T>(3, cfg.image_height, cfg.image_width);
        for (T& v : s.image.data) v = static_cast<T>(rng.uniform() - 0.5);
        s.label = i % cfg.num_classes;
        out.push_back(std::move(s));
    }
    return out;
}

double loss_value(const ModelConfig& cfg, const Params<double>& params,
                  const std::vector<const TrainSample<double>*>& batch, LossMode mode,
                  bool clustered, const std::vector<ClusterPartition>& partitions) {
    ad::Tape<double> tape(/*grad_enabled=*/false);
    TapedModel<double> model = push_model(tape, cfg, params, /*trainable=*/false);
    double total = 0.0;
    for (size_t s = 0; s < batch.size(); ++s) {
        TrainForward<double> fwd =
            training_forward(tape, model, batch[s]->image, batch[s]->label, mode, clustered,
                             nullptr, clustered ? &partitions[s] : nullptr);
        total += tape.val(fwd.loss.total_id).data[0];
    }
    return total / static_cast<double>(batch.size());
}

} // namespace

GradCheckResult gradient_check(const ModelConfig& cfg, LossMode mode, bool clustered,
                               int n_samples) {
    cfg.validate();
    Params<double> params = init_params<double>(cfg);
    const std::vector<TrainSample<double>> samples = gradcheck_samples<double>(cfg, n_samples);
    std::vector<const TrainSample<double>*> batch;
    for (const auto& s : samples) batch.push_back(&s);

    // Routing is straight-through, so the finite-difference oracle must see
    // the gradient of the loss with the partitions held fixed; pin them from
    // the unperturbed parameters.
    std::vector<ClusterPartition> partitions(batch.size());
    if (clustered) {
        ad::Tape<double> tape(/*grad_enabled=*/false);
        TapedModel<double> model = push_model(tape, cfg, params, /*trainable=*/false);
        for (size_t s = 0; s < batch.size(); ++s) {
            EeRun<double> ee = run_ee_stage(tape, model, batch[s]->image, 1.0, nullptr);
            partitions[s] = build_partition(ee.trace, cfg);
        }
    }

    // Tape gradients with the same pinned partitions.
    Params<double> grads;
    {
        ad::Tape<double> tape(/*grad_enabled=*/true);
        TapedModel<double> model = push_model(tape, cfg, params, /*trainable=*/true);
        int total_id = -1;
        for (size_t s = 0; s < batch.size(); ++s) {
            TrainForward<double> fwd =
                training_forward(tape, model, batch[s]->image, batch[s]->label, mode, clustered,
                                 nullptr, clustered ? &partitions[s] : nullptr);
            total_id =
                total_id < 0 ? fwd.loss.total_id : ad::op_add(tape, total_id, fwd.loss.total_id);
        }
        total_id = ad::op_scale(tape, total_id, 1.0 / static_cast<double>(batch.size()));
        tape.backward(total_id);
        grads = make_empty_params<double>(cfg);
        visit_params2(grads, model.ids, [&](const std::string&, Mat<double>& g, int& id) {
            Mat<double>& tg = tape.grad(id);
            g.data.assign(tg.data.begin(), tg.data.end());
        });
    }

    const double delta = 1e-5;
    GradCheckResult out;
    out.max_rel_err = 0.0;
    visit_params2(params, grads, [&](const std::string& name, Mat<double>& p, Mat<double>& g) {
        for (size_t i = 0; i < p.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + delta;
            const double up = loss_value(cfg, params, batch, mode, clustered, partitions);
            p.data[i] = orig - delta;
            const double down = loss_value(cfg, params, batch, mode, clustered, partitions);
            p.data[i] = orig;
            const double fd = (up - down) / (2.0 * delta);
            const double ad_g = g.data[i];
            const double denom = std::max(std::abs(fd), std::abs(ad_g));
            double rel;
            if (denom < 1e-7) {
                rel = std::abs(fd - ad_g) < 1e-7 ? 0.0 : 1.0;
            } else {
                rel = std::abs(fd - ad_g) / denom;
            }
            if (rel > out.max_rel_err) {
                out.max_rel_err = rel;
                out.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    });
    out.pass = out.max_rel_err < 1e-4;
    return out;
}

GradCheckResult gradient_check_all(const ModelConfig& cfg) {
    GradCheckResult worst;
    worst.pass = true;
    for (LossMode mode : {LossMode::ce_kl, LossMode::ce_ce}) {
        for (bool clustered : {false, true}) {
            GradCheckResult r = gradient_check(cfg, mode, clustered);
            if (r.max_rel_err > worst.max_rel_err) {
                worst.max_rel_err = r.max_rel_err;
                worst.worst_param = r.worst_param;
            }
            worst.pass = worst.pass && r.pass;
        }
    }
    return worst;
}

#define SACVIT_TRAINER_INSTANTIATE(T)                                                       \
    template LossBreakdown<T> compute_loss(const std::vector<T>&, const std::vector<T>&,    \
                                           int, LossMode);                                  \
    template TapeLoss<T> loss_on_tape(ad::Tape<T>&, int, int, int, LossMode);               \
    template TrainForward<T> training_forward(ad::Tape<T>&, const TapedModel<T>&,           \
                                              const ImageT<T>&, int, LossMode, bool,       \
                                              MacCounter*, const ClusterPartition*);       \
    template BatchResult<T> backward(const ModelConfig&, const Params<T>&,                  \
                                     const std::vector<const TrainSample<T>*>&, LossMode,   \
                                     bool);                                                 \
    template void sgd_step(Params<T>&, const Params<T>&, double);

SACVIT_TRAINER_INSTANTIATE(float)
SACVIT_TRAINER_INSTANTIATE(double)

#undef SACVIT_TRAINER_INSTANTIATE

} // namespace sacvit
