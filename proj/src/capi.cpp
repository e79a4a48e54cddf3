#include "sacvit.h"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sacvit/checkpoint.hpp"
#include "sacvit/cost_model.hpp"
#include "sacvit/io.hpp"
#include "sacvit/pipeline.hpp"
#include "sacvit/threading.hpp"
#include "sacvit/trainer.hpp"

struct sacvit_model {
    sacvit::ModelConfig cfg;
    sacvit::Params<float> params;
};

struct sacvit_dataset {
    std::vector<sacvit::Sample> samples;
};

namespace {

thread_local std::string g_last_error;

sacvit_status to_status(sacvit::ErrorCode code) {
    using sacvit::ErrorCode;
    switch (code) {
    case ErrorCode::invalid_argument: return SACVIT_ERR_INVALID_ARGUMENT;
    case ErrorCode::io: return SACVIT_ERR_IO;
    case ErrorCode::format: return SACVIT_ERR_FORMAT;
    case ErrorCode::shape_mismatch: return SACVIT_ERR_SHAPE;
    case ErrorCode::truncated: return SACVIT_ERR_TRUNCATED;
    case ErrorCode::tolerance: return SACVIT_ERR_TOLERANCE;
    case ErrorCode::internal: return SACVIT_ERR_INTERNAL;
    }
    return SACVIT_ERR_INTERNAL;
}

template <typename Fn>
sacvit_status guarded(Fn&& fn) {
    try {
        fn();
        return SACVIT_OK;
    } catch (const sacvit::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SACVIT_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void fill_prediction(const sacvit::InferenceRecord& rec, sacvit_prediction* out) {
    out->class_index = rec.outcome.predicted;
    out->confidence = static_cast<double>(rec.outcome.confidence);
    out->macs = rec.macs;
    out->exited_early = rec.outcome.stage == sacvit::Stage::EE ? 1 : 0;
}

sacvit_status require(bool ok, const char* msg) {
    if (ok) return SACVIT_OK;
    g_last_error = msg;
    return SACVIT_ERR_INVALID_ARGUMENT;
}

} // namespace

extern "C" {

const char* sacvit_status_name(sacvit_status status) {
    switch (status) {
    case SACVIT_OK: return "ok";
    case SACVIT_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case SACVIT_ERR_IO: return "io_error";
    case SACVIT_ERR_FORMAT: return "format_error";
    case SACVIT_ERR_SHAPE: return "shape_error";
    case SACVIT_ERR_TRUNCATED: return "truncated";
    case SACVIT_ERR_TOLERANCE: return "tolerance";
    case SACVIT_ERR_INTERNAL: return "internal_error";
    }
    return "unknown";
}

const char* sacvit_last_error(void) { return g_last_error.c_str(); }

void sacvit_string_free(char* s) { std::free(s); }

sacvit_status sacvit_model_create(const char* config_json, sacvit_model** out) {
    if (auto s = require(out != nullptr, "model_create: out is null")) return s;
    return guarded([&] {
        sacvit::ModelConfig cfg =
            config_json ? sacvit::config_from_json(config_json) : sacvit::ModelConfig{};
        cfg.validate();
        auto model = std::make_unique<sacvit_model>();
        model->cfg = cfg;
        model->params = sacvit::init_params<float>(cfg);
        *out = model.release();
    });
}

sacvit_status sacvit_model_load(const char* checkpoint_path, sacvit_model** out) {
    if (auto s = require(out && checkpoint_path, "model_load: null argument")) return s;
    return guarded([&] {
        auto [params, cfg] = sacvit::load_checkpoint(checkpoint_path);
        auto model = std::make_unique<sacvit_model>();
        model->cfg = cfg;
        model->params = std::move(params);
        *out = model.release();
    });
}

sacvit_status sacvit_model_save(const sacvit_model* model, const char* checkpoint_path) {
    if (auto s = require(model && checkpoint_path, "model_save: null argument")) return s;
    return guarded([&] { sacvit::save_checkpoint(model->params, model->cfg, checkpoint_path); });
}

sacvit_status sacvit_model_config_json(const sacvit_model* model, char** json_out) {
    if (auto s = require(model && json_out, "model_config_json: null argument")) return s;
    return guarded([&] { *json_out = dup_string(sacvit::config_to_json(model->cfg)); });
}

void sacvit_model_free(sacvit_model* model) { delete model; }

sacvit_status sacvit_infer(const sacvit_model* model, const float* data, int32_t channels,
                           int32_t height, int32_t width, double eta, sacvit_prediction* out) {
    if (auto s = require(model && data && out, "infer: null argument")) return s;
    return guarded([&] {
        sacvit::Image img(channels, height, width);
        std::memcpy(img.data.data(), data, img.data.size() * sizeof(float));
        const sacvit::InferenceRecord rec =
            sacvit::run_pipeline(model->cfg, model->params, img, eta);
        fill_prediction(rec, out);
    });
}

sacvit_status sacvit_infer_file(const sacvit_model* model, const char* tensor_path, double eta,
                                sacvit_prediction* out) {
    if (auto s = require(model && tensor_path && out, "infer_file: null argument")) return s;
    return guarded([&] {
        const sacvit::Image img = sacvit::read_raw_tensor(tensor_path);
        const sacvit::InferenceRecord rec =
            sacvit::run_pipeline(model->cfg, model->params, img, eta);
        fill_prediction(rec, out);
    });
}

sacvit_status sacvit_dataset_open(const char* dir, sacvit_dataset** out) {
    if (auto s = require(dir && out, "dataset_open: null argument")) return s;
    return guarded([&] {
        auto ds = std::make_unique<sacvit_dataset>();
        ds->samples = sacvit::load_dataset(dir);
        *out = ds.release();
    });
}

int64_t sacvit_dataset_size(const sacvit_dataset* ds) {
    return ds ? static_cast<int64_t>(ds->samples.size()) : 0;
}

void sacvit_dataset_free(sacvit_dataset* ds) { delete ds; }

sacvit_status sacvit_dataset_synth(const char* dir, int32_t classes, int32_t per_class,
                                   int32_t height, int32_t width, uint64_t seed) {
    if (auto s = require(dir != nullptr, "dataset_synth: dir is null")) return s;
    return guarded([&] { sacvit::synth_dataset(dir, classes, per_class, height, width, seed); });
}

sacvit_status sacvit_batch_infer(const sacvit_model* model, const sacvit_dataset* ds,
                                 double eta, sacvit_prediction* out_array) {
    if (auto s = require(model && ds && out_array, "batch_infer: null argument")) return s;
    return guarded([&] {
        const int n = static_cast<int>(ds->samples.size());
        std::vector<std::string> errors(n);
        sacvit::parallel_for(n, [&](int i) {
            try {
                const sacvit::InferenceRecord rec =
                    sacvit::run_pipeline(model->cfg, model->params, ds->samples[i].image, eta);
                fill_prediction(rec, &out_array[i]);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });
        for (const std::string& e : errors) {
            if (!e.empty()) sacvit::throw_internal("batch_infer: " + e);
        }
    });
}

sacvit_status sacvit_sweep_csv(const sacvit_model* model, const sacvit_dataset* ds,
                               const double* etas, int32_t n_etas, int32_t measure_throughput,
                               char** csv_out) {
    if (auto s = require(model && ds && etas && csv_out && n_etas > 0,
                         "sweep: null argument or empty eta list")) {
        return s;
    }
    return guarded([&] {
        const int n = static_cast<int>(ds->samples.size());
        const sacvit::CostReport cost = sacvit::macs_sac_vit(model->cfg);

        std::vector<double> sorted(etas, etas + n_etas);
        std::sort(sorted.begin(), sorted.end());

        // Stage-1 head accuracy is eta-independent: force universal exit once.
        std::vector<sacvit_prediction> ee_preds(n);
        if (sacvit_batch_infer(model, ds, 0.0, ee_preds.data()) != SACVIT_OK) {
            sacvit::throw_internal(g_last_error);
        }
        int ee_correct = 0;
        for (int i = 0; i < n; ++i) {
            if (ee_preds[i].class_index == ds->samples[i].label) ++ee_correct;
        }

        std::string csv = "eta,exit_fraction,ee_acc,overall_acc,expected_macs,throughput\n";
        std::vector<sacvit_prediction> preds(n);
        for (double eta : sorted) {
            const auto t0 = std::chrono::steady_clock::now();
            if (sacvit_batch_infer(model, ds, eta, preds.data()) != SACVIT_OK) {
                sacvit::throw_internal(g_last_error);
            }
            const auto t1 = std::chrono::steady_clock::now();

            int exits = 0, overall_correct = 0;
            for (int i = 0; i < n; ++i) {
                exits += preds[i].exited_early;
                if (preds[i].class_index == ds->samples[i].label) ++overall_correct;
            }

            const double exit_fraction = static_cast<double>(exits) / n;
            const double expected = cost.expected_total(exit_fraction);
            double throughput = 0.0;
            if (measure_throughput) {
                const double seconds = std::chrono::duration<double>(t1 - t0).count();
                throughput = seconds > 0 ? n / seconds : 0.0;
            }
            char line[256];
            std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f,%.0f,%.2f\n", eta,
                          exit_fraction, static_cast<double>(ee_correct) / n,
                          static_cast<double>(overall_correct) / n, expected, throughput);
            csv += line;
        }
        *csv_out = dup_string(csv);
    });
}

sacvit_status sacvit_cost_report_json(const char* config_json, double exit_fraction,
                                      char** json_out) {
    if (auto s = require(json_out != nullptr, "cost_report: json_out is null")) return s;
    return guarded([&] {
        sacvit::ModelConfig cfg =
            config_json ? sacvit::config_from_json(config_json) : sacvit::ModelConfig{};
        const sacvit::CostReport report = sacvit::macs_sac_vit(cfg);
        *json_out = dup_string(report.to_json(exit_fraction));
    });
}

sacvit_status sacvit_gradcheck(const char* config_json, double* max_rel_err) {
    return guarded([&] {
        sacvit::ModelConfig cfg =
            config_json ? sacvit::config_from_json(config_json) : sacvit::tiny_config();
        const sacvit::GradCheckResult res = sacvit::gradient_check_all(cfg);
        if (max_rel_err) *max_rel_err = res.max_rel_err;
        if (!res.pass) {
            throw sacvit::Error(sacvit::ErrorCode::tolerance,
                                "gradcheck: max relative error " +
                                    std::to_string(res.max_rel_err) + " at " + res.worst_param);
        }
    });
}

sacvit_status sacvit_train(sacvit_model* model, const sacvit_dataset* ds,
                           const char* train_config_json, const char* log_path,
                           char** summary_json_out) {
    if (auto s = require(model && ds, "train: null argument")) return s;
    return guarded([&] {
        sacvit::TrainConfig tcfg = train_config_json
                                       ? sacvit::train_config_from_json(train_config_json)
                                       : sacvit::TrainConfig{};
        std::vector<sacvit::TrainSample<float>> samples;
        samples.reserve(ds->samples.size());
        for (const sacvit::Sample& s : ds->samples) {
            samples.push_back({s.image, s.label});
        }
        const sacvit::TrainLog log =
            sacvit::train_toy(model->params, model->cfg, samples, tcfg, nullptr);
        if (log_path) {
            std::ofstream out(log_path, std::ios::trunc);
            if (!out) sacvit::throw_io(std::string("train: cannot write log to ") + log_path);
            out << log.jsonl;
        }
        if (summary_json_out) {
            nlohmann::ordered_json j;
            j["steps"] = log.steps;
            j["ee_acc"] = log.final_ee_accuracy;
            j["sac_acc"] = log.final_sac_accuracy;
            *summary_json_out = dup_string(j.dump());
        }
    });
}

} // extern "C"
