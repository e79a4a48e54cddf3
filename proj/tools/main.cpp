// sacvit command-line harness. Links only the C API.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sacvit.h"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

[[noreturn]] void die(const std::string& context, sacvit_status status) {
    std::fprintf(stderr, "sacvit: %s: %s: %s\n", context.c_str(), sacvit_status_name(status),
                 sacvit_last_error());
    std::exit(2);
}

struct ModelHandle {
    sacvit_model* m = nullptr;
    ~ModelHandle() { sacvit_model_free(m); }
};

struct DatasetHandle {
    sacvit_dataset* d = nullptr;
    ~DatasetHandle() { sacvit_dataset_free(d); }
};

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { sacvit_string_free(s); }
};

void load_model(const std::string& checkpoint, ModelHandle& model) {
    if (auto st = sacvit_model_load(checkpoint.c_str(), &model.m)) die("load checkpoint", st);
}

void open_dataset(const std::string& dir, DatasetHandle& ds) {
    if (auto st = sacvit_dataset_open(dir.c_str(), &ds.d)) die("open dataset", st);
}

// Writes content to path via a temp file + atomic rename, or to stdout when
// path is empty.
void emit(const std::string& path, const std::string& content) {
    if (path.empty()) {
        std::fputs(content.c_str(), stdout);
        return;
    }
    const std::string tmp = path + ".tmp~";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) {
            std::fprintf(stderr, "sacvit: cannot write %s\n", tmp.c_str());
            std::exit(2);
        }
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

std::string prediction_json(const sacvit_prediction& p) {
    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "{\"stage\":\"%s\",\"class\":%d,\"confidence\":%.9f,\"macs\":%llu}\n",
                  p.exited_early ? "EE" : "SAC", p.class_index, p.confidence,
                  static_cast<unsigned long long>(p.macs));
    return buf;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAC-ViT two-stage adaptive inference harness"};
    app.require_subcommand(1);

    // infer
    std::string in_checkpoint, in_input;
    double in_eta = 0.5;
    auto* infer = app.add_subcommand("infer", "Classify one raw tensor file");
    infer->add_option("--checkpoint", in_checkpoint)->required();
    infer->add_option("--input", in_input)->required();
    infer->add_option("--eta", in_eta, "Early-exit confidence threshold");

    // sweep
    std::string sw_checkpoint, sw_dataset, sw_etas, sw_output;
    bool sw_no_throughput = false;
    auto* sweep = app.add_subcommand("sweep", "Accuracy/cost trade-off table over eta values");
    sweep->add_option("--checkpoint", sw_checkpoint)->required();
    sweep->add_option("--dataset", sw_dataset)->required();
    sweep->add_option("--etas", sw_etas, "Comma-separated eta list")->required();
    sweep->add_option("--output", sw_output, "CSV path (stdout when omitted)");
    sweep->add_flag("--no-throughput", sw_no_throughput,
                    "Write 0 in the throughput column (byte-deterministic output)");

    // bench
    std::string be_checkpoint, be_dataset;
    int be_batch = 32, be_repeat = 3;
    double be_eta = 0.5;
    auto* bench = app.add_subcommand("bench", "Measure inference throughput");
    bench->add_option("--checkpoint", be_checkpoint)->required();
    bench->add_option("--dataset", be_dataset)->required();
    bench->add_option("--batch", be_batch, "Samples per submission");
    bench->add_option("--repeat", be_repeat, "Passes over the dataset; median wins");
    bench->add_option("--eta", be_eta);

    // cost
    std::string co_config;
    double co_exit_fraction = 0.0;
    auto* cost = app.add_subcommand("cost", "Analytic MAC report for a config");
    cost->add_option("--config", co_config, "Model config JSON file (defaults when omitted)");
    cost->add_option("--exit-fraction", co_exit_fraction);

    // gradcheck
    std::string gc_config;
    bool gc_tiny = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gradcheck->add_flag("--tiny-config", gc_tiny, "Use the built-in tiny config (default)");
    gradcheck->add_option("--config", gc_config, "Model config JSON file");

    // train
    std::string tr_config, tr_dataset, tr_output = "model.sacvit", tr_log;
    auto* train = app.add_subcommand("train", "Two-phase toy training");
    train->add_option("--config", tr_config,
                      "JSON with optional 'model' and 'train' sections");
    train->add_option("--dataset", tr_dataset)->required();
    train->add_option("--output", tr_output, "Checkpoint path");
    train->add_option("--log", tr_log, "Training log path (JSON lines)");

    // synth
    std::string sy_output;
    int sy_classes = 2, sy_samples = 32, sy_height = 16, sy_width = 16;
    std::uint64_t sy_seed = 1;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
    synth->add_option("--output", sy_output)->required();
    synth->add_option("--classes", sy_classes);
    synth->add_option("--samples", sy_samples, "Samples per class");
    synth->add_option("--height", sy_height);
    synth->add_option("--width", sy_width);
    synth->add_option("--seed", sy_seed);

    CLI11_PARSE(app, argc, argv);

    if (*infer) {
        ModelHandle model;
        load_model(in_checkpoint, model);
        sacvit_prediction pred;
        if (auto st = sacvit_infer_file(model.m, in_input.c_str(), in_eta, &pred)) {
            die("infer", st);
        }
        std::fputs(prediction_json(pred).c_str(), stdout);
        return 0;
    }

    if (*sweep) {
        ModelHandle model;
        DatasetHandle ds;
        load_model(sw_checkpoint, model);
        open_dataset(sw_dataset, ds);
        std::vector<double> etas;
        std::stringstream ss(sw_etas);
        for (std::string tok; std::getline(ss, tok, ',');) {
            try {
                etas.push_back(std::stod(tok));
            } catch (const std::exception&) {
                std::fprintf(stderr, "sacvit: sweep: bad eta value '%s'\n", tok.c_str());
                return 2;
            }
        }
        OwnedString csv;
        if (auto st = sacvit_sweep_csv(model.m, ds.d, etas.data(),
                                       static_cast<int32_t>(etas.size()),
                                       sw_no_throughput ? 0 : 1, &csv.s)) {
            die("sweep", st);
        }
        emit(sw_output, csv.s);
        return 0;
    }

    if (*bench) {
        ModelHandle model;
        DatasetHandle ds;
        load_model(be_checkpoint, model);
        open_dataset(be_dataset, ds);
        const int n = static_cast<int>(sacvit_dataset_size(ds.d));
        if (be_batch < 1 || be_repeat < 1) {
            std::fprintf(stderr, "sacvit: bench: batch and repeat must be >= 1\n");
            return 2;
        }
        std::vector<sacvit_prediction> preds(n);
        std::vector<double> times;
        for (int r = 0; r < be_repeat; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            if (auto st = sacvit_batch_infer(model.m, ds.d, be_eta, preds.data())) {
                die("bench", st);
            }
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                .count());
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];
        std::printf("{\"samples\":%d,\"repeats\":%d,\"median_seconds\":%.6f,"
                    "\"throughput_samples_per_sec\":%.2f}\n",
                    n, be_repeat, median, n / median);
        return 0;
    }

    if (*cost) {
        OwnedString json;
        std::string cfg_text;
        if (!co_config.empty()) cfg_text = read_file(co_config);
        if (auto st = sacvit_cost_report_json(co_config.empty() ? nullptr : cfg_text.c_str(),
                                              co_exit_fraction, &json.s)) {
            die("cost", st);
        }
        std::printf("%s\n", json.s);
        return 0;
    }

    if (*gradcheck) {
        std::string cfg_text;
        if (!gc_config.empty()) cfg_text = read_file(gc_config);
        double max_rel_err = 0.0;
        const sacvit_status st = sacvit_gradcheck(
            gc_config.empty() ? nullptr : cfg_text.c_str(), &max_rel_err);
        if (st == SACVIT_OK) {
            std::printf("gradcheck PASS max_rel_err=%.3e\n", max_rel_err);
            return 0;
        }
        if (st == SACVIT_ERR_TOLERANCE) {
            std::printf("gradcheck FAIL max_rel_err=%.3e\n", max_rel_err);
            return 1;
        }
        die("gradcheck", st);
    }

    if (*train) {
        // The config file may hold "model" and "train" sections, or be a
        // flat train config.
        std::string model_cfg, train_cfg;
        if (!tr_config.empty()) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(read_file(tr_config));
            } catch (const std::exception& e) {
                std::fprintf(stderr, "sacvit: train: bad config: %s\n", e.what());
                return 2;
            }
            if (j.contains("model")) model_cfg = j["model"].dump();
            if (j.contains("train")) train_cfg = j["train"].dump();
            if (model_cfg.empty() && train_cfg.empty()) train_cfg = j.dump();
        }
        ModelHandle model;
        if (auto st = sacvit_model_create(model_cfg.empty() ? nullptr : model_cfg.c_str(),
                                          &model.m)) {
            die("train: model config", st);
        }
        DatasetHandle ds;
        open_dataset(tr_dataset, ds);
        OwnedString summary;
        if (auto st = sacvit_train(model.m, ds.d, train_cfg.empty() ? nullptr : train_cfg.c_str(),
                                   tr_log.empty() ? nullptr : tr_log.c_str(), &summary.s)) {
            die("train", st);
        }
        if (auto st = sacvit_model_save(model.m, tr_output.c_str())) die("save checkpoint", st);
        std::printf("%s\n", summary.s);
        return 0;
    }

    if (*synth) {
        if (auto st = sacvit_dataset_synth(sy_output.c_str(), sy_classes, sy_samples, sy_height,
                                           sy_width, sy_seed)) {
            die("synth", st);
        }
        std::printf("{\"dir\":\"%s\",\"classes\":%d,\"samples_per_class\":%d}\n",
                    sy_output.c_str(), sy_classes, sy_samples);
        return 0;
    }

    return 0;
}
