#include "sacvit/config.hpp"

#include <algorithm>

#include <json.hpp>

#include "sacvit/error.hpp"

namespace sacvit {

int ModelConfig::num_targets() const {
    int n = num_low_tokens();
    int m = static_cast<int>(alpha * n);
    return std::clamp(m, 1, n - 1);
}

void ModelConfig::validate() const {
    if (embed_dim <= 0 || layers < 0 || heads <= 0 || patch_size <= 0 ||
        image_height <= 0 || image_width <= 0 || num_classes <= 0 || ffn_ratio <= 0) {
        throw_invalid("config: dimensions must be positive");
    }
    if (embed_dim % heads != 0) {
        throw_invalid("config: embed_dim must be divisible by heads");
    }
    if (image_height % (2 * patch_size) != 0 || image_width % (2 * patch_size) != 0) {
        throw_invalid("config: image dims must be divisible by 2*patch_size");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw_invalid("config: alpha must be in (0,1)");
    }
    if (!(beta >= 0.0 && beta < 1.0)) {
        throw_invalid("config: beta must be in [0,1)");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) {
        throw_invalid("config: eta must be in [0,1]");
    }
    if (num_low_tokens() < 2) {
        throw_invalid("config: low-res grid needs at least 2 patch tokens");
    }
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.patch_size = 2;
    cfg.image_height = 8;
    cfg.image_width = 8;
    cfg.num_classes = 2;
    cfg.seed = 7;
    return cfg;
}

ModelConfig config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw_format(std::string("config: bad JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
        cfg.layers = j.value("layers", cfg.layers);
        cfg.heads = j.value("heads", cfg.heads);
        cfg.patch_size = j.value("patch_size", cfg.patch_size);
        cfg.image_height = j.value("image_height", cfg.image_height);
        cfg.image_width = j.value("image_width", cfg.image_width);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.beta = j.value("beta", cfg.beta);
        cfg.eta = j.value("eta", cfg.eta);
        cfg.ffn_ratio = j.value("ffn_ratio", cfg.ffn_ratio);
        cfg.seed = j.value("seed", cfg.seed);
        std::string avg = j.value("cls_average", std::string("equal"));
        if (avg == "equal") {
            cfg.cls_average = ClsAverage::equal;
        } else if (avg == "size_weighted") {
            cfg.cls_average = ClsAverage::size_weighted;
        } else {
            throw_invalid("config: cls_average must be 'equal' or 'size_weighted'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw_format(std::string("config: bad field: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["embed_dim"] = cfg.embed_dim;
    j["layers"] = cfg.layers;
    j["heads"] = cfg.heads;
    j["patch_size"] = cfg.patch_size;
    j["image_height"] = cfg.image_height;
    j["image_width"] = cfg.image_width;
    j["num_classes"] = cfg.num_classes;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["eta"] = cfg.eta;
    j["ffn_ratio"] = cfg.ffn_ratio;
    j["seed"] = cfg.seed;
    j["cls_average"] = cfg.cls_average == ClsAverage::equal ? "equal" : "size_weighted";
    return j.dump();
}

} // namespace sacvit
