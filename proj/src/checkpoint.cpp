#include "sacvit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace sacvit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts unsupported");

namespace {
constexpr const char* kMagic = "SACVIT01";
}

void save_checkpoint(const Params<float>& params, const ModelConfig& cfg,
                     const std::string& path) {
    audit_shapes(params, cfg);

    nlohmann::ordered_json header;
    header["magic"] = kMagic;
    header["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    visit_params(params, [&](const std::string& name, const Mat<float>& m) {
        nlohmann::ordered_json t;
        t["name"] = name;
        t["shape"] = {m.rows, m.cols};
        t["offset"] = offset;
        t["size"] = m.size() * sizeof(float);
        tensors.push_back(std::move(t));
        offset += m.size() * sizeof(float);
    });
    header["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_io("checkpoint: cannot open for write: " + path);
    const std::string htext = header.dump();
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    out.write("\n\0", 2);
    visit_params(params, [&](const std::string&, const Mat<float>& m) {
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(float)));
    });
    if (!out) throw_io("checkpoint: write failed: " + path);
}

std::pair<Params<float>, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("checkpoint: cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const size_t nul = bytes.find('\0');
    if (nul == std::string::npos || nul == 0 || bytes[nul - 1] != '\n') {
        throw_format("checkpoint: missing header separator");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nul - 1));
    } catch (const nlohmann::json::exception& e) {
        throw_format(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    if (!header.contains("magic") || header["magic"] != kMagic) {
        throw_format("checkpoint: magic/version mismatch (want SACVIT01)");
    }
    if (!header.contains("config") || !header.contains("tensors")) {
        throw_format("checkpoint: header missing config or tensors");
    }
    ModelConfig cfg = config_from_json(header["config"].dump());

    const char* blob = bytes.data() + nul + 1;
    const std::uint64_t blob_size = bytes.size() - nul - 1;

    struct Entry {
        int rows, cols;
        std::uint64_t offset, size;
    };
    std::map<std::string, Entry> dir;
    for (const auto& t : header["tensors"]) {
        Entry e;
        try {
            e.rows = t.at("shape").at(0).get<int>();
            e.cols = t.at("shape").at(1).get<int>();
            e.offset = t.at("offset").get<std::uint64_t>();
            e.size = t.at("size").get<std::uint64_t>();
            dir[t.at("name").get<std::string>()] = e;
        } catch (const nlohmann::json::exception& ex) {
            throw_format(std::string("checkpoint: bad tensor entry: ") + ex.what());
        }
    }

    Params<float> params = make_empty_params<float>(cfg);
    visit_params(params, [&](const std::string& name, Mat<float>& m) {
        auto it = dir.find(name);
        if (it == dir.end()) throw_format("checkpoint: missing tensor " + name);
        const Entry& e = it->second;
        if (e.rows != m.rows || e.cols != m.cols) {
            throw_shape("checkpoint: tensor " + name + " header shape " +
                        std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                        " does not match config shape " + std::to_string(m.rows) + "x" +
                        std::to_string(m.cols));
        }
        if (e.size != m.size() * sizeof(float)) {
            throw_format("checkpoint: tensor " + name + " size field inconsistent with shape");
        }
        if (e.offset + e.size > blob_size) {
            throw_truncated("checkpoint: blob truncated at tensor " + name);
        }
        std::memcpy(m.data.data(), blob + e.offset, e.size);
    });
    return {std::move(params), cfg};
}

} // namespace sacvit
