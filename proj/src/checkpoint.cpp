#include "meds/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

#include "meds/errors.hpp"

namespace meds::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;
using model::ModelConfig;

namespace {

constexpr char kMagic[8] = {'M', 'E', 'D', 'S', 'C', 'K', 'P', '1'};
constexpr int kFormatVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"base_width", c.base_width},
                {"encoder_depth", c.encoder_depth},
                {"num_aux_detectors", c.num_aux_detectors},
                {"input_size", c.input_size},
                {"patch_depth", c.patch_depth},
                {"dense_growth", c.dense_growth},
                {"dense_width", c.dense_width},
                {"head_width", c.head_width},
                {"use_attention", c.use_attention},
                {"use_patch_input", c.use_patch_input},
                {"use_forward_mip", c.use_forward_mip},
                {"use_backward_mip", c.use_backward_mip},
                {"bn_momentum", c.bn_momentum}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.base_width = j.at("base_width").get<int>();
    c.encoder_depth = j.at("encoder_depth").get<int>();
    c.num_aux_detectors = j.at("num_aux_detectors").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.patch_depth = j.at("patch_depth").get<int>();
    c.dense_growth = j.at("dense_growth").get<int>();
    c.dense_width = j.at("dense_width").get<int>();
    c.head_width = j.at("head_width").get<int>();
    c.use_attention = j.at("use_attention").get<bool>();
    c.use_patch_input = j.at("use_patch_input").get<bool>();
    c.use_forward_mip = j.at("use_forward_mip").get<bool>();
    c.use_backward_mip = j.at("use_backward_mip").get<bool>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    return c;
}

} // namespace

void save_checkpoint(const fs::path& path, const model::MedsNet<float>& net) {
    json header;
    header["format_version"] = kFormatVersion;
    header["model_config"] = config_to_json(net.config());
    json index = json::array();
    std::size_t offset = 0;
    const auto& entries = net.registry().entries;
    for (const auto& e : entries) {
        const auto* t = e.param ? &e.param->val : e.buffer;
        index.push_back({{"name", e.name},
                         {"shape", t->shape},
                         {"offset", offset},
                         {"numel", t->numel()}});
        offset += t->numel();
    }
    header["tensors"] = index;
    const std::string hs = header.dump();

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw DataError("cannot write checkpoint: " + tmp.string());
        f.write(kMagic, sizeof(kMagic));
        const std::uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& e : entries) {
            const auto* t = e.param ? &e.param->val : e.buffer;
            f.write(reinterpret_cast<const char*>(t->data()),
                    static_cast<std::streamsize>(t->numel() * sizeof(float)));
        }
        if (!f) throw DataError("failed writing checkpoint: " + tmp.string());
    }
    fs::rename(tmp, path);
}

model::MedsNet<float> load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw DataError("truncated checkpoint header: " + path.string());
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header: " + std::string(e.what()));
    }
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw DataError("unsupported checkpoint format version");

    ModelConfig cfg = config_from_json(header.at("model_config"));
    model::MedsNet<float> net(cfg, /*seed=*/0);

    auto& entries = net.registry().entries;
    const auto& index = header.at("tensors");
    if (index.size() != entries.size())
        throw DataError("checkpoint tensor count mismatch (config incompatibility)");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& meta = index.at(i);
        auto* t = entries[i].param ? &entries[i].param->val : entries[i].buffer;
        if (meta.at("name").get<std::string>() != entries[i].name ||
            meta.at("shape").get<std::vector<int>>() != t->shape)
            throw DataError("checkpoint tensor '" +
                            meta.at("name").get<std::string>() +
                            "' incompatible with model config");
        f.read(reinterpret_cast<char*>(t->data()),
               static_cast<std::streamsize>(t->numel() * sizeof(float)));
    }
    if (!f) throw DataError("truncated checkpoint data: " + path.string());
    return net;
}

} // namespace meds::ckpt
