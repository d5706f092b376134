#include "taco/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace taco {

namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'T', 'A', 'C', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

json config_to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"blocks", c.blocks},
                {"heads", c.heads},
                {"ffn_mult", c.ffn_mult},
                {"num_classes_max", c.num_classes_max},
                {"max_categories", c.max_categories}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.num_classes_max = j.at("num_classes_max").get<int>();
    c.max_categories = j.at("max_categories").get<int>();
    return c;
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    json header;
    header["format_version"] = kFormatVersion;
    header["model_config"] = config_to_json(data.config);
    header["arch"] = data.arch;
    header["meta"] = data.meta;

    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : data.tensors) {
        const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(double);
        dir.push_back(json{{"name", name},
                           {"dtype", "f64"},
                           {"shape", t.shape()},
                           {"offset", offset},
                           {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["tensors"] = std::move(dir);
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : data.tensors)
        out.write(reinterpret_cast<const char*>(t.values().data()),
                  static_cast<std::streamsize>(t.values().size_bytes()));
    out.flush();
    if (!out) throw IoError("save_checkpoint: write failed for '" + path + "' (disk full?)");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open '" + path + "'");

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("load_checkpoint: bad magic in '" + path + "'");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kFormatVersion)
        throw CheckpointError("load_checkpoint: unsupported format version " +
                              std::to_string(version));
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || header_len == 0 || header_len > (1ULL << 30))
        throw CheckpointError("load_checkpoint: corrupt header length");
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointError("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("load_checkpoint: invalid header JSON: ") + e.what());
    }

    CheckpointData data;
    try {
        data.config = config_from_json(header.at("model_config"));
        data.arch = header.at("arch").get<std::string>();
        data.meta = header.at("meta").get<std::map<std::string, std::string>>();
        for (const auto& entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            if (entry.at("dtype").get<std::string>() != "f64")
                throw CheckpointError("load_checkpoint: unsupported dtype for '" + name + "'");
            const auto shape = entry.at("shape").get<Shape>();
            const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
            if (nbytes != static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(double))
                throw CheckpointError("load_checkpoint: size mismatch for '" + name + "'");
            std::vector<double> buf(static_cast<std::size_t>(shape_numel(shape)));
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
            if (!in) throw CheckpointError("load_checkpoint: truncated payload at '" + name + "'");
            data.tensors.emplace_back(name, Tensor::from_data(shape, std::move(buf)));
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("load_checkpoint: malformed header: ") + e.what());
    }
    return data;
}

}  // namespace taco
