#include "ssdnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ssdnet/errors.hpp"

namespace ssdnet {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'D', 'N', 'E', 'T', 'C', 'K'};

template <class T>
void write_le(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::string& what) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw CheckpointError("truncated checkpoint: " + what);
    return value;
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"] = bundle.config.to_json();
    manifest["series_ids"] = bundle.series_ids;
    manifest["run_config"] = bundle.run_config;
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& s : bundle.stats) stats.push_back({{"mean", s.mean}, {"std", s.std}});
    manifest["stats"] = stats;
    nlohmann::json index = nlohmann::json::array();
    std::size_t offset = 0;
    const auto params = bundle.params.all();
    for (const Parameter* p : params) {
        index.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
        offset += p->value.size();
    }
    manifest["parameters"] = index;
    manifest["total_values"] = offset;
    const std::string text = manifest.dump(1);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter* p : params)
        for (double v : p->value.data()) write_le<double>(out, v);
    if (!out) throw IoError("failed writing " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a checkpoint");
    }
    const auto version = read_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("format_version: file has " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    }
    const auto length = read_le<std::uint64_t>(in, "manifest length");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw CheckpointError("truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("manifest: ") + e.what());
    }
    for (const char* key : {"format_version", "config", "parameters", "stats"}) {
        if (!manifest.contains(key)) throw CheckpointError(std::string("manifest is missing field ") + key);
    }
    if (manifest.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
        throw CheckpointError("format_version: manifest disagrees with header");
    }
    ModelBundle bundle;
    try {
        bundle = ModelBundle::create(TrainConfig::from_json(manifest.at("config")));
        for (const auto& s : manifest.at("stats")) {
            bundle.stats.push_back({s.at("mean").get<double>(), s.at("std").get<double>()});
        }
        if (manifest.contains("series_ids")) bundle.series_ids = manifest.at("series_ids").get<std::vector<std::string>>();
        if (manifest.contains("run_config")) bundle.run_config = manifest.at("run_config");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("config: ") + e.what());
    }

    std::vector<double> values;
    const auto total = manifest.value("total_values", std::size_t{0});
    values.reserve(total);
    for (std::size_t i = 0; i < total; ++i) values.push_back(read_le<double>(in, "parameter data"));

    std::size_t seen = 0;
    for (const auto& entry : manifest.at("parameters")) {
        const auto name = entry.at("name").get<std::string>();
        if (!bundle.params.contains(name)) throw CheckpointError("parameter " + name + ": not part of this model");
        Parameter& p = bundle.params.at(name);
        const auto shape = entry.at("shape").get<Shape>();
        if (shape != p.value.shape()) {
            throw CheckpointError("parameter " + name + ": shape " + shape_str(shape) + " in file, expected " +
                                  shape_str(p.value.shape()));
        }
        const auto offset = entry.at("offset").get<std::size_t>();
        if (offset + p.value.size() > values.size()) throw CheckpointError("parameter " + name + ": data out of range");
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), p.value.size(), p.value.data().begin());
        ++seen;
    }
    if (seen != bundle.params.count()) {
        for (const Parameter* p : bundle.params.all()) {
            bool found = false;
            for (const auto& entry : manifest.at("parameters")) found = found || entry.at("name") == p->name;
            if (!found) throw CheckpointError("parameter " + p->name + ": missing from checkpoint");
        }
        throw CheckpointError("parameters: duplicate entries in checkpoint");
    }
    return bundle;
}

}  // namespace ssdnet
