#include "dendseg/checkpoint.hpp"

#include "dendseg/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dendseg {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "dendseg-checkpoint";

void check_against_architecture(const ModelCheckpoint& ckpt) {
    const Model<float> reference = Model<float>::build(ckpt.config, 0);
    const auto& expected = reference.named_parameters();
    if (expected.size() != ckpt.arrays.size())
        fail(ErrorCode::ManifestMismatch, "checkpoint holds " + std::to_string(ckpt.arrays.size()) + " arrays, architecture needs " +
                                              std::to_string(expected.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& a = ckpt.arrays[i];
        if (a.name != expected[i].name || a.shape != expected[i].tensor.shape())
            fail(ErrorCode::ManifestMismatch, "array " + std::to_string(i) + " is '" + a.name + "' " + shape_string(a.shape) +
                                                  ", architecture needs '" + expected[i].name + "' " +
                                                  shape_string(expected[i].tensor.shape()));
        if (a.values.size() != shape_numel(a.shape))
            fail(ErrorCode::ManifestMismatch, "array '" + a.name + "' length disagrees with its shape");
    }
}

void append_le_floats(std::string& out, const std::vector<float>& values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * sizeof(float));
    std::memcpy(out.data() + start, values.data(), values.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = start; i < out.size(); i += 4) std::swap(out[i], out[i + 3]), std::swap(out[i + 1], out[i + 2]);
    }
}

} // namespace

json provenance_to_json(const Provenance& p) {
    json j;
    j["dataset"] = p.dataset;
    j["epochs_trained"] = p.epochs_trained;
    j["hyperparameters"] = p.hyperparameters;
    j["parent_id"] = p.parent_id ? json(*p.parent_id) : json(nullptr);
    return j;
}

Provenance provenance_from_json(const json& j) {
    Provenance p;
    p.dataset = j.value("dataset", std::string());
    p.epochs_trained = j.value("epochs_trained", 0);
    p.hyperparameters = j.value("hyperparameters", json::object());
    if (j.contains("parent_id") && j["parent_id"].is_string()) p.parent_id = j["parent_id"].get<std::string>();
    return p;
}

std::string ModelCheckpoint::id() const {
    std::uint64_t h = fnv1a64(config_to_json(config).dump());
    h = fnv1a64(provenance_to_json(provenance).dump(), h);
    for (const auto& a : arrays) {
        h = fnv1a64(a.name, h);
        h = fnv1a64(shape_string(a.shape), h);
        h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(a.values.data()), a.values.size() * sizeof(float)), h);
    }
    return hex64(h);
}

template <typename Real>
ModelCheckpoint make_checkpoint(const Model<Real>& model, Provenance provenance) {
    ModelCheckpoint ckpt{model.config(), {}, std::move(provenance)};
    for (const auto& p : model.named_parameters()) {
        WeightArray a{p.name, p.tensor.shape(), {}};
        a.values.reserve(p.tensor.numel());
        for (Real v : p.tensor.values()) a.values.push_back(static_cast<float>(v));
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

template <typename Real>
void load_weights(Model<Real>& model, const ModelCheckpoint& checkpoint) {
    if (!(config_to_json(model.config()) == config_to_json(checkpoint.config)))
        fail(ErrorCode::ArchitectureMismatch, "checkpoint architecture differs from the model");
    check_against_architecture(checkpoint);
    const auto& params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<Real> t = params[i].tensor;
        auto dst = t.mutable_values();
        const auto& src = checkpoint.arrays[i].values;
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<Real>(src[j]);
    }
}

template <typename Real>
Model<Real> model_from_checkpoint(const ModelCheckpoint& checkpoint) {
    Model<Real> model = Model<Real>::build(checkpoint.config, 0);
    load_weights(model, checkpoint);
    return model;
}

CheckpointPaths checkpoint_paths(const std::filesystem::path& base) {
    std::string s = base.string();
    for (const char* suffix : {".ckpt.json", ".ckpt.bin"}) {
        const std::string suf(suffix);
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) s.resize(s.size() - suf.size());
    }
    return {s + ".ckpt.json", s + ".ckpt.bin"};
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& base) {
    check_against_architecture(checkpoint);
    const CheckpointPaths paths = checkpoint_paths(base);
    json manifest;
    manifest["format"] = kFormatTag;
    manifest["version"] = kCheckpointVersion;
    manifest["id"] = checkpoint.id();
    manifest["config"] = config_to_json(checkpoint.config);
    manifest["provenance"] = provenance_to_json(checkpoint.provenance);
    manifest["arrays"] = json::array();
    std::string blob;
    for (const auto& a : checkpoint.arrays) {
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", blob.size()}, {"count", a.values.size()}});
        append_le_floats(blob, a.values);
    }
    std::ofstream bin(paths.blob, std::ios::binary | std::ios::trunc);
    if (!bin) fail(ErrorCode::IoFailure, "cannot write " + paths.blob.string());
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream js(paths.manifest, std::ios::trunc);
    if (!js) fail(ErrorCode::IoFailure, "cannot write " + paths.manifest.string());
    js << manifest.dump(2) << "\n";
    if (!bin || !js) fail(ErrorCode::IoFailure, "checkpoint write failed for " + base.string());
}

void save_checkpoint(const Model<float>& model, const Provenance& provenance, const std::filesystem::path& base) {
    save_checkpoint(make_checkpoint(model, provenance), base);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& base) {
    const CheckpointPaths paths = checkpoint_paths(base);
    std::ifstream js(paths.manifest);
    if (!js) fail(ErrorCode::IoFailure, "cannot open " + paths.manifest.string());
    json manifest;
    try {
        manifest = json::parse(js);
    } catch (const json::exception& e) {
        fail(ErrorCode::ManifestMismatch, paths.manifest.string() + ": " + e.what());
    }
    if (manifest.value("format", std::string()) != kFormatTag)
        fail(ErrorCode::VersionUnknown, paths.manifest.string() + " is not a checkpoint manifest");
    if (manifest.value("version", -1) != kCheckpointVersion)
        fail(ErrorCode::VersionUnknown, "checkpoint version " + manifest.value("version", json(-1)).dump() + " is not supported");

    std::ifstream bin(paths.blob, std::ios::binary);
    if (!bin) fail(ErrorCode::IoFailure, "cannot open " + paths.blob.string());
    const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    ModelCheckpoint ckpt;
    try {
        ckpt.config = config_from_json(manifest.at("config"));
        ckpt.provenance = provenance_from_json(manifest.at("provenance"));
        std::size_t expected_bytes = 0;
        for (const auto& entry : manifest.at("arrays")) {
            WeightArray a;
            a.name = entry.at("name").get<std::string>();
            a.shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto count = entry.at("count").get<std::size_t>();
            if (count != shape_numel(a.shape))
                fail(ErrorCode::ManifestMismatch, "array '" + a.name + "' count disagrees with its shape");
            if (offset != expected_bytes || offset + count * sizeof(float) > blob.size())
                fail(ErrorCode::ManifestMismatch, "weight file " + paths.blob.string() + " is truncated or misaligned at '" + a.name + "'");
            a.values.resize(count);
            std::memcpy(a.values.data(), blob.data() + offset, count * sizeof(float));
            if constexpr (std::endian::native == std::endian::big) {
                for (float& v : a.values) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
            }
            expected_bytes = offset + count * sizeof(float);
            ckpt.arrays.push_back(std::move(a));
        }
        if (expected_bytes != blob.size())
            fail(ErrorCode::ManifestMismatch, "weight file holds " + std::to_string(blob.size()) + " bytes, manifest describes " +
                                                  std::to_string(expected_bytes));
    } catch (const json::exception& e) {
        fail(ErrorCode::ManifestMismatch, paths.manifest.string() + ": " + e.what());
    }
    check_against_architecture(ckpt);
    return ckpt;
}

template ModelCheckpoint make_checkpoint<float>(const Model<float>&, Provenance);
template ModelCheckpoint make_checkpoint<double>(const Model<double>&, Provenance);
template Model<float> model_from_checkpoint<float>(const ModelCheckpoint&);
template Model<double> model_from_checkpoint<double>(const ModelCheckpoint&);
template void load_weights<float>(Model<float>&, const ModelCheckpoint&);
template void load_weights<double>(Model<double>&, const ModelCheckpoint&);

} // namespace dendseg
