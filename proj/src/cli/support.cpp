#include "dendseg/cli.hpp"

#include "dendseg/rng.hpp"

#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dendseg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

DatasetIndex load_dataset_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoFailure, "cannot open dataset index " + path.string());
    DatasetIndex index;
    index.root = path.parent_path();
    try {
        const json j = json::parse(in);
        for (const auto& v : j.at("volumes"))
            index.volumes.push_back({v.at("name").get<std::string>(), v.at("image").get<std::string>(), v.at("label").get<std::string>()});
        index.splits = j.value("splits", json::object());
    } catch (const json::exception& e) {
        fail(ErrorCode::BadMeta, path.string() + ": " + e.what());
    }
    return index;
}

void save_dataset_index(const DatasetIndex& index, const fs::path& path) {
    json j;
    j["volumes"] = json::array();
    for (const auto& v : index.volumes) j["volumes"].push_back({{"name", v.name}, {"image", v.image.string()}, {"label", v.label.string()}});
    j["splits"] = index.splits;
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
}

Dataset load_split(const DatasetIndex& index, const std::string& split) {
    if (!index.splits.contains(split)) fail(ErrorCode::Usage, "dataset has no split '" + split + "'");
    Dataset out;
    for (const auto& name : index.splits[split]) {
        const auto n = name.get<std::string>();
        const auto it = std::find_if(index.volumes.begin(), index.volumes.end(), [&](const DatasetEntry& e) { return e.name == n; });
        if (it == index.volumes.end()) fail(ErrorCode::BadMeta, "split '" + split + "' names unknown volume '" + n + "'");
        const VolumePaths img = volume_paths(index.root / it->image);
        const VolumePaths lab = volume_paths(index.root / it->label);
        out.push_back({n, load_volume(img.raw, img.meta).normalized(), load_labels(lab.raw, lab.meta)});
    }
    if (out.empty()) fail(ErrorCode::EmptyDataset, "split '" + split + "' is empty");
    return out;
}

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoFailure, "cannot read " + path.string());
    std::uint64_t h = fnv1a64(std::string_view{});
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        const auto n = static_cast<std::size_t>(in.gcount());
        h = fnv1a64(std::string_view(buf, n), h);
    }
    return hex64(h);
}

RunManifest::RunManifest(std::string command, json config)
    : command_(std::move(command)), config_(std::move(config)), start_(std::chrono::steady_clock::now()),
      wall_start_(std::chrono::system_clock::now()) {}

void RunManifest::add_input(const fs::path& path) { inputs_.push_back(path); }
void RunManifest::add_output(const fs::path& path) { outputs_.push_back(path); }

void RunManifest::write(const fs::path& path) const {
    json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = config_.value("seed", json(nullptr));
    j["inputs"] = json::array();
    for (const auto& p : inputs_) j["inputs"].push_back(p.string());
    j["outputs"] = json::array();
    for (const auto& p : outputs_) j["outputs"].push_back({{"path", p.string()}, {"fnv1a64", file_hash(p)}});
    const std::time_t t = std::chrono::system_clock::to_time_t(wall_start_);
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
    j["started_at"] = ts.str();
    j["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) fail(ErrorCode::IoFailure, "cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot move manifest into place at " + path.string() + ": " + ec.message());
}

} // namespace dendseg::cli
