#pragma once

#include "dendseg/training.hpp"
#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dendseg::cli {

/// Entry point behind the dendseg executable. Returns 0 on success, 1 on a
/// domain error and 2 on usage or I/O errors; diagnostics go to `err` as a
/// single line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// dataset.json: volume pairs relative to the file, plus named splits
// ---------------------------------------------------------------------------

struct DatasetEntry {
    std::string name;
    std::filesystem::path image; // volume base path (no extension)
    std::filesystem::path label;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<DatasetEntry> volumes;
    nlohmann::json splits = nlohmann::json::object(); // split name -> [volume names]
};

[[nodiscard]] DatasetIndex load_dataset_index(const std::filesystem::path& path);
void save_dataset_index(const DatasetIndex& index, const std::filesystem::path& path);
/// Loads and normalizes the volumes of a split. Throws Usage for an unknown
/// split and EmptyDataset for an empty one.
[[nodiscard]] Dataset load_split(const DatasetIndex& index, const std::string& split);

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

class RunManifest {
public:
    RunManifest(std::string command, nlohmann::json config);

    /// The resolved config, once a command has filled in derived values.
    void set_config(nlohmann::json config) { config_ = std::move(config); }
    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
    /// Hashes every output and writes the manifest via a temporary file and a rename.
    void write(const std::filesystem::path& path) const;

private:
    std::string command_;
    nlohmann::json config_;
    std::vector<std::filesystem::path> inputs_, outputs_;
    std::chrono::steady_clock::time_point start_;
    std::chrono::system_clock::time_point wall_start_;
};

/// FNV-1a-64 of a file's bytes as 16 hex digits.
[[nodiscard]] std::string file_hash(const std::filesystem::path& path);

} // namespace dendseg::cli
