#pragma once

#include "dendseg/models.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dendseg {

struct Provenance {
    std::string dataset;
    int epochs_trained = 0;
    nlohmann::json hyperparameters = nlohmann::json::object();
    std::optional<std::string> parent_id;
};

struct WeightArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Architecture config, ordered weight manifest and training provenance.
struct ModelCheckpoint {
    ModelConfig config;
    std::vector<WeightArray> arrays;
    Provenance provenance;

    /// Content hash (config, weights, provenance) as 16 hex digits.
    [[nodiscard]] std::string id() const;
};

inline constexpr int kCheckpointVersion = 1;

template <typename Real>
[[nodiscard]] ModelCheckpoint make_checkpoint(const Model<Real>& model, Provenance provenance);

/// Rebuilds the architecture and copies the weights in. Throws
/// ManifestMismatch when names, order or shapes disagree with the config.
template <typename Real>
[[nodiscard]] Model<Real> model_from_checkpoint(const ModelCheckpoint& checkpoint);

/// Overwrites the weights of an existing model in place.
template <typename Real>
void load_weights(Model<Real>& model, const ModelCheckpoint& checkpoint);

struct CheckpointPaths {
    std::filesystem::path manifest; // <base>.ckpt.json
    std::filesystem::path blob;     // <base>.ckpt.bin
};

[[nodiscard]] CheckpointPaths checkpoint_paths(const std::filesystem::path& base);

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& base);
void save_checkpoint(const Model<float>& model, const Provenance& provenance, const std::filesystem::path& base);
[[nodiscard]] ModelCheckpoint load_checkpoint(const std::filesystem::path& base);

[[nodiscard]] nlohmann::json provenance_to_json(const Provenance& p);
[[nodiscard]] Provenance provenance_from_json(const nlohmann::json& j);

} // namespace dendseg
