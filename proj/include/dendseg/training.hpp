#pragma once

#include "dendseg/augment.hpp"
#include "dendseg/checkpoint.hpp"
#include "dendseg/models.hpp"
#include "dendseg/optim.hpp"
#include "dendseg/volumeio.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dendseg {

/// A normalized image with its ground truth.
struct VolumeSample {
    std::string name;
    FloatVolume image;
    LabelVolume label;
};

using Dataset = std::vector<VolumeSample>;

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 4;
    Dims3 patch{32, 32, 4};
    Dims3 overlap{0, 0, 0};
    AugmentationSpec augmentation;
    std::uint64_t seed = 0;
};

/// Throws ConfigInvalid.
void validate(const TrainConfig& config);
[[nodiscard]] nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep the values of `base`.
[[nodiscard]] TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_iou = 0.0;
};

[[nodiscard]] nlohmann::json to_json(const EpochRecord& r);

struct ValidationScore {
    double loss = 0.0;
    double iou = 0.0;
};

/// Mean patch BCE and mean per-slice IoU over the set, using a zero-overlap
/// plan so the score depends only on the weights and the patch size.
[[nodiscard]] ValidationScore validate_model(const Model<float>& model, const Dataset& val, Dims3 patch);

struct TrainResult {
    ModelCheckpoint best;
    std::vector<EpochRecord> history;
    int best_epoch = 0; // 0 means the starting weights won
    double best_val_iou = 0.0;
    double initial_val_iou = 0.0;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainerState {
    ModelCheckpoint current;
    std::vector<std::vector<float>> adam_m, adam_v;
    std::int64_t adam_step = 0;
    int epochs_done = 0;
    bool initialized = false;
    std::vector<EpochRecord> history;
    std::optional<ModelCheckpoint> best;
    int best_epoch = 0;
    double best_val_iou = 0.0;
    double initial_val_iou = 0.0;
    TrainConfig config;
};

void save_trainer_state(const TrainerState& state, const std::filesystem::path& base);
[[nodiscard]] TrainerState load_trainer_state(const std::filesystem::path& base);

/// Seeded training loop. Each epoch draws from its own (seed, epoch) stream,
/// so stopping and resuming at an epoch boundary changes nothing.
class Trainer {
public:
    Trainer(Model<float> model, TrainConfig config, Provenance provenance);
    explicit Trainer(const TrainerState& state, Provenance provenance);

    /// Runs epochs until `epochs` are done (no-op if already there). The first
    /// call also scores the starting weights, which compete for best.
    void train_to(int epochs, const Dataset& train, const Dataset& val);

    [[nodiscard]] int epochs_done() const noexcept { return epochs_done_; }
    [[nodiscard]] const std::vector<EpochRecord>& history() const noexcept { return history_; }
    [[nodiscard]] const Model<float>& model() const noexcept { return model_; }
    [[nodiscard]] const TrainConfig& config() const noexcept { return config_; }

    [[nodiscard]] TrainResult result() const;
    [[nodiscard]] TrainerState state() const;

private:
    double run_epoch(int epoch, const Dataset& train);
    [[nodiscard]] ModelCheckpoint snapshot(int epochs_trained) const;

    Model<float> model_;
    TrainConfig config_;
    Provenance provenance_;
    AdamState<float> adam_;
    int epochs_done_ = 0;
    bool initialized_ = false;
    std::vector<EpochRecord> history_;
    std::optional<ModelCheckpoint> best_;
    int best_epoch_ = 0;
    double best_val_iou_ = 0.0;
    double initial_val_iou_ = 0.0;
};

/// Fresh model seeded from config.seed, trained for config.epochs.
[[nodiscard]] TrainResult train(const ModelConfig& architecture, const Dataset& train_set, const Dataset& val_set,
                                const TrainConfig& config, const std::string& dataset_tag = "");

/// Continues from a checkpoint. Patch size and batch size must match the ones
/// recorded in the parent (FrozenHyperparamChanged); when `expected` is given
/// the checkpoint architecture must equal it (ArchitectureMismatch).
[[nodiscard]] TrainResult finetune(const ModelCheckpoint& parent, const Dataset& train_set, const Dataset& val_set,
                                   const TrainConfig& config, const std::string& dataset_tag = "",
                                   const std::optional<ModelConfig>& expected = std::nullopt);

/// Throws FrozenHyperparamChanged when config changes what the parent froze.
void check_frozen_hyperparameters(const Provenance& parent, const TrainConfig& config);

} // namespace dendseg
