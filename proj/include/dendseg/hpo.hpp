#pragma once

#include "dendseg/augment.hpp"
#include "dendseg/checkpoint.hpp"
#include "dendseg/models.hpp"
#include "dendseg/rng.hpp"
#include "dendseg/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace dendseg {

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

struct TrialConfig {
    double learning_rate = 1e-3;
    int patch_width = 32; // patch is patch_width x patch_width x patch_depth
    int overlap = 0;      // in-plane overlap; none along z
    int epochs = 1;
    int batch_size = 1;
    AugmentationToggles augmentation;

    friend bool operator==(const TrialConfig&, const TrialConfig&) = default;
};

[[nodiscard]] nlohmann::json to_json(const TrialConfig& c);
[[nodiscard]] TrialConfig trial_config_from_json(const nlohmann::json& j);

class SearchSpace {
public:
    SearchSpace();

    [[nodiscard]] double lr_min() const noexcept { return lr_min_; }
    [[nodiscard]] double lr_max() const noexcept { return lr_max_; }
    [[nodiscard]] const std::vector<int>& patch_widths() const noexcept { return patch_widths_; }
    [[nodiscard]] const std::vector<int>& overlaps() const noexcept { return overlaps_; }
    [[nodiscard]] int epochs_min() const noexcept { return epochs_min_; }
    [[nodiscard]] int epochs_max() const noexcept { return epochs_max_; }
    [[nodiscard]] const std::vector<int>& batch_sizes() const noexcept { return batch_sizes_; }
    [[nodiscard]] const std::vector<AugmentationToggles>& augmentations() const noexcept { return augmentations_; }
    [[nodiscard]] int patch_depth() const noexcept { return patch_depth_; }
    [[nodiscard]] bool frozen() const noexcept { return frozen_; }

    SearchSpace& set_learning_rate(double lo, double hi);
    SearchSpace& set_overlaps(std::vector<int> v);
    SearchSpace& set_epochs(int lo, int hi);
    SearchSpace& set_augmentations(std::vector<AugmentationToggles> v);
    /// The next three throw FrozenHyperparamChanged once the space is frozen.
    SearchSpace& set_patch_widths(std::vector<int> v);
    SearchSpace& set_batch_sizes(std::vector<int> v);
    SearchSpace& set_patch_depth(int d);

    /// Copy with patch size and batch size pinned and locked.
    [[nodiscard]] SearchSpace frozen_at(int patch_width, int batch_size) const;

    /// Throws ConfigInvalid.
    void validate() const;

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] static SearchSpace from_json(const nlohmann::json& j);

private:
    void check_unfrozen(const char* what) const;

    double lr_min_ = 1e-4;
    double lr_max_ = 1e-2;
    std::vector<int> patch_widths_{32};
    std::vector<int> overlaps_{0, 8};
    int epochs_min_ = 1;
    int epochs_max_ = 4;
    std::vector<int> batch_sizes_{2, 4};
    std::vector<AugmentationToggles> augmentations_{{}, {true, false, false, false}};
    int patch_depth_ = 4;
    bool frozen_ = false;
};

/// Each field independently; the learning rate log-uniformly.
[[nodiscard]] TrialConfig sample_config(const SearchSpace& space, Rng& rng);

[[nodiscard]] TrainConfig make_train_config(const TrialConfig& trial, int patch_depth, std::uint64_t seed);

// ---------------------------------------------------------------------------
// ASHA scheduler
// ---------------------------------------------------------------------------

enum class TrialStatus { pending, running, paused_at_rung, completed, failed };

[[nodiscard]] std::string_view to_string(TrialStatus s) noexcept;

struct Trial {
    int id = 0;
    TrialConfig config;
    TrialStatus status = TrialStatus::pending;
    int rung = -1;     // highest rung with a reported score
    int target = 0;    // rung being worked towards while running
    int resource = 0;  // epochs granted so far
    std::vector<double> rung_scores;
    double best_score = -std::numeric_limits<double>::infinity();
};

struct AshaParams {
    int eta = 2;
    int min_resource = 1;
    int max_resource = 4;
    int budget = 30;
};

/// Rung resources, built down from max_resource by factors of eta and capped
/// at 1 + floor(log_eta(budget)) rungs, so a budget of 1 is one full run.
[[nodiscard]] std::vector<int> rung_ladder(const AshaParams& params);

struct AshaAction {
    enum class Kind { promote, start_new, wait, stop };
    Kind kind = Kind::stop;
    int trial = -1;
    int rung = 0;      // rung the trial now works towards
    int resource = 0;  // epochs at that rung
    TrialConfig config;
};

struct HpoEvent {
    std::string event; // start, report, promote, fail, stop
    int trial = -1;
    int rung = 0;
    std::optional<double> score;
    std::optional<TrialConfig> config;

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] static HpoEvent from_json(const nlohmann::json& j);
};

class AshaScheduler {
public:
    AshaScheduler(AshaParams params, SearchSpace space, std::uint64_t seed);

    /// Scans rungs top-down for a trial ranked within the top floor(n_k/eta)
    /// of rung k that has not been promoted yet and promotes the best one;
    /// otherwise starts a new trial while budget remains; otherwise waits
    /// for running trials or stops.
    [[nodiscard]] AshaAction next();

    /// Throws WrongRungBoundary unless resource is the trial's next rung and
    /// InconsistentState unless the trial is running.
    void report(int trial, int resource, double score);
    void report_failure(int trial);

    [[nodiscard]] const AshaParams& params() const noexcept { return params_; }
    [[nodiscard]] const std::vector<int>& ladder() const noexcept { return ladder_; }
    [[nodiscard]] const std::vector<Trial>& trials() const noexcept { return trials_; }
    [[nodiscard]] const std::vector<HpoEvent>& events() const noexcept { return events_; }
    /// (trial, score) in report order.
    [[nodiscard]] const std::vector<std::pair<int, double>>& rung_scores(int rung) const;
    [[nodiscard]] bool promoted(int trial, int from_rung) const;

    /// Best score at the highest rung that has any; ties to the lower id.
    [[nodiscard]] std::optional<int> winner() const;

private:
    Trial& trial_ref(int id);

    AshaParams params_;
    SearchSpace space_;
    Rng rng_;
    std::vector<int> ladder_;
    std::vector<Trial> trials_;
    std::vector<std::vector<std::pair<int, double>>> rung_lists_;
    std::vector<std::vector<char>> promoted_; // [rung][trial]
    std::vector<HpoEvent> events_;
    bool stopped_ = false;
};

/// Replays an event log and checks that every promotion out of rung k picked a
/// trial ranked within the top floor(n_k/eta) of the scores reported there so
/// far (ties ranked by trial id) and never promoted it twice.
struct PromotionAudit {
    bool ok = true;
    int promotions = 0;
    std::string violation;
};
[[nodiscard]] PromotionAudit audit_promotions(const std::vector<HpoEvent>& events, int eta);

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

/// Trains (or resumes) a trial up to `resource` epochs and returns its
/// validation score. Throwing marks the trial failed.
class TrialRunner {
public:
    virtual ~TrialRunner() = default;
    virtual double run(const Trial& trial, int resource) = 0;
};

struct HpoOptions {
    enum class Executor { threaded, simulated };

    int budget = 30;
    int workers = 1;
    int eta = 2;
    int min_resource = 1;
    std::uint64_t seed = 0;
    Executor executor = Executor::threaded; // simulated gives a reproducible event order
    std::function<void(const HpoEvent&)> on_event; // called under the scheduler lock
};

struct HpoRun {
    std::vector<HpoEvent> events;
    std::vector<Trial> trials;
    std::vector<int> ladder;
    int winner = -1;
    double winner_score = 0.0;
};

/// Worker threads run trials while the scheduler decides under a mutex.
/// Throws AllTrialsFailed when no trial reports a score.
[[nodiscard]] HpoRun run_asha(const SearchSpace& space, const HpoOptions& options, TrialRunner& runner);

/// Serialized discrete-event executor: a job for k new epochs takes k time
/// units, completions are delivered in (time, worker) order. Deterministic for
/// any worker count.
[[nodiscard]] HpoRun simulate_asha(const SearchSpace& space, const HpoOptions& options, TrialRunner& runner);

/// Real training behind the scheduler. Each trial keeps a TrainerState at its
/// last rung and resumes from it when promoted; with a state directory the
/// state goes through files. Trials train min(resource, sampled epochs)
/// epochs and report their best validation IoU.
class TrainingTrialRunner : public TrialRunner {
public:
    TrainingTrialRunner(ModelConfig architecture, const Dataset& train, const Dataset& val, int patch_depth,
                        std::uint64_t seed, std::optional<ModelCheckpoint> parent = std::nullopt,
                        std::string dataset_tag = "", std::optional<std::filesystem::path> state_dir = std::nullopt);

    double run(const Trial& trial, int resource) override;

    [[nodiscard]] TrainResult result(int trial) const;

private:
    [[nodiscard]] Provenance provenance() const;

    ModelConfig architecture_;
    const Dataset& train_;
    const Dataset& val_;
    int patch_depth_;
    std::uint64_t seed_;
    std::optional<ModelCheckpoint> parent_;
    std::string dataset_tag_;
    std::optional<std::filesystem::path> state_dir_;
    mutable std::mutex mutex_;
    std::map<int, std::shared_ptr<TrainerState>> states_;
};

struct HpoResult {
    HpoRun run;
    TrainResult winner;
};

/// ASHA over real training runs; fine-tunes `parent` when given.
[[nodiscard]] HpoResult run_hpo(const SearchSpace& space, const ModelConfig& architecture, const Dataset& train,
                                const Dataset& val, const HpoOptions& options,
                                const std::optional<ModelCheckpoint>& parent = std::nullopt,
                                const std::string& dataset_tag = "",
                                const std::optional<std::filesystem::path>& state_dir = std::nullopt);

// ---------------------------------------------------------------------------
// Two-step workflow
// ---------------------------------------------------------------------------

struct TwoStepOptions {
    int budget_step1 = 30;
    int budget_step2 = 30;
    int workers = 1;
    std::uint64_t seed = 0;
    HpoOptions::Executor executor = HpoOptions::Executor::threaded;
    std::function<void(int step, const HpoEvent&)> on_event;
    std::optional<std::filesystem::path> state_dir;
};

struct TwoStepResult {
    HpoResult step1;
    HpoResult step2;
    double step1_val_iou = 0.0; // on the fine validation set
    double final_val_iou = 0.0;
    [[nodiscard]] const ModelCheckpoint& final_checkpoint() const noexcept { return step2.winner.best; }
};

/// Step 1 searches the full space training on coarse_train and scoring on
/// fine_val; step 2 freezes the winner's patch and batch size and fine-tunes
/// its checkpoint on fine_train.
[[nodiscard]] TwoStepResult run_two_step(const SearchSpace& space, const ModelConfig& architecture,
                                         const Dataset& coarse_train, const Dataset& fine_train, const Dataset& fine_val,
                                         const TwoStepOptions& options);

} // namespace dendseg
