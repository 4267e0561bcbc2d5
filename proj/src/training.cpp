#include "dendseg/training.hpp"

#include "dendseg/metrics.hpp"
#include "dendseg/patching.hpp"
#include "dendseg/rng.hpp"
#include "dendseg/segment.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dendseg {

using nlohmann::json;

namespace {

json dims_json(Dims3 d) { return json::array({d.width, d.height, d.depth}); }

Dims3 dims_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::ConfigInvalid, "expected [width, height, depth], got " + j.dump());
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

bool is_identity(const AugmentationSpec& s) {
    return !s.flip_x && !s.flip_y && !s.flip_z && s.rotation_max_deg == 0.0 && s.shear_max_deg == 0.0 &&
           s.brightness_delta == 0.0 && s.contrast_min == 1.0 && s.contrast_max == 1.0;
}

// Mean BCE of one patch, same stable form as the training loss.
double patch_bce(const FloatVolume& logits, const LabelVolume& truth) {
    double sum = 0.0;
    const auto z = logits.data();
    const auto t = truth.data();
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z[i];
        sum += std::max(v, 0.0) - v * t[i] + std::log1p(std::exp(-std::abs(v)));
    }
    return sum / static_cast<double>(z.size());
}

Shape input_shape(const ModelConfig& config, int batch, Dims3 patch) {
    return spatial_rank(config) == 2 ? Shape{batch * patch.depth, 1, patch.height, patch.width}
                                     : Shape{batch, 1, patch.depth, patch.height, patch.width};
}

struct PatchRef {
    std::size_t volume;
    PatchOrigin origin;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

} // namespace

void validate(const TrainConfig& c) {
    auto bad = [](const std::string& what) { fail(ErrorCode::ConfigInvalid, "train config: " + what); };
    if (!(c.learning_rate > 0.0 && std::isfinite(c.learning_rate))) bad("learning_rate must be positive");
    if (c.epochs < 0) bad("epochs must be >= 0");
    if (c.batch_size < 1) bad("batch_size must be >= 1");
    if (!c.patch.valid()) bad("patch dims must be >= 1");
    for (int a = 0; a < 3; ++a)
        if (c.overlap.axis(a) < 0 || c.overlap.axis(a) >= c.patch.axis(a)) bad("overlap must lie in [0, patch) per axis");
    validate(c.augmentation);
}

json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},         {"batch_size", c.batch_size},
            {"patch", dims_json(c.patch)},      {"overlap", dims_json(c.overlap)}, {"augmentation", to_json(c.augmentation)},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("patch")) c.patch = dims_from_json(j["patch"]);
        if (j.contains("overlap")) c.overlap = dims_from_json(j["overlap"]);
        if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j["augmentation"]);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("train config: ") + e.what());
    }
    validate(c);
    return c;
}

json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"val_iou", r.val_iou}};
}

ValidationScore validate_model(const Model<float>& model, const Dataset& val, Dims3 patch) {
    if (val.empty()) fail(ErrorCode::EmptyDataset, "validation set is empty");
    ValidationScore score;
    std::size_t patches = 0;
    for (const auto& sample : val) {
        const PatchGrid grid = plan_patches(sample.image.dims(), patch, {0, 0, 0});
        const auto logits = predict_patches(model, sample.image, grid);
        Stitcher stitcher(grid);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            const Array3<std::uint8_t> t = crop(sample.label.array(), grid.origin(i), patch);
            score.loss += patch_bce(logits[i], LabelVolume(patch, std::vector<std::uint8_t>(t.data().begin(), t.data().end())));
            stitcher.add(i, logits[i]);
        }
        patches += logits.size();
        score.iou += mean_slice_iou(stitcher.labels(), sample.label);
    }
    score.loss /= static_cast<double>(patches);
    score.iou /= static_cast<double>(val.size());
    return score;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(Model<float> model, TrainConfig config, Provenance provenance)
    : model_(std::move(model)), config_(std::move(config)), provenance_(std::move(provenance)) {
    validate(config_);
    const auto params = model_.parameters();
    adam_ = AdamState<float>(AdamHyper{config_.learning_rate}, params);
}

Trainer::Trainer(const TrainerState& s, Provenance provenance)
    : model_(model_from_checkpoint<float>(s.current)), config_(s.config), provenance_(std::move(provenance)) {
    validate(config_);
    const auto params = model_.parameters();
    adam_ = AdamState<float>(AdamHyper{config_.learning_rate}, params);
    if (s.adam_m.size() != params.size() || s.adam_v.size() != params.size())
        fail(ErrorCode::ManifestMismatch, "trainer state holds moments for a different model");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (s.adam_m[i].size() != params[i].numel() || s.adam_v[i].size() != params[i].numel())
            fail(ErrorCode::ManifestMismatch, "trainer state moment " + std::to_string(i) + " has the wrong length");
    adam_.m = s.adam_m;
    adam_.v = s.adam_v;
    adam_.step = s.adam_step;
    epochs_done_ = s.epochs_done;
    initialized_ = s.initialized;
    history_ = s.history;
    best_ = s.best;
    best_epoch_ = s.best_epoch;
    best_val_iou_ = s.best_val_iou;
    initial_val_iou_ = s.initial_val_iou;
}

ModelCheckpoint Trainer::snapshot(int epochs_trained) const {
    Provenance p = provenance_;
    p.epochs_trained = provenance_.epochs_trained + epochs_trained;
    p.hyperparameters = to_json(config_);
    return make_checkpoint(model_, std::move(p));
}

void Trainer::train_to(int epochs, const Dataset& train, const Dataset& val) {
    check_input_shape(model_.config(), input_shape(model_.config(), config_.batch_size, config_.patch));
    if (!initialized_) {
        const ValidationScore s = validate_model(model_, val, config_.patch);
        initial_val_iou_ = best_val_iou_ = s.iou;
        best_epoch_ = 0;
        best_ = snapshot(0);
        initialized_ = true;
    }
    if (epochs > epochs_done_ && train.empty()) fail(ErrorCode::EmptyDataset, "training set is empty");
    while (epochs_done_ < epochs) {
        const int epoch = epochs_done_ + 1;
        EpochRecord r;
        r.epoch = epoch;
        r.train_loss = run_epoch(epoch, train);
        const ValidationScore s = validate_model(model_, val, config_.patch);
        r.val_loss = s.loss;
        r.val_iou = s.iou;
        history_.push_back(r);
        epochs_done_ = epoch;
        if (s.iou > best_val_iou_) {
            best_val_iou_ = s.iou;
            best_epoch_ = epoch;
            best_ = snapshot(epoch);
        }
    }
}

double Trainer::run_epoch(int epoch, const Dataset& train) {
    std::map<std::tuple<int, int, int>, PatchGrid> grids;
    std::vector<PatchRef> refs;
    for (std::size_t v = 0; v < train.size(); ++v) {
        const Dims3 d = train[v].image.dims();
        auto key = std::make_tuple(d.width, d.height, d.depth);
        auto it = grids.find(key);
        if (it == grids.end()) it = grids.emplace(key, plan_patches(d, config_.patch, config_.overlap)).first;
        for (const auto& o : it->second.origins()) refs.push_back({v, o});
    }
    Rng rng(derive_seed(derive_seed(config_.seed, "epoch"), static_cast<std::uint64_t>(epoch)));
    shuffle(std::span(refs), rng);

    const bool augmenting = !is_identity(config_.augmentation);
    auto params = model_.parameters();
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(config_.batch_size)) {
        const std::size_t end = std::min(refs.size(), start + static_cast<std::size_t>(config_.batch_size));
        std::vector<FloatVolume> images;
        std::vector<float> targets;
        for (std::size_t i = start; i < end; ++i) {
            const VolumeSample& s = train[refs[i].volume];
            FloatVolume img = crop(s.image, refs[i].origin, config_.patch);
            const auto lab_arr = crop(s.label.array(), refs[i].origin, config_.patch);
            LabelVolume lab(config_.patch, std::vector<std::uint8_t>(lab_arr.data().begin(), lab_arr.data().end()));
            const std::uint64_t draw = rng();
            if (augmenting) std::tie(img, lab) = augment(img, lab, config_.augmentation, draw);
            images.push_back(std::move(img));
            for (std::uint8_t t : lab.data()) targets.push_back(static_cast<float>(t));
        }
        std::vector<const FloatVolume*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);

        Tape<float> tape;
        TapeScope<float> scope(&tape);
        const Tensor<float> input = make_input_batch(model_.config(), ptrs);
        const Tensor<float> logits = model_.forward(input);
        const Tensor<float> loss = bce_with_logits(logits, Tensor<float>(logits.shape(), std::move(targets)));
        const double value = loss.item();
        if (!std::isfinite(value))
            fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches) + ": loss " +
                                               fmt(value) + " at learning rate " + fmt(config_.learning_rate));
        backward(loss);
        adam_step(std::span(params), adam_);
        loss_sum += value;
        ++batches;
    }
    return batches > 0 ? loss_sum / batches : 0.0;
}

TrainResult Trainer::result() const {
    if (!best_) fail(ErrorCode::InconsistentState, "trainer has not run yet");
    return {*best_, history_, best_epoch_, best_val_iou_, initial_val_iou_};
}

TrainerState Trainer::state() const {
    TrainerState s;
    s.current = snapshot(epochs_done_);
    s.adam_m = adam_.m;
    s.adam_v = adam_.v;
    s.adam_step = adam_.step;
    s.epochs_done = epochs_done_;
    s.initialized = initialized_;
    s.history = history_;
    s.best = best_;
    s.best_epoch = best_epoch_;
    s.best_val_iou = best_val_iou_;
    s.initial_val_iou = initial_val_iou_;
    s.config = config_;
    return s;
}

// ---------------------------------------------------------------------------
// Trainer state files: <base>.state.json, <base>.state.bin (moments),
// <base>.current.ckpt.*, <base>.best.ckpt.*
// ---------------------------------------------------------------------------

void save_trainer_state(const TrainerState& s, const std::filesystem::path& base) {
    const std::string b = base.string();
    save_checkpoint(s.current, b + ".current");
    if (s.best) save_checkpoint(*s.best, b + ".best");

    std::string blob;
    for (const auto* moments : {&s.adam_m, &s.adam_v})
        for (const auto& m : *moments) {
            const std::size_t at = blob.size();
            blob.resize(at + m.size() * sizeof(float));
            std::memcpy(blob.data() + at, m.data(), m.size() * sizeof(float));
        }
    std::ofstream bin(b + ".state.bin", std::ios::binary | std::ios::trunc);
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));

    json j;
    j["config"] = to_json(s.config);
    j["adam_step"] = s.adam_step;
    j["epochs_done"] = s.epochs_done;
    j["initialized"] = s.initialized;
    j["history"] = json::array();
    for (const auto& r : s.history) j["history"].push_back(to_json(r));
    j["has_best"] = s.best.has_value();
    j["best_epoch"] = s.best_epoch;
    j["best_val_iou"] = s.best_val_iou;
    j["initial_val_iou"] = s.initial_val_iou;
    std::ofstream js(b + ".state.json", std::ios::trunc);
    js << j.dump(2) << "\n";
    if (!bin || !js) fail(ErrorCode::IoFailure, "cannot write trainer state " + b);
}

TrainerState load_trainer_state(const std::filesystem::path& base) {
    const std::string b = base.string();
    std::ifstream js(b + ".state.json");
    if (!js) fail(ErrorCode::IoFailure, "cannot open " + b + ".state.json");
    TrainerState s;
    try {
        const json j = json::parse(js);
        s.config = train_config_from_json(j.at("config"));
        s.adam_step = j.at("adam_step").get<std::int64_t>();
        s.epochs_done = j.at("epochs_done").get<int>();
        s.initialized = j.at("initialized").get<bool>();
        for (const auto& r : j.at("history"))
            s.history.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(), r.at("val_loss").get<double>(),
                                 r.at("val_iou").get<double>()});
        s.best_epoch = j.at("best_epoch").get<int>();
        s.best_val_iou = j.at("best_val_iou").get<double>();
        s.initial_val_iou = j.at("initial_val_iou").get<double>();
        if (j.at("has_best").get<bool>()) s.best = load_checkpoint(b + ".best");
    } catch (const json::exception& e) {
        fail(ErrorCode::ManifestMismatch, b + ".state.json: " + e.what());
    }
    s.current = load_checkpoint(b + ".current");

    std::ifstream bin(b + ".state.bin", std::ios::binary);
    if (!bin) fail(ErrorCode::IoFailure, "cannot open " + b + ".state.bin");
    const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    std::size_t at = 0;
    for (auto* moments : {&s.adam_m, &s.adam_v})
        for (const auto& a : s.current.arrays) {
            const std::size_t bytes = a.values.size() * sizeof(float);
            if (at + bytes > blob.size()) fail(ErrorCode::ManifestMismatch, b + ".state.bin is truncated");
            std::vector<float> m(a.values.size());
            std::memcpy(m.data(), blob.data() + at, bytes);
            at += bytes;
            moments->push_back(std::move(m));
        }
    if (at != blob.size()) fail(ErrorCode::ManifestMismatch, b + ".state.bin has trailing bytes");
    return s;
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

TrainResult train(const ModelConfig& architecture, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                  const std::string& dataset_tag) {
    validate(config);
    Trainer t(Model<float>::build(architecture, derive_seed(config.seed, "init")), config, Provenance{dataset_tag, 0, {}, {}});
    t.train_to(config.epochs, train_set, val_set);
    return t.result();
}

void check_frozen_hyperparameters(const Provenance& parent, const TrainConfig& config) {
    const json& h = parent.hyperparameters;
    if (h.contains("patch") && dims_from_json(h["patch"]) != config.patch)
        fail(ErrorCode::FrozenHyperparamChanged, "patch dims are fixed to " + h["patch"].dump() + " by the parent checkpoint");
    if (h.contains("batch_size") && h["batch_size"].get<int>() != config.batch_size)
        fail(ErrorCode::FrozenHyperparamChanged, "batch size is fixed to " + h["batch_size"].dump() + " by the parent checkpoint");
}

TrainResult finetune(const ModelCheckpoint& parent, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config,
                     const std::string& dataset_tag, const std::optional<ModelConfig>& expected) {
    if (expected && !(config_to_json(*expected) == config_to_json(parent.config)))
        fail(ErrorCode::ArchitectureMismatch, "checkpoint is " + config_to_json(parent.config).dump() + ", expected " +
                                                  config_to_json(*expected).dump());
    check_frozen_hyperparameters(parent.provenance, config);
    Provenance p{dataset_tag, parent.provenance.epochs_trained, {}, parent.id()};
    Trainer t(model_from_checkpoint<float>(parent), config, std::move(p));
    t.train_to(config.epochs, train_set, val_set);
    return t.result();
}

} // namespace dendseg
