#include "dendseg/cli.hpp"

#include "dendseg/baselines.hpp"
#include "dendseg/checkpoint.hpp"
#include "dendseg/hpo.hpp"
#include "dendseg/metrics.hpp"
#include "dendseg/segment.hpp"
#include "dendseg/split.hpp"
#include "dendseg/synthgen.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace dendseg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config resolution: defaults <- --config file <- flags
// ---------------------------------------------------------------------------

enum class Kind { integer, real, text, toggle, triple, architecture };

struct Binding {
    std::string flag;
    std::string key; // JSON pointer into the config
    Kind kind;
    std::string value;
    bool toggle = false;
    CLI::Option* option = nullptr;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::Usage, path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
}

// "32,32,4" or "32x32x4"
Dims3 parse_triple(std::string text) {
    std::replace(text.begin(), text.end(), 'x', ',');
    std::vector<int> v;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        std::size_t used = 0;
        try {
            v.push_back(std::stoi(part, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != part.size()) fail(ErrorCode::Usage, "expected W,H,D but got '" + text + "'");
    }
    if (v.size() != 3) fail(ErrorCode::Usage, "expected W,H,D but got '" + text + "'");
    return {v[0], v[1], v[2]};
}

Dims3 dims_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3 || !std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_number_integer(); }))
        fail(ErrorCode::Usage, std::string(what) + " must be [w, h, d]");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json to_value(const Binding& b) {
    std::size_t used = 0;
    try {
        switch (b.kind) {
        case Kind::integer: {
            const long long v = std::stoll(b.value, &used);
            if (used == b.value.size()) return v;
            break;
        }
        case Kind::real: {
            const double v = std::stod(b.value, &used);
            if (used == b.value.size()) return v;
            break;
        }
        case Kind::text: return b.value;
        case Kind::toggle: return b.toggle;
        case Kind::triple: {
            const Dims3 d = parse_triple(b.value);
            return json::array({d.width, d.height, d.depth});
        }
        case Kind::architecture: return config_to_json(default_config(parse_architecture(b.value)));
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Usage) throw;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::Usage, "bad value '" + b.value + "' for " + b.flag);
}

/// Rejects keys the command does not know. Objects listed in `opaque` are
/// replaced wholesale and checked by their own parsers.
void check_keys(const json& given, const json& known, const std::string& prefix, const std::set<std::string>& opaque) {
    if (!given.is_object()) fail(ErrorCode::Usage, "config" + prefix + " must be an object");
    for (const auto& [k, v] : given.items()) {
        const std::string path = prefix + "/" + k;
        if (!known.contains(k)) fail(ErrorCode::Usage, "unknown config key '" + path + "'");
        if (known[k].is_object() && !opaque.contains(path)) check_keys(v, known[k], path, opaque);
    }
}

void overlay_config(json& target, const json& patch, const std::string& prefix, const std::set<std::string>& opaque) {
    for (const auto& [k, v] : patch.items()) {
        const std::string path = prefix + "/" + k;
        if (v.is_object() && target.contains(k) && target[k].is_object() && !opaque.contains(path))
            overlay_config(target[k], v, path, opaque);
        else
            target[k] = v;
    }
}

template <typename T>
T get(const json& cfg, const char* key) {
    try {
        return cfg.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorCode::Usage, std::string("config key '") + key + "' is missing or has the wrong type");
    }
}

std::string required_path(const json& cfg, const char* key) {
    const auto v = get<std::string>(cfg, key);
    if (v.empty()) fail(ErrorCode::Usage, std::string("--") + key + " is required");
    return v;
}

using Body = std::function<void(json& cfg, std::ostream& out, RunManifest& manifest)>;

class Command {
public:
    Command(CLI::App& parent, std::string name, std::string description, json defaults, Body body)
        : name_(std::move(name)), defaults_(std::move(defaults)), body_(std::move(body)) {
        app_ = parent.add_subcommand(name_, std::move(description));
        app_->add_option("--config", config_path_, "JSON config file; a run manifest also works. Flags override it");
        app_->add_option("--manifest", manifest_path_, "Run manifest path (default: <out>.manifest.json)");
        bind("--seed", "/seed", Kind::integer, "Root seed for every stochastic component");
    }

    Command& bind(std::string flag, std::string key, Kind kind, const std::string& help) {
        Binding& b = bindings_.emplace_back(Binding{std::move(flag), std::move(key), kind, "", false, nullptr});
        b.option = kind == Kind::toggle ? app_->add_flag(b.flag, b.toggle, help) : app_->add_option(b.flag, b.value, help);
        return *this;
    }

    Command& opaque(std::string key) {
        opaque_.insert(std::move(key));
        return *this;
    }

    [[nodiscard]] bool parsed() const { return app_->parsed(); }

    void execute(std::ostream& out) {
        json cfg = defaults_;
        if (!config_path_.empty()) {
            json file = read_json_file(config_path_);
            if (file.is_object() && file.contains("command") && file.contains("config")) {
                if (file["command"] != name_) fail(ErrorCode::Usage, "manifest belongs to '" + file["command"].dump() + "'");
                file = file["config"];
            }
            check_keys(file, defaults_, "", opaque_);
            overlay_config(cfg, file, "", opaque_);
        }
        for (const Binding& b : bindings_)
            if (b.option->count() > 0) cfg[json::json_pointer(b.key)] = to_value(b);

        RunManifest manifest(name_, cfg);
        if (!config_path_.empty()) manifest.add_input(config_path_);
        body_(cfg, out, manifest);
        manifest.set_config(cfg);

        fs::path path = manifest_path_;
        if (path.empty()) {
            const std::string o = required_path(cfg, "out");
            path = name_ == "synth" ? fs::path(o) / "run.manifest.json" : fs::path(o + ".manifest.json");
        }
        manifest.write(path);
        out << "manifest " << path.string() << "\n";
    }

private:
    std::string name_;
    json defaults_;
    Body body_;
    CLI::App* app_ = nullptr;
    std::string config_path_;
    std::string manifest_path_;
    std::deque<Binding> bindings_;
    std::set<std::string> opaque_;
};

std::uint64_t seed_of(const json& cfg) { return get<std::uint64_t>(cfg, "seed"); }

void save_label_files(const LabelVolume& labels, const std::string& base, RunManifest& m) {
    const VolumePaths p = volume_paths(base);
    save_labels(labels, p.raw, p.meta);
    m.add_output(p.raw);
    m.add_output(p.meta);
}

void save_checkpoint_files(const ModelCheckpoint& c, const std::string& base, RunManifest& m) {
    save_checkpoint(c, base);
    const CheckpointPaths p = checkpoint_paths(base);
    m.add_output(p.manifest);
    m.add_output(p.blob);
}

LabelVolume load_label_files(const std::string& base, RunManifest& m) {
    const VolumePaths p = volume_paths(base);
    m.add_input(p.raw);
    return load_labels(p.raw, p.meta);
}

GrayVolume load_gray_files(const std::string& base, RunManifest& m) {
    const VolumePaths p = volume_paths(base);
    m.add_input(p.raw);
    return load_volume(p.raw, p.meta);
}

struct Splits {
    Dataset train, val;
};

Splits load_splits(const std::string& index_path, const json& cfg, RunManifest& m) {
    const DatasetIndex index = load_dataset_index(index_path);
    m.add_input(index_path);
    return {load_split(index, get<std::string>(cfg, "train_split")), load_split(index, get<std::string>(cfg, "val_split"))};
}

json history_json(const TrainResult& r) {
    json h = json::array();
    for (const auto& e : r.history) h.push_back(to_json(e));
    return {{"best_epoch", r.best_epoch}, {"best_val_iou", r.best_val_iou}, {"initial_val_iou", r.initial_val_iou}, {"history", h}};
}

void print_history(const TrainResult& r, std::ostream& out) {
    for (const auto& e : r.history)
        out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_iou " << e.val_iou << "\n";
    out << "best epoch " << r.best_epoch << " val_iou " << r.best_val_iou << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

json synth_defaults() {
    json spec = to_json(SynthSpec{});
    spec.erase("seed");
    return {{"out", ""}, {"count", 28}, {"val_fraction", 0.15}, {"test_fraction", 0.15}, {"synth", spec}, {"seed", 0}};
}

void run_synth(json& cfg, std::ostream& out, RunManifest& m) {
    const fs::path dir = required_path(cfg, "out");
    const int count = get<int>(cfg, "count");
    if (count < 1) fail(ErrorCode::Usage, "--count must be >= 1");
    const std::uint64_t seed = seed_of(cfg);
    SynthSpec base = synth_spec_from_json(cfg["synth"]);

    SplitSpec split;
    split.val = get<double>(cfg, "val_fraction");
    split.test = get<double>(cfg, "test_fraction");
    split.train = 1.0 - split.val - split.test;
    split.seed = derive_seed(seed, "split");
    const SplitIndices parts = split_dataset(static_cast<std::size_t>(count), split);

    fs::create_directories(dir);
    DatasetIndex index;
    const std::uint64_t volume_root = derive_seed(seed, "volumes");
    std::vector<std::string> names;
    for (int i = 0; i < count; ++i) {
        std::ostringstream name;
        name << "vol_" << std::setw(3) << std::setfill('0') << i;
        SynthSpec spec = base;
        spec.seed = derive_seed(volume_root, static_cast<std::uint64_t>(i));
        const auto [gray, label] = generate(spec);
        const VolumePaths g = volume_paths(dir / name.str());
        save_volume(gray, g.raw, g.meta);
        m.add_output(g.raw);
        m.add_output(g.meta);
        save_label_files(label, (dir / (name.str() + "_label")).string(), m);
        index.volumes.push_back({name.str(), name.str(), name.str() + "_label"});
        names.push_back(name.str());
    }
    auto pick = [&](const std::vector<std::size_t>& idx) {
        json a = json::array();
        for (auto i : idx) a.push_back(names[i]);
        return a;
    };
    index.splits = {{"train", pick(parts.train)}, {"val", pick(parts.val)}, {"test", pick(parts.test)}};
    save_dataset_index(index, dir / "dataset.json");
    m.add_output(dir / "dataset.json");
    out << "wrote " << count << " volumes (" << parts.train.size() << " train, " << parts.val.size() << " val, "
        << parts.test.size() << " test) to " << dir.string() << "\n";
}

json baseline_defaults() { return {{"input", ""}, {"out", ""}, {"method", "otsu"}, {"kmeans_iters", 100}, {"seed", 0}}; }

void run_baseline(json& cfg, std::ostream& out, RunManifest& m) {
    const GrayVolume vol = load_gray_files(required_path(cfg, "input"), m);
    const auto method = get<std::string>(cfg, "method");
    LabelVolume labels(vol.dims());
    if (method == "otsu") {
        const int t = otsu_threshold(intensity_histogram(vol));
        labels = otsu_segment(vol);
        out << "otsu threshold bin " << t << "\n";
    } else if (method == "kmeans") {
        const int iters = get<int>(cfg, "kmeans_iters");
        const KMeansResult k = kmeans2(vol, iters);
        labels = kmeans2_segment(vol, iters, seed_of(cfg));
        out << "kmeans centroids " << k.low_centroid << " " << k.high_centroid << " after " << k.iterations << " iterations\n";
    } else {
        fail(ErrorCode::Usage, "--method must be otsu or kmeans");
    }
    save_label_files(labels, required_path(cfg, "out"), m);
    out << "foreground voxels " << labels.foreground_count() << "\n";
}

json train_defaults() {
    json training = to_json(TrainConfig{});
    training.erase("seed");
    return {{"dataset", ""}, {"train_split", "train"}, {"val_split", "val"}, {"out", ""},
            {"model", config_to_json(default_config(Architecture::unet3d))}, {"training", training}, {"seed", 0}};
}

void run_train(json& cfg, std::ostream& out, RunManifest& m) {
    const std::string out_base = required_path(cfg, "out");
    const Splits data = load_splits(required_path(cfg, "dataset"), cfg, m);
    const ModelConfig arch = config_from_json(cfg["model"]);
    TrainConfig tc = train_config_from_json(cfg["training"]);
    tc.seed = seed_of(cfg);
    const TrainResult r = train(arch, data.train, data.val, tc, get<std::string>(cfg, "dataset"));
    print_history(r, out);
    save_checkpoint_files(r.best, out_base, m);
    write_json_file(history_json(r), out_base + ".history.json");
    m.add_output(out_base + ".history.json");
}

json finetune_defaults() {
    return {{"checkpoint", ""}, {"dataset", ""}, {"train_split", "train"}, {"val_split", "val"}, {"out", ""},
            {"training", json::object()}, {"seed", 0}};
}

void run_finetune(json& cfg, std::ostream& out, RunManifest& m) {
    const std::string out_base = required_path(cfg, "out");
    const std::string parent_path = required_path(cfg, "checkpoint");
    const ModelCheckpoint parent = load_checkpoint(parent_path);
    m.add_input(checkpoint_paths(parent_path).manifest);
    m.add_input(checkpoint_paths(parent_path).blob);
    const Splits data = load_splits(required_path(cfg, "dataset"), cfg, m);

    // Unset hyperparameters default to the parent's.
    TrainConfig tc = train_config_from_json(cfg["training"], train_config_from_json(parent.provenance.hyperparameters));
    tc.seed = seed_of(cfg);
    cfg["training"] = to_json(tc);
    cfg["training"].erase("seed");
    const TrainResult r = finetune(parent, data.train, data.val, tc, get<std::string>(cfg, "dataset"));
    print_history(r, out);
    save_checkpoint_files(r.best, out_base, m);
    write_json_file(history_json(r), out_base + ".history.json");
    m.add_output(out_base + ".history.json");
}

json hpo_defaults() {
    return {{"dataset", ""},
            {"fine_dataset", ""},
            {"train_split", "train"},
            {"val_split", "val"},
            {"out", ""},
            {"model", config_to_json(default_config(Architecture::unet3d))},
            {"space", SearchSpace().to_json()},
            {"trials", 30},
            {"trials_step2", 30},
            {"workers", 1},
            {"eta", 2},
            {"min_resource", 1},
            {"executor", "simulated"},
            {"seed", 0}};
}

HpoOptions::Executor parse_executor(const std::string& s) {
    if (s == "simulated") return HpoOptions::Executor::simulated;
    if (s == "threaded") return HpoOptions::Executor::threaded;
    fail(ErrorCode::Usage, "--executor must be simulated or threaded");
}

json hpo_summary(const HpoResult& r) {
    const Trial& w = r.run.trials[static_cast<std::size_t>(r.run.winner)];
    return {{"winner", r.run.winner},
            {"winner_score", r.run.winner_score},
            {"winner_config", to_json(w.config)},
            {"ladder", r.run.ladder},
            {"trials", r.run.trials.size()},
            {"best_epoch", r.winner.best_epoch},
            {"best_val_iou", r.winner.best_val_iou}};
}

void run_hpo_command(json& cfg, std::ostream& out, RunManifest& m) {
    const std::string out_base = required_path(cfg, "out");
    const std::string dataset = required_path(cfg, "dataset");
    const Splits data = load_splits(dataset, cfg, m);
    const ModelConfig arch = config_from_json(cfg["model"]);
    const SearchSpace space = SearchSpace::from_json(cfg["space"]);
    const auto executor = parse_executor(get<std::string>(cfg, "executor"));

    const std::string events_path = out_base + ".events.jsonl";
    std::ofstream events(events_path, std::ios::trunc);
    if (!events) fail(ErrorCode::IoFailure, "cannot write " + events_path);
    auto log = [&](int step, const HpoEvent& e) {
        json j = e.to_json();
        if (step > 0) j["step"] = step;
        events << j.dump() << "\n";
        events.flush();
        out << (step > 0 ? "step " + std::to_string(step) + " " : std::string{}) << e.event << " trial " << e.trial
            << " rung " << e.rung;
        if (e.score) out << " score " << *e.score;
        out << "\n";
    };

    json summary;
    ModelCheckpoint best;
    const std::string fine = get<std::string>(cfg, "fine_dataset");
    if (fine.empty()) {
        HpoOptions o;
        o.budget = get<int>(cfg, "trials");
        o.workers = get<int>(cfg, "workers");
        o.eta = get<int>(cfg, "eta");
        o.min_resource = get<int>(cfg, "min_resource");
        o.seed = seed_of(cfg);
        o.executor = executor;
        o.on_event = [&](const HpoEvent& e) { log(0, e); };
        const HpoResult r = run_hpo(space, arch, data.train, data.val, o, std::nullopt, dataset);
        summary = hpo_summary(r);
        best = r.winner.best;
    } else {
        const Splits fine_data = load_splits(fine, cfg, m);
        if (get<int>(cfg, "eta") != 2 || get<int>(cfg, "min_resource") != 1)
            fail(ErrorCode::Usage, "two-step search runs with eta 2 and min_resource 1");
        TwoStepOptions o;
        o.budget_step1 = get<int>(cfg, "trials");
        o.budget_step2 = get<int>(cfg, "trials_step2");
        o.workers = get<int>(cfg, "workers");
        o.seed = seed_of(cfg);
        o.executor = executor;
        o.on_event = log;
        const TwoStepResult r = run_two_step(space, arch, data.train, fine_data.train, fine_data.val, o);
        summary = {{"step1", hpo_summary(r.step1)},
                   {"step2", hpo_summary(r.step2)},
                   {"step1_val_iou", r.step1_val_iou},
                   {"final_val_iou", r.final_val_iou}};
        best = r.final_checkpoint();
        out << "step1 fine val iou " << r.step1_val_iou << " final " << r.final_val_iou << "\n";
    }
    events.close();
    m.add_output(events_path);
    save_checkpoint_files(best, out_base, m);
    write_json_file(summary, out_base + ".summary.json");
    m.add_output(out_base + ".summary.json");
}

json segment_defaults() {
    return {{"checkpoint", ""}, {"input", ""}, {"out", ""}, {"patch", nullptr}, {"overlap", nullptr}, {"workers", 1}, {"seed", 0}};
}

void run_segment(json& cfg, std::ostream& out, RunManifest& m) {
    const std::string ckpt_path = required_path(cfg, "checkpoint");
    const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
    m.add_input(checkpoint_paths(ckpt_path).manifest);
    m.add_input(checkpoint_paths(ckpt_path).blob);
    const GrayVolume vol = load_gray_files(required_path(cfg, "input"), m);

    // Patch and overlap default to what the checkpoint was trained with.
    const json& hp = ckpt.provenance.hyperparameters;
    for (const char* key : {"patch", "overlap"})
        if (cfg[key].is_null()) {
            if (!hp.contains(key)) fail(ErrorCode::Usage, std::string("checkpoint records no ") + key + "; pass --" + key);
            cfg[key] = hp[key];
        }
    const Dims3 patch = dims_from_json(cfg["patch"], "patch");
    const Dims3 overlap = dims_from_json(cfg["overlap"], "overlap");
    const LabelVolume labels = segment_volume(ckpt, vol, patch, overlap, get<int>(cfg, "workers"));
    save_label_files(labels, required_path(cfg, "out"), m);
    out << "foreground voxels " << labels.foreground_count() << "\n";
}

json eval_defaults() { return {{"pred", ""}, {"truth", ""}, {"out", ""}, {"method", "transform"}, {"seed", 0}}; }

void run_eval(json& cfg, std::ostream& out, RunManifest& m) {
    const LabelVolume pred = load_label_files(required_path(cfg, "pred"), m);
    const LabelVolume truth = load_label_files(required_path(cfg, "truth"), m);
    const auto method = get<std::string>(cfg, "method");
    if (method != "transform" && method != "brute_force") fail(ErrorCode::Usage, "--method must be transform or brute_force");
    const MetricsReport report =
        evaluate(pred, truth, method == "transform" ? DistanceMethod::transform : DistanceMethod::brute_force);
    const json j = report.to_json();
    const std::string path = required_path(cfg, "out");
    write_json_file(j, path);
    m.add_output(path);
    out << j["aggregate"].dump() << "\n";
}

json overlay_defaults() { return {{"pred", ""}, {"truth", ""}, {"out", ""}, {"axis", "xy"}, {"index", 0}, {"seed", 0}}; }

void run_overlay(json& cfg, std::ostream& out, RunManifest& m) {
    const LabelVolume pred = load_label_files(required_path(cfg, "pred"), m);
    const LabelVolume truth = load_label_files(required_path(cfg, "truth"), m);
    const auto axis = parse_axis(get<std::string>(cfg, "axis"));
    if (!axis) fail(ErrorCode::Usage, "--axis must be xy or xz");
    const std::string path = required_path(cfg, "out");
    write_ppm(render_overlay(pred, truth, *axis, get<int>(cfg, "index")), path);
    m.add_output(path);
    out << "wrote " << path << "\n";
}

int exit_code_for(ErrorCode c) {
    switch (c) {
    case ErrorCode::ConfigInvalid:
    case ErrorCode::SpecInvalid:
    case ErrorCode::BadFractions: return 2; // malformed user configuration
    default: return is_io_error(c) ? 2 : 1;
    }
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dendrite segmentation of XCT volumes", "dendseg"};
    app.require_subcommand(1);
    std::deque<Command> commands;

    commands.emplace_back(app, "synth", "Generate a synthetic dendrite dataset with splits", synth_defaults(), run_synth)
        .bind("--out", "/out", Kind::text, "Output directory")
        .bind("--count", "/count", Kind::integer, "Number of volumes")
        .bind("--val-fraction", "/val_fraction", Kind::real, "Fraction of volumes for validation")
        .bind("--test-fraction", "/test_fraction", Kind::real, "Fraction of volumes for testing")
        .bind("--dims", "/synth/dims", Kind::triple, "Volume size W,H,D")
        .bind("--arms", "/synth/primary_arms", Kind::integer, "Primary arms per volume")
        .bind("--secondary-probability", "/synth/secondary_arm_probability", Kind::real, "Chance of each secondary arm")
        .bind("--radius-min", "/synth/radius_min", Kind::real, "Smallest arm radius")
        .bind("--radius-max", "/synth/radius_max", Kind::real, "Largest arm radius")
        .bind("--background-mean", "/synth/background_mean", Kind::real, "Background intensity")
        .bind("--dendrite-mean", "/synth/dendrite_mean", Kind::real, "Dendrite intensity")
        .bind("--blur-sigma", "/synth/blur_sigma", Kind::real, "Gaussian blur sigma in voxels")
        .bind("--noise-sigma", "/synth/noise_sigma", Kind::real, "Additive noise sigma in gray levels");

    commands.emplace_back(app, "baseline", "Segment a volume with Otsu or 2-means", baseline_defaults(), run_baseline)
        .bind("--input", "/input", Kind::text, "Input volume (.raw/.json base)")
        .bind("--out", "/out", Kind::text, "Output label volume base")
        .bind("--method", "/method", Kind::text, "otsu or kmeans")
        .bind("--kmeans-iters", "/kmeans_iters", Kind::integer, "Iteration cap for 2-means");

    auto training_flags = [](Command& c) -> Command& {
        return c.bind("--dataset", "/dataset", Kind::text, "dataset.json")
            .bind("--train-split", "/train_split", Kind::text, "Split used for training")
            .bind("--val-split", "/val_split", Kind::text, "Split used for model selection")
            .bind("--out", "/out", Kind::text, "Output base path");
    };
    auto hyper_flags = [](Command& c) -> Command& {
        return c.bind("--lr", "/training/learning_rate", Kind::real, "Adam learning rate")
            .bind("--epochs", "/training/epochs", Kind::integer, "Epochs")
            .bind("--batch-size", "/training/batch_size", Kind::integer, "Patches per batch")
            .bind("--patch", "/training/patch", Kind::triple, "Patch size W,H,D")
            .bind("--overlap", "/training/overlap", Kind::triple, "Patch overlap W,H,D");
    };

    hyper_flags(training_flags(commands.emplace_back(app, "train", "Train a model from scratch", train_defaults(), run_train)))
        .bind("--arch", "/model", Kind::architecture, "unet2d, unet3d or fcdense3d with default settings")
        .opaque("/model");

    hyper_flags(training_flags(
                    commands.emplace_back(app, "finetune", "Continue training a checkpoint on new data", finetune_defaults(), run_finetune)))
        .bind("--checkpoint", "/checkpoint", Kind::text, "Parent checkpoint base")
        .opaque("/training");

    training_flags(commands.emplace_back(app, "hpo", "ASHA search, optionally two-step with a fine dataset", hpo_defaults(), run_hpo_command))
        .bind("--fine-dataset", "/fine_dataset", Kind::text, "Fine dataset.json; enables the two-step search")
        .bind("--arch", "/model", Kind::architecture, "unet2d, unet3d or fcdense3d with default settings")
        .bind("--trials", "/trials", Kind::integer, "Trial budget (step 1 when two-step)")
        .bind("--trials-step2", "/trials_step2", Kind::integer, "Trial budget of step 2")
        .bind("--workers", "/workers", Kind::integer, "Concurrent trials")
        .bind("--eta", "/eta", Kind::integer, "Reduction factor")
        .bind("--min-resource", "/min_resource", Kind::integer, "Epochs at the lowest rung")
        .bind("--max-epochs", "/space/epochs/1", Kind::integer, "Largest epoch count in the space")
        .bind("--executor", "/executor", Kind::text, "simulated (reproducible) or threaded")
        .opaque("/model")
        .opaque("/space");

    commands.emplace_back(app, "segment", "Segment a volume with a checkpoint", segment_defaults(), run_segment)
        .bind("--checkpoint", "/checkpoint", Kind::text, "Checkpoint base")
        .bind("--input", "/input", Kind::text, "Input volume (.raw/.json base)")
        .bind("--out", "/out", Kind::text, "Output label volume base")
        .bind("--patch", "/patch", Kind::triple, "Patch size W,H,D (default: from the checkpoint)")
        .bind("--overlap", "/overlap", Kind::triple, "Patch overlap W,H,D (default: from the checkpoint)")
        .bind("--workers", "/workers", Kind::integer, "Inference threads");

    commands.emplace_back(app, "eval", "Per-slice accuracy, IoU, BF1 and BDE", eval_defaults(), run_eval)
        .bind("--pred", "/pred", Kind::text, "Predicted label volume base")
        .bind("--truth", "/truth", Kind::text, "Ground truth label volume base")
        .bind("--out", "/out", Kind::text, "Report JSON path")
        .bind("--method", "/method", Kind::text, "transform or brute_force");

    commands.emplace_back(app, "overlay", "Render a prediction/truth comparison slice as PPM", overlay_defaults(), run_overlay)
        .bind("--pred", "/pred", Kind::text, "Predicted label volume base")
        .bind("--truth", "/truth", Kind::text, "Ground truth label volume base")
        .bind("--out", "/out", Kind::text, "Output .ppm")
        .bind("--axis", "/axis", Kind::text, "xy or xz")
        .bind("--index", "/index", Kind::integer, "Slice index along the cut axis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        // Subcommand --help surfaces here too; print the help of the innermost parsed app.
        err << "dendseg: Usage: " << e.what() << "\n";
        return 2;
    }

    for (Command& c : commands) {
        if (!c.parsed()) continue;
        try {
            c.execute(out);
            return 0;
        } catch (const Error& e) {
            err << "dendseg: " << e.what() << "\n";
            return exit_code_for(e.code());
        } catch (const fs::filesystem_error& e) {
            err << "dendseg: IoFailure: " << e.what() << "\n";
            return 2;
        } catch (const json::exception& e) {
            err << "dendseg: Usage: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            err << "dendseg: " << e.what() << "\n";
            return 1;
        }
    }
    err << "dendseg: Usage: no subcommand\n";
    return 2;
}

} // namespace dendseg::cli
