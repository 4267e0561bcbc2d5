#include "dendseg/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <set>
#include <thread>

namespace dendseg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

namespace {

json toggles_json(const AugmentationToggles& t) {
    return {{"flips", t.flips}, {"rotation", t.rotation}, {"shear", t.shear}, {"intensity", t.intensity}};
}

AugmentationToggles toggles_from_json(const json& j) {
    return {j.value("flips", false), j.value("rotation", false), j.value("shear", false), j.value("intensity", false)};
}

} // namespace

json to_json(const TrialConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"patch_width", c.patch_width}, {"overlap", c.overlap},
            {"epochs", c.epochs},               {"batch_size", c.batch_size},   {"augmentation", toggles_json(c.augmentation)}};
}

TrialConfig trial_config_from_json(const json& j) {
    TrialConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.patch_width = j.at("patch_width").get<int>();
    c.overlap = j.at("overlap").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.augmentation = toggles_from_json(j.value("augmentation", json::object()));
    return c;
}

SearchSpace::SearchSpace() = default;

void SearchSpace::check_unfrozen(const char* what) const {
    if (frozen_) fail(ErrorCode::FrozenHyperparamChanged, std::string(what) + " is frozen for this search");
}

SearchSpace& SearchSpace::set_learning_rate(double lo, double hi) {
    lr_min_ = lo;
    lr_max_ = hi;
    return *this;
}
SearchSpace& SearchSpace::set_overlaps(std::vector<int> v) {
    overlaps_ = std::move(v);
    return *this;
}
SearchSpace& SearchSpace::set_epochs(int lo, int hi) {
    epochs_min_ = lo;
    epochs_max_ = hi;
    return *this;
}
SearchSpace& SearchSpace::set_augmentations(std::vector<AugmentationToggles> v) {
    augmentations_ = std::move(v);
    return *this;
}
SearchSpace& SearchSpace::set_patch_widths(std::vector<int> v) {
    check_unfrozen("patch size");
    patch_widths_ = std::move(v);
    return *this;
}
SearchSpace& SearchSpace::set_batch_sizes(std::vector<int> v) {
    check_unfrozen("batch size");
    batch_sizes_ = std::move(v);
    return *this;
}
SearchSpace& SearchSpace::set_patch_depth(int d) {
    check_unfrozen("patch size");
    patch_depth_ = d;
    return *this;
}

SearchSpace SearchSpace::frozen_at(int patch_width, int batch_size) const {
    SearchSpace s = *this;
    s.frozen_ = false;
    s.set_patch_widths({patch_width}).set_batch_sizes({batch_size});
    s.frozen_ = true;
    s.validate();
    return s;
}

void SearchSpace::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::ConfigInvalid, "search space: " + what); };
    if (!(lr_min_ > 0.0 && lr_min_ <= lr_max_ && std::isfinite(lr_max_))) bad("learning rate range must satisfy 0 < lo <= hi");
    if (patch_widths_.empty() || overlaps_.empty() || batch_sizes_.empty() || augmentations_.empty())
        bad("choice sets must be non-empty");
    if (epochs_min_ < 1 || epochs_min_ > epochs_max_) bad("epochs range must satisfy 1 <= lo <= hi");
    if (patch_depth_ < 1) bad("patch depth must be >= 1");
    const int smallest = *std::min_element(patch_widths_.begin(), patch_widths_.end());
    if (smallest < 1) bad("patch widths must be >= 1");
    for (int o : overlaps_)
        if (o < 0 || o >= smallest) bad("every overlap must lie in [0, smallest patch width)");
    for (int b : batch_sizes_)
        if (b < 1) bad("batch sizes must be >= 1");
}

json SearchSpace::to_json() const {
    json augs = json::array();
    for (const auto& a : augmentations_) augs.push_back(toggles_json(a));
    return {{"learning_rate", {lr_min_, lr_max_}}, {"patch_width", patch_widths_}, {"overlap", overlaps_},
            {"epochs", {epochs_min_, epochs_max_}},  {"batch_size", batch_sizes_},   {"augmentations", augs},
            {"patch_depth", patch_depth_},           {"frozen", frozen_}};
}

SearchSpace SearchSpace::from_json(const json& j) {
    SearchSpace s;
    try {
        if (j.contains("learning_rate")) s.set_learning_rate(j["learning_rate"].at(0).get<double>(), j["learning_rate"].at(1).get<double>());
        if (j.contains("patch_width")) s.set_patch_widths(j["patch_width"].get<std::vector<int>>());
        if (j.contains("overlap")) s.set_overlaps(j["overlap"].get<std::vector<int>>());
        if (j.contains("epochs")) s.set_epochs(j["epochs"].at(0).get<int>(), j["epochs"].at(1).get<int>());
        if (j.contains("batch_size")) s.set_batch_sizes(j["batch_size"].get<std::vector<int>>());
        if (j.contains("augmentations")) {
            std::vector<AugmentationToggles> v;
            for (const auto& a : j["augmentations"]) v.push_back(toggles_from_json(a));
            s.set_augmentations(std::move(v));
        }
        if (j.contains("patch_depth")) s.set_patch_depth(j["patch_depth"].get<int>());
        s.frozen_ = j.value("frozen", false);
    } catch (const json::exception& e) {
        fail(ErrorCode::ConfigInvalid, std::string("search space: ") + e.what());
    }
    s.validate();
    return s;
}

TrialConfig sample_config(const SearchSpace& space, Rng& rng) {
    TrialConfig c;
    c.learning_rate = std::exp(uniform(rng, std::log(space.lr_min()), std::log(space.lr_max())));
    c.learning_rate = std::clamp(c.learning_rate, space.lr_min(), space.lr_max());
    c.patch_width = space.patch_widths()[uniform_index(rng, space.patch_widths().size())];
    c.overlap = space.overlaps()[uniform_index(rng, space.overlaps().size())];
    c.epochs = space.epochs_min() +
               static_cast<int>(uniform_index(rng, static_cast<std::size_t>(space.epochs_max() - space.epochs_min() + 1)));
    c.batch_size = space.batch_sizes()[uniform_index(rng, space.batch_sizes().size())];
    c.augmentation = space.augmentations()[uniform_index(rng, space.augmentations().size())];
    return c;
}

TrainConfig make_train_config(const TrialConfig& t, int patch_depth, std::uint64_t seed) {
    TrainConfig c;
    c.learning_rate = t.learning_rate;
    c.epochs = t.epochs;
    c.batch_size = t.batch_size;
    c.patch = {t.patch_width, t.patch_width, patch_depth};
    c.overlap = {t.overlap, t.overlap, 0};
    c.augmentation = make_augmentation(t.augmentation, derive_seed(seed, "augment"));
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

std::string_view to_string(TrialStatus s) noexcept {
    switch (s) {
    case TrialStatus::pending: return "pending";
    case TrialStatus::running: return "running";
    case TrialStatus::paused_at_rung: return "paused_at_rung";
    case TrialStatus::completed: return "completed";
    case TrialStatus::failed: return "failed";
    }
    return "?";
}

std::vector<int> rung_ladder(const AshaParams& p) {
    if (p.eta < 2) fail(ErrorCode::ConfigInvalid, "eta must be >= 2");
    if (p.min_resource < 1 || p.max_resource < p.min_resource)
        fail(ErrorCode::ConfigInvalid, "resources must satisfy 1 <= min <= max");
    if (p.budget < 1) fail(ErrorCode::ConfigInvalid, "budget must be >= 1");
    int max_rungs = 1;
    for (long long b = p.eta; b <= p.budget; b *= p.eta) ++max_rungs;
    std::vector<int> ladder{p.max_resource};
    for (int r = p.max_resource / p.eta; static_cast<int>(ladder.size()) < max_rungs && r >= p.min_resource; r /= p.eta)
        if (r < ladder.front()) ladder.insert(ladder.begin(), r);
    return ladder;
}

json HpoEvent::to_json() const {
    json j{{"event", event}, {"trial", trial}, {"rung", rung}};
    j["score"] = score ? json(*score) : json(nullptr);
    if (config) j["config"] = dendseg::to_json(*config);
    return j;
}

HpoEvent HpoEvent::from_json(const json& j) {
    HpoEvent e;
    e.event = j.at("event").get<std::string>();
    e.trial = j.value("trial", -1);
    e.rung = j.value("rung", 0);
    if (j.contains("score") && j["score"].is_number()) e.score = j["score"].get<double>();
    if (j.contains("config")) e.config = trial_config_from_json(j["config"]);
    return e;
}

AshaScheduler::AshaScheduler(AshaParams params, SearchSpace space, std::uint64_t seed)
    : params_(params), space_(std::move(space)), rng_(derive_seed(seed, "asha")), ladder_(rung_ladder(params)),
      rung_lists_(ladder_.size()), promoted_(ladder_.size()) {
    space_.validate();
}

Trial& AshaScheduler::trial_ref(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= trials_.size())
        fail(ErrorCode::InconsistentState, "unknown trial " + std::to_string(id));
    return trials_[static_cast<std::size_t>(id)];
}

const std::vector<std::pair<int, double>>& AshaScheduler::rung_scores(int rung) const {
    return rung_lists_.at(static_cast<std::size_t>(rung));
}

bool AshaScheduler::promoted(int trial, int from_rung) const {
    const auto& p = promoted_.at(static_cast<std::size_t>(from_rung));
    return static_cast<std::size_t>(trial) < p.size() && p[static_cast<std::size_t>(trial)];
}

AshaAction AshaScheduler::next() {
    AshaAction a;
    if (stopped_) return a;

    const int top = static_cast<int>(ladder_.size()) - 1;
    for (int k = top - 1; k >= 0; --k) {
        auto ranked = rung_lists_[static_cast<std::size_t>(k)];
        const std::size_t quota = ranked.size() / static_cast<std::size_t>(params_.eta);
        if (quota == 0) continue;
        std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
            return x.second != y.second ? x.second > y.second : x.first < y.first;
        });
        for (std::size_t i = 0; i < quota; ++i) {
            const int id = ranked[i].first;
            if (promoted(id, k)) continue;
            Trial& t = trial_ref(id);
            if (t.status != TrialStatus::paused_at_rung || t.rung != k)
                fail(ErrorCode::InconsistentState, "trial " + std::to_string(id) + " ranked at rung " + std::to_string(k) +
                                                       " but is " + std::string(to_string(t.status)));
            auto& flags = promoted_[static_cast<std::size_t>(k)];
            if (flags.size() < trials_.size()) flags.resize(trials_.size(), 0);
            flags[static_cast<std::size_t>(id)] = 1;
            t.status = TrialStatus::running;
            t.target = k + 1;
            events_.push_back({"promote", id, k + 1, std::nullopt, std::nullopt});
            return {AshaAction::Kind::promote, id, k + 1, ladder_[static_cast<std::size_t>(k + 1)], t.config};
        }
    }

    if (static_cast<int>(trials_.size()) < params_.budget) {
        Trial t;
        t.id = static_cast<int>(trials_.size());
        t.config = sample_config(space_, rng_);
        t.status = TrialStatus::running;
        t.target = 0;
        trials_.push_back(t);
        events_.push_back({"start", t.id, 0, std::nullopt, t.config});
        return {AshaAction::Kind::start_new, t.id, 0, ladder_.front(), t.config};
    }

    for (const auto& t : trials_)
        if (t.status == TrialStatus::running) return {AshaAction::Kind::wait, -1, 0, 0, {}};

    stopped_ = true;
    events_.push_back({"stop", -1, 0, std::nullopt, std::nullopt});
    return a;
}

void AshaScheduler::report(int trial, int resource, double score) {
    Trial& t = trial_ref(trial);
    if (t.status != TrialStatus::running)
        fail(ErrorCode::InconsistentState, "trial " + std::to_string(trial) + " reported while " + std::string(to_string(t.status)));
    const int expected = ladder_[static_cast<std::size_t>(t.target)];
    if (resource != expected)
        fail(ErrorCode::WrongRungBoundary, "trial " + std::to_string(trial) + " reported at resource " + std::to_string(resource) +
                                               ", next rung boundary is " + std::to_string(expected));
    if (!std::isfinite(score)) {
        report_failure(trial);
        return;
    }
    t.rung = t.target;
    t.resource = resource;
    t.rung_scores.push_back(score);
    t.best_score = std::max(t.best_score, score);
    t.status = t.rung == static_cast<int>(ladder_.size()) - 1 ? TrialStatus::completed : TrialStatus::paused_at_rung;
    rung_lists_[static_cast<std::size_t>(t.rung)].emplace_back(trial, score);
    events_.push_back({"report", trial, t.rung, score, std::nullopt});
}

void AshaScheduler::report_failure(int trial) {
    Trial& t = trial_ref(trial);
    if (t.status != TrialStatus::running)
        fail(ErrorCode::InconsistentState, "trial " + std::to_string(trial) + " failed while " + std::string(to_string(t.status)));
    t.status = TrialStatus::failed;
    events_.push_back({"fail", trial, t.target, std::nullopt, std::nullopt});
}

std::optional<int> AshaScheduler::winner() const {
    for (auto k = rung_lists_.size(); k-- > 0;) {
        const auto& list = rung_lists_[k];
        if (list.empty()) continue;
        auto best = list.front();
        for (const auto& e : list)
            if (e.second > best.second || (e.second == best.second && e.first < best.first)) best = e;
        return best.first;
    }
    return std::nullopt;
}

PromotionAudit audit_promotions(const std::vector<HpoEvent>& events, int eta) {
    PromotionAudit audit;
    std::map<int, std::vector<std::pair<int, double>>> lists;
    std::map<int, std::set<int>> promoted;
    auto violation = [&](std::string what) {
        if (audit.ok) audit.violation = std::move(what);
        audit.ok = false;
    };
    for (const auto& e : events) {
        if (e.event == "report") {
            if (!e.score) {
                violation("report without a score for trial " + std::to_string(e.trial));
                continue;
            }
            lists[e.rung].emplace_back(e.trial, *e.score);
        } else if (e.event == "promote") {
            ++audit.promotions;
            const int from = e.rung - 1;
            const auto& list = lists[from];
            const auto it = std::find_if(list.begin(), list.end(), [&](const auto& p) { return p.first == e.trial; });
            if (it == list.end()) {
                violation("trial " + std::to_string(e.trial) + " promoted from rung " + std::to_string(from) + " without a score there");
                continue;
            }
            if (!promoted[from].insert(e.trial).second) {
                violation("trial " + std::to_string(e.trial) + " promoted twice from rung " + std::to_string(from));
                continue;
            }
            std::size_t rank = 0;
            for (const auto& p : list)
                if (p.second > it->second || (p.second == it->second && p.first < e.trial)) ++rank;
            const std::size_t quota = list.size() / static_cast<std::size_t>(eta);
            if (rank >= quota)
                violation("trial " + std::to_string(e.trial) + " ranked " + std::to_string(rank + 1) + " of " +
                          std::to_string(list.size()) + " at rung " + std::to_string(from) + ", quota " + std::to_string(quota));
        }
    }
    return audit;
}

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

namespace {

AshaParams params_for(const SearchSpace& space, const HpoOptions& o) {
    return {o.eta, o.min_resource, space.epochs_max(), o.budget};
}

HpoRun finish(const AshaScheduler& s) {
    HpoRun run;
    run.events = s.events();
    run.trials = s.trials();
    run.ladder = s.ladder();
    const auto w = s.winner();
    if (!w) fail(ErrorCode::AllTrialsFailed, "none of " + std::to_string(s.trials().size()) + " trials reported a score");
    run.winner = *w;
    run.winner_score = s.trials()[static_cast<std::size_t>(*w)].rung_scores.back();
    return run;
}

class EventForwarder {
public:
    EventForwarder(const AshaScheduler& s, const HpoOptions& o) : s_(s), o_(o) {}
    void flush() {
        while (sent_ < s_.events().size()) {
            if (o_.on_event) o_.on_event(s_.events()[sent_]);
            ++sent_;
        }
    }

private:
    const AshaScheduler& s_;
    const HpoOptions& o_;
    std::size_t sent_ = 0;
};

} // namespace

HpoRun run_asha(const SearchSpace& space, const HpoOptions& options, TrialRunner& runner) {
    AshaScheduler sched(params_for(space, options), space, options.seed);
    EventForwarder forward(sched, options);
    const int workers = std::max(1, options.workers);

    std::mutex m;
    std::condition_variable cv;
    int active = 0;
    std::size_t completions = 0;
    std::exception_ptr fatal;
    std::vector<std::thread> threads;

    std::unique_lock lock(m);
    while (!fatal) {
        cv.wait(lock, [&] { return active < workers || fatal; });
        if (fatal) break;
        const AshaAction a = sched.next();
        forward.flush();
        if (a.kind == AshaAction::Kind::stop) break;
        if (a.kind == AshaAction::Kind::wait) {
            const std::size_t seen = completions;
            cv.wait(lock, [&] { return completions != seen || fatal; });
            continue;
        }
        const Trial snapshot = sched.trials()[static_cast<std::size_t>(a.trial)];
        ++active;
        threads.emplace_back([&, snapshot, a] {
            double score = 0.0;
            bool ok = true;
            try {
                score = runner.run(snapshot, a.resource);
            } catch (...) {
                ok = false;
            }
            std::lock_guard guard(m);
            try {
                if (ok) sched.report(a.trial, a.resource, score);
                else sched.report_failure(a.trial);
                forward.flush();
            } catch (...) {
                if (!fatal) fatal = std::current_exception();
            }
            --active;
            ++completions;
            cv.notify_all();
        });
    }
    cv.wait(lock, [&] { return active == 0; });
    lock.unlock();
    for (auto& t : threads) t.join();
    if (fatal) std::rethrow_exception(fatal);
    return finish(sched);
}

HpoRun simulate_asha(const SearchSpace& space, const HpoOptions& options, TrialRunner& runner) {
    AshaScheduler sched(params_for(space, options), space, options.seed);
    EventForwarder forward(sched, options);
    const int workers = std::max(1, options.workers);

    struct Job {
        long long finish;
        int worker;
        int trial;
        int resource;
        bool ok;
        double score;
    };
    std::vector<Job> jobs;
    std::vector<int> idle;
    for (int w = workers - 1; w >= 0; --w) idle.push_back(w); // back() is the lowest id
    long long now = 0;

    while (true) {
        bool stop = false;
        while (!idle.empty()) {
            const AshaAction a = sched.next();
            forward.flush();
            if (a.kind == AshaAction::Kind::stop) {
                stop = true;
                break;
            }
            if (a.kind == AshaAction::Kind::wait) break;
            const Trial& t = sched.trials()[static_cast<std::size_t>(a.trial)];
            Job j{now + std::max(1, a.resource - t.resource), idle.back(), a.trial, a.resource, true, 0.0};
            idle.pop_back();
            try {
                j.score = runner.run(t, a.resource);
            } catch (...) {
                j.ok = false;
            }
            jobs.push_back(j);
        }
        if (stop) break;
        if (jobs.empty()) fail(ErrorCode::InconsistentState, "scheduler waits with no running trial");
        const auto it = std::min_element(jobs.begin(), jobs.end(), [](const Job& x, const Job& y) {
            return x.finish != y.finish ? x.finish < y.finish : x.worker < y.worker;
        });
        const Job j = *it;
        jobs.erase(it);
        now = j.finish;
        if (j.ok) sched.report(j.trial, j.resource, j.score);
        else sched.report_failure(j.trial);
        forward.flush();
        idle.push_back(j.worker);
        std::sort(idle.begin(), idle.end(), std::greater<>());
    }
    return finish(sched);
}

// ---------------------------------------------------------------------------
// Training runner
// ---------------------------------------------------------------------------

namespace {

TrainResult result_of(const TrainerState& s) {
    if (!s.best) fail(ErrorCode::InconsistentState, "trial has no scored checkpoint");
    return {*s.best, s.history, s.best_epoch, s.best_val_iou, s.initial_val_iou};
}

} // namespace

TrainingTrialRunner::TrainingTrialRunner(ModelConfig architecture, const Dataset& train, const Dataset& val, int patch_depth,
                                         std::uint64_t seed, std::optional<ModelCheckpoint> parent, std::string dataset_tag,
                                         std::optional<std::filesystem::path> state_dir)
    : architecture_(parent ? parent->config : std::move(architecture)), train_(train), val_(val), patch_depth_(patch_depth),
      seed_(seed), parent_(std::move(parent)), dataset_tag_(std::move(dataset_tag)), state_dir_(std::move(state_dir)) {
    if (state_dir_) std::filesystem::create_directories(*state_dir_);
}

Provenance TrainingTrialRunner::provenance() const {
    if (parent_) return {dataset_tag_, parent_->provenance.epochs_trained, {}, parent_->id()};
    return {dataset_tag_, 0, {}, std::nullopt};
}

double TrainingTrialRunner::run(const Trial& trial, int resource) {
    std::shared_ptr<TrainerState> previous;
    {
        std::lock_guard guard(mutex_);
        if (auto it = states_.find(trial.id); it != states_.end()) previous = it->second;
    }
    const std::filesystem::path file = state_dir_ ? *state_dir_ / ("trial_" + std::to_string(trial.id)) : std::filesystem::path();

    std::optional<Trainer> trainer;
    if (previous && state_dir_) trainer.emplace(load_trainer_state(file), provenance());
    else if (previous) trainer.emplace(*previous, provenance());
    else {
        const TrainConfig config = make_train_config(trial.config, patch_depth_, derive_seed(seed_, static_cast<std::uint64_t>(trial.id)));
        if (parent_) {
            check_frozen_hyperparameters(parent_->provenance, config);
            trainer.emplace(model_from_checkpoint<float>(*parent_), config, provenance());
        } else {
            trainer.emplace(Model<float>::build(architecture_, derive_seed(config.seed, "init")), config, provenance());
        }
    }

    trainer->train_to(std::min(resource, trial.config.epochs), train_, val_);
    auto state = std::make_shared<TrainerState>(trainer->state());
    if (state_dir_) save_trainer_state(*state, file);
    const double score = state->best_val_iou;
    std::lock_guard guard(mutex_);
    states_[trial.id] = std::move(state);
    return score;
}

TrainResult TrainingTrialRunner::result(int trial) const {
    std::lock_guard guard(mutex_);
    const auto it = states_.find(trial);
    if (it == states_.end()) fail(ErrorCode::InconsistentState, "trial " + std::to_string(trial) + " never ran");
    return result_of(*it->second);
}

HpoResult run_hpo(const SearchSpace& space, const ModelConfig& architecture, const Dataset& train, const Dataset& val,
                  const HpoOptions& options, const std::optional<ModelCheckpoint>& parent, const std::string& dataset_tag,
                  const std::optional<std::filesystem::path>& state_dir) {
    TrainingTrialRunner runner(architecture, train, val, space.patch_depth(), derive_seed(options.seed, "trials"), parent,
                               dataset_tag, state_dir);
    HpoResult r;
    r.run = options.executor == HpoOptions::Executor::simulated ? simulate_asha(space, options, runner)
                                                               : run_asha(space, options, runner);
    r.winner = runner.result(r.run.winner);
    return r;
}

} // namespace dendseg
