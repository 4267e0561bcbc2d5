#include "dendseg/hpo.hpp"

namespace dendseg {

TwoStepResult run_two_step(const SearchSpace& space, const ModelConfig& architecture, const Dataset& coarse_train,
                           const Dataset& fine_train, const Dataset& fine_val, const TwoStepOptions& options) {
    auto hooked = [&](int step, std::uint64_t seed, int budget) {
        HpoOptions o;
        o.budget = budget;
        o.workers = options.workers;
        o.seed = seed;
        o.executor = options.executor;
        if (options.on_event) o.on_event = [&options, step](const HpoEvent& e) { options.on_event(step, e); };
        return o;
    };
    auto dir = [&](const char* name) -> std::optional<std::filesystem::path> {
        if (!options.state_dir) return std::nullopt;
        return *options.state_dir / name;
    };

    TwoStepResult r;
    r.step1 = run_hpo(space, architecture, coarse_train, fine_val, hooked(1, derive_seed(options.seed, "step1"), options.budget_step1),
                      std::nullopt, "coarse", dir("step1"));
    const TrialConfig& w = r.step1.run.trials[static_cast<std::size_t>(r.step1.run.winner)].config;
    const SearchSpace reduced = space.frozen_at(w.patch_width, w.batch_size);
    r.step2 = run_hpo(reduced, architecture, fine_train, fine_val, hooked(2, derive_seed(options.seed, "step2"), options.budget_step2),
                      r.step1.winner.best, "fine", dir("step2"));
    r.step1_val_iou = r.step1.winner.best_val_iou;
    r.final_val_iou = r.step2.winner.best_val_iou;
    return r;
}

} // namespace dendseg
