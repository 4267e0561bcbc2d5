#include "doctest.h"

#include "../support/oracles.hpp"

#include "dendseg/error.hpp"
#include "dendseg/metrics.hpp"
#include "dendseg/segment.hpp"
#include "dendseg/synthgen.hpp"
#include "dendseg/training.hpp"

using namespace dendseg;

namespace {

Dataset synth_set(std::uint64_t seed, int count, Dims3 dims, double noise = 10.0) {
    Dataset out;
    for (int i = 0; i < count; ++i) {
        SynthSpec s;
        s.dims = dims;
        s.noise_sigma = noise;
        s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        auto [gray, label] = generate(s);
        out.push_back({"v" + std::to_string(i), gray.normalized(), std::move(label)});
    }
    return out;
}

TrainConfig small_config(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 2;
    c.patch = {16, 16, 4};
    c.learning_rate = 3e-3;
    c.seed = 5;
    return c;
}

UNetConfig tiny_unet() {
    UNetConfig u;
    u.levels = 2;
    u.base_channels = 4;
    return u;
}

bool same_weights(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    if (a.arrays.size() != b.arrays.size()) return false;
    for (std::size_t i = 0; i < a.arrays.size(); ++i)
        if (a.arrays[i].name != b.arrays[i].name || a.arrays[i].values != b.arrays[i].values) return false;
    return true;
}

bool same_history(const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].epoch != b[i].epoch || a[i].train_loss != b[i].train_loss || a[i].val_loss != b[i].val_loss ||
            a[i].val_iou != b[i].val_iou)
            return false;
    return true;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Usage;
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("zero epochs returns the initial weights") {
    const Dataset d = synth_set(1, 2, {16, 16, 4});
    const TrainConfig c = small_config(0);
    const TrainResult r = train(tiny_unet(), d, d, c);
    CHECK(same_weights(r.best, make_checkpoint(Model<float>::build(tiny_unet(), derive_seed(c.seed, "init")), {})));
    CHECK(r.history.empty());
    CHECK(r.best_epoch == 0);
    CHECK(r.best.provenance.epochs_trained == 0);
}

TEST_CASE("a fixed seed reproduces history and weights") {
    const Dataset tr = synth_set(2, 3, {32, 32, 4}), va = synth_set(3, 1, {32, 32, 4});
    TrainConfig c = small_config(2);
    c.augmentation = make_augmentation({true, true, true, true}, 9);
    const TrainResult a = train(tiny_unet(), tr, va, c), b = train(tiny_unet(), tr, va, c);
    CHECK(same_history(a.history, b.history));
    CHECK(same_weights(a.best, b.best));
    CHECK(a.history.size() == 2);
    c.seed = 6;
    CHECK_FALSE(same_history(a.history, train(tiny_unet(), tr, va, c).history));
}

TEST_CASE("a single patch can be memorized") {
    const Dataset d = synth_set(4, 1, {16, 16, 4}, 0.0);
    TrainConfig c = small_config(200);
    c.batch_size = 1;
    c.learning_rate = 1e-2;
    const TrainResult r = train(default_config(Architecture::unet3d), d, d, c);
    const LabelVolume pred = segment_volume(model_from_checkpoint<float>(r.best), d[0].image, c.patch, {0, 0, 0});
    CHECK(mean_slice_iou(pred, d[0].label) >= 0.99);
    CHECK(r.best_val_iou >= 0.99);
}

TEST_CASE("resuming at an epoch boundary equals an uninterrupted run") {
    oracle::TempDir dir("train");
    const Dataset tr = synth_set(5, 3, {32, 32, 4}), va = synth_set(6, 1, {32, 32, 4});
    TrainConfig c = small_config(4);
    c.augmentation = make_augmentation({true, true, false, true}, 3);

    Trainer whole(Model<float>::build(tiny_unet(), c.seed), c, Provenance{});
    whole.train_to(4, tr, va);

    Trainer first(Model<float>::build(tiny_unet(), c.seed), c, Provenance{});
    first.train_to(2, tr, va);
    save_trainer_state(first.state(), dir / "state");
    Trainer second(load_trainer_state(dir / "state"), Provenance{});
    CHECK(second.epochs_done() == 2);
    second.train_to(4, tr, va);

    CHECK(same_history(whole.history(), second.history()));
    CHECK(same_weights(make_checkpoint(whole.model(), {}), make_checkpoint(second.model(), {})));
    CHECK(same_weights(whole.result().best, second.result().best));
}

TEST_CASE("finetune with zero epochs copies the parent and chains provenance") {
    const Dataset d = synth_set(7, 2, {16, 16, 4});
    const TrainResult parent = train(tiny_unet(), d, d, small_config(1), "coarse");
    TrainConfig c = small_config(0);
    c.learning_rate = 1e-4;
    const TrainResult child = finetune(parent.best, d, d, c, "fine");
    CHECK(same_weights(child.best, parent.best));
    REQUIRE(child.best.provenance.parent_id.has_value());
    CHECK(*child.best.provenance.parent_id == parent.best.id());
    CHECK(child.best.provenance.dataset == "fine");
    CHECK(child.best.provenance.epochs_trained == parent.best.provenance.epochs_trained);
}

TEST_CASE("finetune refuses to change patch or batch size") {
    const Dataset d = synth_set(8, 1, {16, 16, 4});
    const TrainResult parent = train(tiny_unet(), d, d, small_config(0));
    TrainConfig patch = small_config(1);
    patch.patch = {8, 8, 4};
    CHECK(code_of([&] { (void)finetune(parent.best, d, d, patch); }) == ErrorCode::FrozenHyperparamChanged);
    TrainConfig batch = small_config(1);
    batch.batch_size = 4;
    CHECK(code_of([&] { (void)finetune(parent.best, d, d, batch); }) == ErrorCode::FrozenHyperparamChanged);
    CHECK(code_of([&] { (void)finetune(parent.best, d, d, small_config(0), "", default_config(Architecture::fcdense3d)); }) ==
          ErrorCode::ArchitectureMismatch);
}

TEST_CASE("patch size must suit the model") {
    const Dataset d = synth_set(9, 1, {16, 16, 4});
    TrainConfig c = small_config(1);
    c.patch = {12, 12, 4};
    CHECK(code_of([&] { (void)train(default_config(Architecture::unet3d), d, d, c); }) == ErrorCode::IndivisibleInput);
}

TEST_CASE("train config JSON round trip") {
    TrainConfig c = small_config(7);
    c.overlap = {2, 3, 1};
    c.augmentation = make_augmentation({true, false, true, false}, 4);
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    TrainConfig bad = c;
    bad.learning_rate = -1;
    CHECK(code_of([&] { validate(bad); }) == ErrorCode::ConfigInvalid);
}

}
