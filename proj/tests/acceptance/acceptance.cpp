// One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

#include "gradients.hpp"
#include "oracles.hpp"

#include "dendseg/baselines.hpp"
#include "dendseg/checkpoint.hpp"
#include "dendseg/hpo.hpp"
#include "dendseg/metrics.hpp"
#include "dendseg/patching.hpp"
#include "dendseg/segment.hpp"
#include "dendseg/synthgen.hpp"
#include "dendseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <sstream>

using namespace dendseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    if (!pass) ++failures;
}

// Any exception inside a criterion is a FAIL for that criterion only.
void criterion(const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(name, false, std::string("threw ") + e.what());
    }
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

int draw(Rng& rng, int lo, int hi) { return lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1))); }

Dataset synth_set(std::uint64_t seed, int count, Dims3 dims, double noise, double blur = 1.0) {
    Dataset out;
    for (int i = 0; i < count; ++i) {
        SynthSpec s;
        s.dims = dims;
        s.noise_sigma = noise;
        s.blur_sigma = blur;
        s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        auto [gray, label] = generate(s);
        out.push_back({"v" + std::to_string(i), gray.normalized(), std::move(label)});
    }
    return out;
}

// ---------------------------------------------------------------------------

void gradients() {
    const auto t0 = Clock::now();
    Rng rng(101);
    double worst = 0.0;
    std::string worst_op;
    std::size_t configs = 0;
    for (oracle::GradOp op : oracle::all_grad_ops()) {
        for (int rep = 0; rep < 50; ++rep, ++configs) {
            const oracle::GradCheck c = oracle::random_grad_check(op, rng);
            if (c.max_rel_error >= worst) {
                worst = c.max_rel_error;
                worst_op = std::string(oracle::name(op));
            }
        }
    }
    const double t = seconds_since(t0);
    report("gradient correctness", worst <= 1e-5 && t <= 120.0,
           std::to_string(configs) + " configs, max rel error " + fmt(worst, 3) + " (" + worst_op + "), " + fmt(t, 3) + " s");
}

void consistency_2d_3d() {
    Rng rng(102);
    int identical = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int n = draw(rng, 1, 2), ci = draw(rng, 1, 4), co = draw(rng, 1, 4);
        const int h = draw(rng, 3, 12), w = draw(rng, 3, 12), kh = draw(rng, 1, 3), kw = draw(rng, 1, 3);
        const int sh = draw(rng, 1, 2), sw = draw(rng, 1, 2), ph = draw(rng, 0, kh - 1), pw = draw(rng, 0, kw - 1);
        std::vector<float> xv(static_cast<std::size_t>(n * ci * h * w)), wv(static_cast<std::size_t>(co * ci * kh * kw)),
            bv(static_cast<std::size_t>(co));
        for (auto* v : {&xv, &wv, &bv})
            for (float& x : *v) x = static_cast<float>(uniform(rng, -1, 1));
        const Tensor<float> a = conv3d(Tensor<float>({n, ci, 1, h, w}, xv), Tensor<float>({co, ci, 1, kh, kw}, wv),
                                       Tensor<float>({co}, bv), {1, sh, sw}, {0, ph, pw});
        const Tensor<float> b = conv2d(Tensor<float>({n, ci, h, w}, xv), Tensor<float>({co, ci, kh, kw}, wv),
                                       Tensor<float>({co}, bv), {sh, sw}, {ph, pw});
        identical += a.numel() == b.numel() &&
                     std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)) == 0;
    }
    report("2D/3D consistency", identical == 100, std::to_string(identical) + "/100 bitwise identical");
}

void metric_oracles() {
    const auto t0 = Clock::now();
    Rng rng(103);
    int pairs = 0, mismatches = 0, empty_boundary = 0;
    auto compare = [&](const Slice& p, const Slice& t) {
        ++pairs;
        bool ok = accuracy(p, t) == oracle::accuracy(p, t) && iou(p, t) == oracle::iou(p, t);
        for (DistanceMethod m : {DistanceMethod::transform, DistanceMethod::brute_force})
            ok = ok && bf1(p, t, kBoundaryTolerance, m) == oracle::bf1(p, t, kBoundaryTolerance) &&
                 bde(p, t, m) == oracle::bde(p, t);
        empty_boundary += oracle::boundary(p).empty() || oracle::boundary(t).empty();
        mismatches += !ok;
    };
    for (int rep = 0; rep < 1000; ++rep) {
        const int w = draw(rng, 1, 64), h = draw(rng, 1, 64);
        const Slice t = oracle::random_slice(rng, w, h);
        compare(uniform_index(rng, 2) ? oracle::perturbed(t, rng) : oracle::random_slice(rng, w, h), t);
    }
    // Explicit empty and full cases on both sides.
    for (int w : {1, 7, 64}) {
        const Slice empty{w, w, std::vector<std::uint8_t>(static_cast<std::size_t>(w * w), 0)};
        const Slice full{w, w, std::vector<std::uint8_t>(static_cast<std::size_t>(w * w), 1)};
        const Slice other = oracle::random_slice(rng, w, w);
        for (const Slice* a : {&empty, &full, &other})
            for (const Slice* b : {&empty, &full, &other}) compare(*a, *b);
    }
    const double t = seconds_since(t0);
    report("metric oracle equivalence", mismatches == 0 && t <= 60.0,
           std::to_string(pairs) + " pairs (" + std::to_string(empty_boundary) + " with an empty boundary), " +
               std::to_string(mismatches) + " mismatches, " + fmt(t, 3) + " s");
}

void patching() {
    Rng rng(104);
    int bad_cover = 0, bad_stitch = 0;
    for (int rep = 0; rep < 500; ++rep) {
        const Dims3 vol{draw(rng, 1, 24), draw(rng, 1, 24), draw(rng, 1, 10)};
        const Dims3 patch{draw(rng, 1, vol.width), draw(rng, 1, vol.height), draw(rng, 1, vol.depth)};
        const Dims3 overlap{draw(rng, 0, patch.width - 1), draw(rng, 0, patch.height - 1), draw(rng, 0, patch.depth - 1)};
        const PatchGrid g = plan_patches(vol, patch, overlap);
        const auto cover = oracle::coverage(g);
        bad_cover += !std::all_of(cover.begin(), cover.end(), [](int c) { return c >= 1; });

        std::vector<std::uint8_t> lv(vol.voxel_count());
        for (auto& x : lv) x = uniform(rng, 0, 1) < 0.4 ? 1 : 0;
        const LabelVolume labels(vol, std::move(lv));
        std::vector<FloatVolume> logits;
        for (const auto& p : extract_patches(labels.array(), g)) {
            FloatVolume f(p.dims());
            for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = p.data()[i] ? 5.f : -5.f;
            logits.push_back(std::move(f));
        }
        bad_stitch += !(stitch(logits, g, vol) == labels);
    }

    // Enumerate the expected plan directly: stride = patch - overlap, last origin clamped.
    auto enumerate = [](int size, int patch, int overlap) {
        std::vector<int> v;
        for (int o = 0;; o += patch - overlap) {
            if (o + patch >= size) {
                v.push_back(size - patch);
                break;
            }
            v.push_back(o);
        }
        return v;
    };
    const PatchGrid big = plan_patches({852, 852, 250}, {456, 456, 4}, {60, 60, 0});
    const bool plan_ok = big.xs == std::vector<int>{0, 396} && big.ys == big.xs && big.zs.size() == 63 &&
                         big.zs == enumerate(250, 4, 0) && big.xs == enumerate(852, 456, 60);
    report("patch coverage and stitch identity", bad_cover == 0 && bad_stitch == 0 && plan_ok,
           "500 triples, " + std::to_string(bad_cover) + " coverage gaps, " + std::to_string(bad_stitch) +
               " stitch mismatches; 852x852x250 plan x/y {" + std::to_string(big.xs.front()) + "," +
               std::to_string(big.xs.back()) + "}, " + std::to_string(big.zs.size()) + " z-origins ending at " +
               std::to_string(big.zs.back()));
}

// Instant trials whose score peaks at a known learning rate.
struct LrObjective : TrialRunner {
    double best_lr = 2e-3;
    double run(const Trial& t, int resource) override {
        const double d = std::log10(t.config.learning_rate) - std::log10(best_lr);
        return -d * d + 1e-3 * resource;
    }
};

void asha() {
    const auto t0 = Clock::now();
    int audited = 0, audit_failures = 0, promotions = 0, hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        LrObjective obj;
        HpoOptions o;
        o.budget = 30;
        o.seed = seed;
        o.executor = HpoOptions::Executor::simulated;
        o.workers = 1 + static_cast<int>(seed % 4);
        const HpoRun run = simulate_asha(SearchSpace(), o, obj);
        const PromotionAudit a = audit_promotions(run.events, o.eta);
        ++audited;
        audit_failures += !a.ok;
        promotions += a.promotions;

        std::vector<double> lrs;
        for (const Trial& t : run.trials) lrs.push_back(std::abs(std::log10(t.config.learning_rate) - std::log10(obj.best_lr)));
        const double mine = std::abs(std::log10(run.trials[static_cast<std::size_t>(run.winner)].config.learning_rate) -
                                     std::log10(obj.best_lr));
        const auto closer = std::count_if(lrs.begin(), lrs.end(), [&](double d) { return d < mine; });
        hits += closer < static_cast<long>(lrs.size() / 10);

        // Threaded executor, audited the same way.
        HpoOptions th = o;
        th.executor = HpoOptions::Executor::threaded;
        th.workers = 4;
        const PromotionAudit b = audit_promotions(run_asha(SearchSpace(), th, obj).events, th.eta);
        ++audited;
        audit_failures += !b.ok;
        promotions += b.promotions;
    }
    const double t = seconds_since(t0);
    report("ASHA soundness", audit_failures == 0 && promotions > 0 && hits >= 9 && t <= 60.0,
           std::to_string(audited) + " logs audited (" + std::to_string(promotions) + " promotions, " +
               std::to_string(audit_failures) + " violations); top-decile lr in " + std::to_string(hits) + "/10 seeds, " +
               fmt(t, 3) + " s");
}

void end_to_end() {
    const auto t0 = Clock::now();
    std::vector<std::pair<GrayVolume, LabelVolume>> vols;
    for (int i = 0; i < 28; ++i) {
        SynthSpec s;
        s.dims = {64, 64, 8};
        s.blur_sigma = 1.0;
        s.noise_sigma = 15.0;
        s.seed = derive_seed(2024, static_cast<std::uint64_t>(i));
        vols.push_back(generate(s));
    }
    Dataset train_set, val_set;
    for (int i = 0; i < 24; ++i) (i < 20 ? train_set : val_set).push_back({"v" + std::to_string(i), vols[static_cast<std::size_t>(i)].first.normalized(), vols[static_cast<std::size_t>(i)].second});

    TrainConfig c;
    c.epochs = 15;
    c.learning_rate = 3e-3;
    c.batch_size = 2;
    c.patch = {32, 32, 4};
    c.seed = 1;
    const TrainResult r = train(default_config(Architecture::unet3d), train_set, val_set, c, "synth");

    double unet_iou = 0, unet_bde = 0, otsu_iou = 0;
    for (int i = 24; i < 28; ++i) {
        const auto& [gray, label] = vols[static_cast<std::size_t>(i)];
        const MetricsReport m = evaluate(segment_volume(r.best, gray, c.patch, {0, 0, 0}), label);
        unet_iou += m.aggregate.iou / 4;
        unet_bde += m.aggregate.bde / 4;
        otsu_iou += evaluate(otsu_segment(gray), label).aggregate.iou / 4;
    }
    const double t = seconds_since(t0);
    report("end-to-end training", unet_iou >= 0.90 && unet_bde <= 1.5 && unet_iou - otsu_iou >= 0.03 && t <= 1200.0,
           "test IoU " + fmt(unet_iou) + ", BDE " + fmt(unet_bde) + " px, Otsu IoU " + fmt(otsu_iou) + " (margin " +
               fmt(unet_iou - otsu_iou, 3) + "), best epoch " + std::to_string(r.best_epoch) + "/15, " + fmt(t, 3) + " s");
}

void two_step() {
    const auto t0 = Clock::now();
    int hits = 0, strict = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset coarse = synth_set(derive_seed(seed, "coarse"), 8, {32, 32, 8}, 5.0);
        const Dataset fine_train = synth_set(derive_seed(seed, "fine_train"), 3, {32, 32, 8}, 35.0);
        const Dataset fine_val = synth_set(derive_seed(seed, "fine_val"), 2, {32, 32, 8}, 35.0);
        SearchSpace space;
        space.set_patch_widths({32}).set_batch_sizes({2}).set_overlaps({0}).set_epochs(2, 6).set_learning_rate(1e-3, 1e-2);
        TwoStepOptions o;
        o.budget_step1 = 6;
        o.budget_step2 = 6;
        o.seed = seed;
        o.executor = HpoOptions::Executor::simulated;
        const TwoStepResult r = run_two_step(space, default_config(Architecture::unet3d), coarse, fine_train, fine_val, o);
        hits += r.final_val_iou >= r.step1_val_iou;
        strict += r.final_val_iou > r.step1_val_iou;
    }
    const double t = seconds_since(t0);
    report("two-step fine-tuning benefit", hits >= 9,
           "final >= step-1 fine val IoU in " + std::to_string(hits) + "/10 seeds (strictly better in " +
               std::to_string(strict) + "), " + fmt(t, 3) + " s");
}

void otsu() {
    Rng rng(108);
    int exact = 0, volumes = 0;
    while (volumes < 100) {
        const Dims3 d{draw(rng, 4, 40), draw(rng, 4, 40), draw(rng, 1, 8)};
        const double lo = uniform(rng, 0, 150), hi = uniform(rng, lo + 10, 255), p = uniform(rng, 0.05, 0.95),
                     s = uniform(rng, 1, 40);
        std::vector<std::uint8_t> v(d.voxel_count());
        for (auto& x : v)
            x = static_cast<std::uint8_t>(std::clamp(std::lround((uniform(rng, 0, 1) < p ? lo : hi) + s * normal(rng)), 0L, 255L));
        const Histogram h = intensity_histogram(GrayVolume(d, std::move(v)));
        const int expected = oracle::exhaustive_otsu(h);
        if (expected < 0) continue; // single-valued volume
        ++volumes;
        exact += otsu_threshold(h) == expected;
    }
    report("Otsu oracle", exact == 100, std::to_string(exact) + "/100 thresholds equal the exhaustive maximum");
}

void checkpoints() {
    oracle::TempDir dir("acceptance");
    Rng rng(109);
    int identical = 0;
    for (Architecture a : {Architecture::unet3d, Architecture::fcdense3d, Architecture::unet2d}) {
        const Model<float> m = Model<float>::build(default_config(a), 7);
        save_checkpoint(m, Provenance{}, dir / std::string(to_string(a)));
        const Model<float> back = model_from_checkpoint<float>(load_checkpoint(dir / std::string(to_string(a))));
        const Shape s = a == Architecture::unet2d ? Shape{2, 1, 32, 32} : Shape{1, 1, 8, 32, 32};
        std::vector<float> xv(shape_numel(s));
        for (float& x : xv) x = static_cast<float>(uniform(rng, 0, 1));
        const Tensor<float> x(s, xv);
        const Tensor<float> y0 = m.forward(x), y1 = back.forward(x);
        identical += y0.numel() == y1.numel() &&
                     std::memcmp(y0.values().data(), y1.values().data(), y0.numel() * sizeof(float)) == 0;
    }

    // A trial resumed at rungs 1 and 2 through state files against one uninterrupted run.
    const Dataset tr = synth_set(31, 3, {32, 32, 4}, 15.0), va = synth_set(32, 1, {32, 32, 4}, 15.0);
    UNetConfig u;
    u.levels = 2;
    u.base_channels = 4;
    TrainingTrialRunner runner(u, tr, va, 4, 11, std::nullopt, "", dir.path());
    Trial t;
    t.id = 0;
    t.config = TrialConfig{2e-3, 16, 0, 4, 2, {true, true, false, true}};
    (void)runner.run(t, 1);
    (void)runner.run(t, 2);
    (void)runner.run(t, 4);
    const TrainResult resumed = runner.result(0);
    const TrainResult direct = train(u, tr, va, make_train_config(t.config, 4, derive_seed(11, std::uint64_t{0})));
    bool same = resumed.history.size() == direct.history.size() && resumed.best.arrays.size() == direct.best.arrays.size();
    for (std::size_t i = 0; same && i < direct.history.size(); ++i)
        same = resumed.history[i].train_loss == direct.history[i].train_loss &&
               resumed.history[i].val_loss == direct.history[i].val_loss &&
               resumed.history[i].val_iou == direct.history[i].val_iou;
    for (std::size_t i = 0; same && i < direct.best.arrays.size(); ++i) same = direct.best.arrays[i].values == resumed.best.arrays[i].values;
    report("checkpoint fidelity", identical == 3 && same,
           std::to_string(identical) + "/3 architectures bitwise after reload; rung-resumed run " +
               (same ? "equals" : "differs from") + " the uninterrupted run");
}

void overlay() {
    oracle::TempDir dir("overlay");
    Rng rng(110);
    int matching = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const int w = draw(rng, 1, 64), h = draw(rng, 1, 64);
        const Slice truth = oracle::random_slice(rng, w, h);
        const Slice pred = uniform_index(rng, 2) ? oracle::perturbed(truth, rng) : oracle::random_slice(rng, w, h);
        write_ppm(render_overlay(pred, truth), dir / "o.ppm");
        const RgbImage img = read_ppm(dir / "o.ppm");
        std::map<Rgb, std::size_t> counts;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) ++counts[img.at(x, y)];
        // Independent confusion counts.
        std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.data.size(); ++i) {
            const bool p = pred.data[i], t = truth.data[i];
            tp += p && t;
            tn += !p && !t;
            fp += p && !t;
            fn += !p && t;
        }
        std::size_t other = 0;
        for (const auto& [c, n] : counts)
            if (c != kTruePositiveColor && c != kTrueNegativeColor && c != kFalsePositiveColor && c != kFalseNegativeColor)
                other += n;
        matching += img.width == w && img.height == h && other == 0 && counts[kTruePositiveColor] == tp &&
                    counts[kTrueNegativeColor] == tn && counts[kFalsePositiveColor] == fp && counts[kFalseNegativeColor] == fn;
    }
    report("overlay correctness", matching == 100, std::to_string(matching) + "/100 PPM color counts equal the confusion counts");
}

} // namespace

int main() {
    criterion("gradient correctness", gradients);
    criterion("2D/3D consistency", consistency_2d_3d);
    criterion("metric oracle equivalence", metric_oracles);
    criterion("patch coverage and stitch identity", patching);
    criterion("ASHA soundness", asha);
    criterion("end-to-end training", end_to_end);
    criterion("two-step fine-tuning benefit", two_step);
    criterion("Otsu oracle", otsu);
    criterion("checkpoint fidelity", checkpoints);
    criterion("overlay correctness", overlay);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
