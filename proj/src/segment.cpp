#include "dendseg/segment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

namespace dendseg {

Tensor<float> make_input_batch(const ModelConfig& config, const std::vector<const FloatVolume*>& patches) {
    if (patches.empty()) fail(ErrorCode::EmptyDataset, "empty patch batch");
    const Dims3 d = patches.front()->dims();
    std::vector<float> values;
    values.reserve(d.voxel_count() * patches.size());
    for (const FloatVolume* p : patches) {
        if (p->dims() != d) fail(ErrorCode::ShapeMismatch, "patches in a batch differ in size");
        values.insert(values.end(), p->data().begin(), p->data().end());
    }
    const int n = static_cast<int>(patches.size());
    Shape shape = spatial_rank(config) == 2 ? Shape{n * d.depth, 1, d.height, d.width} : Shape{n, 1, d.depth, d.height, d.width};
    return Tensor<float>(std::move(shape), std::move(values));
}

std::vector<FloatVolume> split_batch(const Tensor<float>& logits, Dims3 patch, std::size_t count) {
    const std::size_t per = patch.voxel_count();
    if (logits.numel() != per * count)
        fail(ErrorCode::ShapeMismatch, "logits " + shape_string(logits.shape()) + " do not hold " + std::to_string(count) + " patches");
    std::vector<FloatVolume> out;
    out.reserve(count);
    const auto v = logits.values();
    for (std::size_t i = 0; i < count; ++i)
        out.emplace_back(patch, std::vector<float>(v.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                   v.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
    return out;
}

std::vector<FloatVolume> predict_patches(const Model<float>& model, const FloatVolume& image, const PatchGrid& grid,
                                         int workers) {
    if (image.dims() != grid.volume) fail(ErrorCode::GridMismatch, "grid was planned for a different volume");
    std::vector<FloatVolume> out(grid.size());
    auto run_one = [&](std::size_t i) {
        NoGradScope<float> no_grad;
        const FloatVolume patch = crop(image, grid.origin(i), grid.patch);
        out[i] = std::move(split_batch(model.forward(make_input_batch(model.config(), {&patch})), grid.patch, 1).front());
    };
    const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), grid.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_one(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < grid.size() && !failed; i = next++) {
                try {
                    run_one(i);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
}

LabelVolume segment_volume(const Model<float>& model, const FloatVolume& image, Dims3 patch, Dims3 overlap, int workers) {
    const PatchGrid grid = plan_patches(image.dims(), patch, overlap);
    const auto logits = predict_patches(model, image, grid, workers);
    Stitcher s(grid);
    for (std::size_t i = 0; i < logits.size(); ++i) s.add(i, logits[i]);
    return s.labels();
}

LabelVolume segment_volume(const ModelCheckpoint& checkpoint, const GrayVolume& volume, Dims3 patch, Dims3 overlap,
                           int workers) {
    const Model<float> model = model_from_checkpoint<float>(checkpoint);
    return segment_volume(model, volume.normalized(), patch, overlap, workers);
}

} // namespace dendseg
