#pragma once

#include "dendseg/checkpoint.hpp"
#include "dendseg/models.hpp"
#include "dendseg/patching.hpp"
#include "dendseg/volumeio.hpp"

#include <vector>

namespace dendseg {

/// Stacks equally sized patches into a network input: (N,1,D,H,W) for 3D
/// models, (N*D,1,H,W) for the 2D U-Net, which sees every z-slice on its own.
/// Both layouts share one flat buffer.
[[nodiscard]] Tensor<float> make_input_batch(const ModelConfig& config, const std::vector<const FloatVolume*>& patches);

/// Inverse of make_input_batch for a logit tensor.
[[nodiscard]] std::vector<FloatVolume> split_batch(const Tensor<float>& logits, Dims3 patch, std::size_t count);

/// Logits for every patch of the grid, in grid order. Patches are forwarded
/// concurrently when workers > 1; the result does not depend on workers.
[[nodiscard]] std::vector<FloatVolume> predict_patches(const Model<float>& model, const FloatVolume& image,
                                                       const PatchGrid& grid, int workers = 1);

/// Plan, extract, forward and stitch.
[[nodiscard]] LabelVolume segment_volume(const Model<float>& model, const FloatVolume& image, Dims3 patch, Dims3 overlap,
                                         int workers = 1);
[[nodiscard]] LabelVolume segment_volume(const ModelCheckpoint& checkpoint, const GrayVolume& volume, Dims3 patch,
                                         Dims3 overlap, int workers = 1);

} // namespace dendseg
